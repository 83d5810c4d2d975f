//! Teacher-forced forward pass, ancestral sampling and greedy decoding.

use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::corpus::SymId;

use super::params::{bos_row, eos_class, LstmParams, ModelConfig, ModelParams};

const NORM_EPS: f64 = 1e-12;

/// Per-step observables kept for regularization and diagnostics.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Attention distribution over source positions, one row per decoder step.
    pub attention: Vec<Vec<f64>>,
    /// Expected alignment position per decoder step.
    pub positions: Vec<f64>,
    /// Log-probability of the forced target symbol per step (EOS included).
    pub step_logprobs: Vec<f64>,
    /// Weighted embedding context `c` per step.
    pub contexts: Vec<Vec<f64>>,
    /// Combined hidden context per step (before norm scaling).
    pub hidden_contexts: Vec<Vec<f64>>,
}

pub(crate) struct LstmStepCache {
    pub x: Array1<f64>,
    pub h_prev: Array1<f64>,
    pub c_prev: Array1<f64>,
    pub gate_i: Array1<f64>,
    pub gate_f: Array1<f64>,
    pub gate_g: Array1<f64>,
    pub gate_o: Array1<f64>,
    pub c: Array1<f64>,
    pub hc: Array1<f64>,
    pub h: Array1<f64>,
}

pub(crate) fn lstm_step(
    p: &LstmParams,
    x: &Array1<f64>,
    h_prev: &Array1<f64>,
    c_prev: &Array1<f64>,
) -> LstmStepCache {
    let h = h_prev.len();
    let xh = concatenate![Axis(0), x.view(), h_prev.view()];
    let pre = p.w.dot(&xh) + &p.b;
    let gate_i = pre.slice(s![0..h]).mapv(sigmoid);
    let gate_f = pre.slice(s![h..2 * h]).mapv(sigmoid);
    let gate_g = pre.slice(s![2 * h..3 * h]).mapv(f64::tanh);
    let gate_o = pre.slice(s![3 * h..4 * h]).mapv(sigmoid);
    let c = &gate_f * c_prev + &gate_i * &gate_g;
    let hc = c.mapv(f64::tanh);
    let h_new = &gate_o * &hc;
    LstmStepCache {
        x: x.clone(),
        h_prev: h_prev.clone(),
        c_prev: c_prev.clone(),
        gate_i,
        gate_f,
        gate_g,
        gate_o,
        c,
        hc,
        h: h_new,
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Encoder outputs shared across decoder steps.
pub(crate) struct EncoderOut {
    pub ex_rows: Vec<Array1<f64>>,
    pub fwd: Vec<LstmStepCache>,
    pub bwd: Vec<LstmStepCache>,
    /// s_i = [h_fwd; h_bwd], 2h each.
    pub states: Vec<Array1<f64>>,
    /// W_att * s_i, precomputed.
    pub att_states: Vec<Array1<f64>>,
}

pub(crate) fn encode(params: &ModelParams, config: &ModelConfig, x: &[SymId]) -> EncoderOut {
    let h = config.hidden;
    let e_x = params.embed_lost();
    let ex_rows: Vec<Array1<f64>> = x
        .iter()
        .map(|&id| e_x.row(id as usize).to_owned())
        .collect();
    let n = x.len();
    let zero = Array1::zeros(h);

    let mut fwd = Vec::with_capacity(n);
    let mut hp = zero.clone();
    let mut cp = zero.clone();
    for row in ex_rows.iter() {
        let step = lstm_step(&params.enc_fwd, row, &hp, &cp);
        hp = step.h.clone();
        cp = step.c.clone();
        fwd.push(step);
    }

    let mut bwd_rev = Vec::with_capacity(n);
    let mut hp = zero.clone();
    let mut cp = zero;
    for row in ex_rows.iter().rev() {
        let step = lstm_step(&params.enc_bwd, row, &hp, &cp);
        hp = step.h.clone();
        cp = step.c.clone();
        bwd_rev.push(step);
    }
    bwd_rev.reverse();
    let bwd = bwd_rev;

    let states: Vec<Array1<f64>> = (0..n)
        .map(|i| concatenate![Axis(0), fwd[i].h.view(), bwd[i].h.view()])
        .collect();
    let att_states: Vec<Array1<f64>> = states.iter().map(|si| params.w_att.dot(si)).collect();
    EncoderOut {
        ex_rows,
        fwd,
        bwd,
        states,
        att_states,
    }
}

pub(crate) struct DecStepCache {
    pub input_row: usize,
    pub target_class: usize,
    pub lstm: LstmStepCache,
    pub alpha: Array1<f64>,
    pub ctx: Array1<f64>,
    pub c_emb: Array1<f64>,
    pub h_tilde: Array1<f64>,
    pub g: f64,
    pub clamped: bool,
    pub norm_c: f64,
    pub norm_h: f64,
    pub hhat: Array1<f64>,
    pub probs: Array1<f64>,
    pub logp_target: f64,
    pub position: f64,
}

/// One decoder step given a previous-symbol embedding row index.
/// Returns the cache with the full output distribution; the target class is
/// filled in by the caller (teacher forcing) or unused (decoding).
fn decoder_step(
    params: &ModelParams,
    config: &ModelConfig,
    enc: &EncoderOut,
    e_y: &Array2<f64>,
    input_row: usize,
    h_prev: &Array1<f64>,
    c_prev: &Array1<f64>,
) -> DecStepCache {
    let r = config.norm_ratio;
    let x_in = e_y.row(input_row).to_owned();
    let lstm = lstm_step(&params.dec, &x_in, h_prev, c_prev);
    let hd = &lstm.h;

    let n = enc.states.len();
    let mut scores = Array1::zeros(n);
    for i in 0..n {
        scores[i] = hd.dot(&enc.att_states[i]);
    }
    let max = scores.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut alpha = scores.mapv(|v| (v - max).exp());
    let z = alpha.sum();
    alpha /= z;

    let d = config.embed_dim;
    let h = config.hidden;
    let mut ctx = Array1::zeros(2 * h);
    let mut c_emb = Array1::zeros(d);
    let mut position = 0.0;
    for i in 0..n {
        ctx.scaled_add(alpha[i], &enc.states[i]);
        c_emb.scaled_add(alpha[i], &enc.ex_rows[i]);
        position += i as f64 * alpha[i];
    }

    let combined = concatenate![Axis(0), ctx.view(), hd.view()];
    let h_tilde = (params.w_ctx.dot(&combined) + &params.b_ctx).mapv(f64::tanh);

    let norm_c = c_emb.dot(&c_emb).sqrt();
    let norm_h = h_tilde.dot(&h_tilde).sqrt();
    let (g, clamped) = if norm_h < NORM_EPS {
        (1.0, true)
    } else {
        let raw = r * norm_c / norm_h;
        if raw >= 1.0 {
            (1.0, true)
        } else {
            (raw, false)
        }
    };

    let scaled = h_tilde.mapv(|v| g * v);
    let hhat = concatenate![Axis(0), c_emb.view(), scaled.view()];
    let logits = params.w_proj.dot(&hhat) + &params.b_proj;
    let lmax = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exps = logits.mapv(|v| (v - lmax).exp());
    let probs = &exps / exps.sum();

    DecStepCache {
        input_row,
        target_class: 0,
        lstm,
        alpha,
        ctx,
        c_emb,
        h_tilde,
        g,
        clamped,
        norm_c,
        norm_h,
        hhat,
        probs,
        logp_target: 0.0,
        position,
    }
}

pub(crate) struct PairCache {
    pub x: Vec<SymId>,
    pub enc: EncoderOut,
    pub dec: Vec<DecStepCache>,
    pub log_likelihood: f64,
}

/// Teacher-forced forward pass over a (lost, known) pair, caching everything
/// the backward pass needs. EOS is appended to the target; BOS feeds the first
/// decoder step.
pub(crate) fn forward_full(
    params: &ModelParams,
    config: &ModelConfig,
    x: &[SymId],
    y: &[SymId],
) -> PairCache {
    // empty y is legal: the pass reduces to a single EOS prediction step
    assert!(!x.is_empty(), "source sequence must be nonempty");
    let enc = encode(params, config, x);
    let e_y = params.embed_known();
    let h = config.hidden;
    let n_known = params.n_known;

    let mut dec = Vec::with_capacity(y.len() + 1);
    let mut hp = Array1::zeros(h);
    let mut cp = Array1::zeros(h);
    let mut ll = 0.0;
    for t in 0..=y.len() {
        let input_row = if t == 0 {
            bos_row(n_known)
        } else {
            y[t - 1] as usize
        };
        let target = if t == y.len() {
            eos_class(n_known)
        } else {
            y[t] as usize
        };
        let mut step = decoder_step(params, config, &enc, &e_y, input_row, &hp, &cp);
        step.target_class = target;
        step.logp_target = step.probs[target].max(f64::MIN_POSITIVE).ln();
        ll += step.logp_target;
        hp = step.lstm.h.clone();
        cp = step.lstm.c.clone();
        dec.push(step);
    }
    PairCache {
        x: x.to_vec(),
        enc,
        dec,
        log_likelihood: ll,
    }
}

impl PairCache {
    pub fn trace(&self) -> ForwardTrace {
        ForwardTrace {
            attention: self.dec.iter().map(|s| s.alpha.to_vec()).collect(),
            positions: self.dec.iter().map(|s| s.position).collect(),
            step_logprobs: self.dec.iter().map(|s| s.logp_target).collect(),
            contexts: self.dec.iter().map(|s| s.c_emb.to_vec()).collect(),
            hidden_contexts: self.dec.iter().map(|s| s.h_tilde.to_vec()).collect(),
        }
    }
}

/// Teacher-forced log-likelihood `log Pr(y|x)` with the populated trace.
pub fn forward(
    params: &ModelParams,
    config: &ModelConfig,
    x: &[SymId],
    y: &[SymId],
) -> (f64, ForwardTrace) {
    let cache = forward_full(params, config, x, y);
    let trace = cache.trace();
    (cache.log_likelihood, trace)
}

/// Greedy decode output; `truncated` flags hitting the length cap without EOS.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoded {
    pub symbols: Vec<SymId>,
    pub truncated: bool,
}

fn decode_with(
    params: &ModelParams,
    config: &ModelConfig,
    enc: &EncoderOut,
    e_y: &Array2<f64>,
    mut pick: impl FnMut(&Array1<f64>) -> usize,
) -> Decoded {
    let h = config.hidden;
    let n_known = params.n_known;
    let eos = eos_class(n_known);
    let mut hp = Array1::zeros(h);
    let mut cp = Array1::zeros(h);
    let mut prev_row = bos_row(n_known);
    let mut out = Vec::new();
    for _ in 0..config.max_decode_len {
        let step = decoder_step(params, config, enc, e_y, prev_row, &hp, &cp);
        let class = pick(&step.probs);
        if class == eos {
            return Decoded {
                symbols: out,
                truncated: false,
            };
        }
        out.push(class as SymId);
        prev_row = class;
        hp = step.lstm.h.clone();
        cp = step.lstm.c.clone();
    }
    Decoded {
        symbols: out,
        truncated: true,
    }
}

/// Argmax decoding until EOS or the length cap.
pub fn greedy_decode(params: &ModelParams, config: &ModelConfig, x: &[SymId]) -> Decoded {
    assert!(!x.is_empty());
    let enc = encode(params, config, x);
    let e_y = params.embed_known();
    decode_with(params, config, &enc, &e_y, |probs| {
        probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap()
    })
}

/// `m` ancestral samples from the decoder distribution; deterministic given
/// the seed. The encoder pass is shared across samples.
pub fn sample(
    params: &ModelParams,
    config: &ModelConfig,
    x: &[SymId],
    m: usize,
    seed: u64,
) -> Vec<Vec<SymId>> {
    assert!(m >= 1 && !x.is_empty());
    let enc = encode(params, config, x);
    let e_y = params.embed_known();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..m)
        .map(|_| {
            decode_with(params, config, &enc, &e_y, |probs| {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for (i, &p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return i;
                    }
                }
                probs.len() - 1
            })
            .symbols
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seq2seq::params::init_params;

    fn tiny() -> ModelConfig {
        ModelConfig {
            embed_dim: 4,
            hidden: 4,
            universal: 5,
            max_decode_len: 8,
            ..Default::default()
        }
    }

    #[test]
    fn uniform_output_when_projection_zero() {
        let cfg = tiny();
        let mut p = init_params(&cfg, 3, 6, 0);
        p.w_proj.fill(0.0);
        p.b_proj.fill(0.0);
        let (ll, _) = forward(&p, &cfg, &[0, 1, 2], &[3, 4]);
        // (L + 1) steps, each uniform over n_known + 1 classes
        let expected = -3.0 * (7.0f64).ln();
        assert!((ll - expected).abs() < 1e-9, "{ll} vs {expected}");
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let cfg = tiny();
        let p = init_params(&cfg, 4, 5, 1);
        let (_, trace) = forward(&p, &cfg, &[0, 1, 2, 3], &[0, 2, 4]);
        for row in &trace.attention {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&a| a >= 0.0));
        }
        for &pos in &trace.positions {
            assert!((0.0..=3.0).contains(&pos));
        }
    }

    #[test]
    fn norm_control_clamp_arithmetic() {
        // g = min(r * |c| / |h~|, 1)
        let r: f64 = 0.2;
        let g = (r * 10.0 / 100.0).min(1.0);
        assert!((g - 0.02).abs() < 1e-15);
        let g = (r * 100.0 / 10.0).min(1.0);
        assert_eq!(g, 1.0);
    }

    #[test]
    fn norm_control_saturation_invariant() {
        // once |h~| is at or below r|c|, g = 1 and scaling is the identity;
        // above the threshold, g*|h~| = r|c| regardless of |h~|
        let cfg = tiny();
        let p = init_params(&cfg, 3, 4, 2);
        let cache = forward_full(&p, &cfg, &[0, 1], &[1, 2]);
        for step in &cache.dec {
            let scaled_norm = step.g * step.norm_h;
            if step.clamped {
                assert!(step.norm_h <= cfg.norm_ratio * step.norm_c + 1e-9);
            } else {
                assert!((scaled_norm - cfg.norm_ratio * step.norm_c).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn sampling_deterministic_given_seed() {
        let cfg = tiny();
        let p = init_params(&cfg, 4, 5, 3);
        let a = sample(&p, &cfg, &[0, 1, 2], 5, 99);
        let b = sample(&p, &cfg, &[0, 1, 2], 5, 99);
        assert_eq!(a, b);
    }

    #[test]
    fn deterministic_model_samples_identical() {
        let cfg = tiny();
        let mut p = init_params(&cfg, 2, 3, 4);
        // huge bias on one class each step makes the decoder deterministic
        p.w_proj.fill(0.0);
        p.b_proj.fill(-100.0);
        p.b_proj[1] = 100.0;
        // class 1 forever -> runs to max length (truncated)
        let g = greedy_decode(&p, &cfg, &[0, 1]);
        assert!(g.truncated);
        assert_eq!(g.symbols, vec![1; cfg.max_decode_len]);
        let samples = sample(&p, &cfg, &[0, 1], 4, 7);
        for s in samples {
            assert_eq!(s, g.symbols);
        }
    }

    #[test]
    fn greedy_stops_at_eos() {
        let cfg = tiny();
        let mut p = init_params(&cfg, 2, 3, 4);
        p.w_proj.fill(0.0);
        p.b_proj.fill(-100.0);
        p.b_proj[3] = 100.0; // EOS class for n_known = 3
        let g = greedy_decode(&p, &cfg, &[0, 1]);
        assert!(!g.truncated);
        assert!(g.symbols.is_empty());
    }
}
