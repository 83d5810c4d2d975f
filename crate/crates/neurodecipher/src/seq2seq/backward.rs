//! Exact reverse-mode gradients of the flow-weighted mixture loss, plus the
//! monotonic alignment regularizers.

use ndarray::{s, Array1, Array2};
use rayon::prelude::*;

use crate::corpus::SymId;
use crate::error::{Error, Result};

use super::forward::{forward_full, LstmStepCache, PairCache};
use super::params::{LstmParams, ModelConfig, ModelParams, RegVariant};

/// One flow-weighted training pair. Pairs sharing a `group` id belong to the
/// same known word and form one mixture term.
#[derive(Debug, Clone, Copy)]
pub struct TrainingPair<'a> {
    pub x: &'a [SymId],
    pub y: &'a [SymId],
    pub flow: f64,
    pub group: usize,
}

/// Monotonic alignment penalty over expected positions.
///
/// Omega1 penalizes any step where the expected position fails to advance by
/// exactly one; Omega2 compares against the position two steps back, matching
/// syllabic scripts.
pub fn regularizer(positions: &[f64], variant: RegVariant) -> f64 {
    assert!(!positions.is_empty());
    let lag = match variant {
        RegVariant::Omega1 => 1,
        RegVariant::Omega2 => 2,
    };
    positions
        .windows(lag + 1)
        .map(|w| {
            let e = w[lag] - w[0] - 1.0;
            e * e
        })
        .sum()
}

/// d regularizer / d position, per step.
fn regularizer_grad(positions: &[f64], variant: RegVariant) -> Vec<f64> {
    let lag = match variant {
        RegVariant::Omega1 => 1,
        RegVariant::Omega2 => 2,
    };
    let mut grad = vec![0.0; positions.len()];
    for t in lag..positions.len() {
        let e = positions[t] - positions[t - lag] - 1.0;
        grad[t] += 2.0 * e;
        grad[t - lag] -= 2.0 * e;
    }
    grad
}

fn outer_acc(g: &mut Array2<f64>, u: &Array1<f64>, v: &Array1<f64>) {
    for (r, &uv) in u.iter().enumerate() {
        if uv == 0.0 {
            continue;
        }
        let mut row = g.row_mut(r);
        row.scaled_add(uv, v);
    }
}

#[allow(clippy::too_many_arguments)]
fn lstm_backward(
    p: &LstmParams,
    cache: &LstmStepCache,
    dh: &Array1<f64>,
    dc_in: &Array1<f64>,
    gw: &mut Array2<f64>,
    gb: &mut Array1<f64>,
) -> (Array1<f64>, Array1<f64>, Array1<f64>) {
    let h = dh.len();
    let do_ = dh * &cache.hc;
    let dhc = dh * &cache.gate_o;
    let dc = dc_in + &(dhc * cache.hc.mapv(|v| 1.0 - v * v));
    let di = &dc * &cache.gate_g;
    let dg = &dc * &cache.gate_i;
    let df = &dc * &cache.c_prev;
    let dc_prev = &dc * &cache.gate_f;

    let mut dpre = Array1::zeros(4 * h);
    dpre.slice_mut(s![0..h])
        .assign(&(&di * &cache.gate_i.mapv(|v| v * (1.0 - v))));
    dpre.slice_mut(s![h..2 * h])
        .assign(&(&df * &cache.gate_f.mapv(|v| v * (1.0 - v))));
    dpre.slice_mut(s![2 * h..3 * h])
        .assign(&(&dg * &cache.gate_g.mapv(|v| 1.0 - v * v)));
    dpre.slice_mut(s![3 * h..4 * h])
        .assign(&(&do_ * &cache.gate_o.mapv(|v| v * (1.0 - v))));

    let d_in = cache.x.len();
    // gw += dpre (x) [x; h_prev]
    for (r, &dv) in dpre.iter().enumerate() {
        if dv == 0.0 {
            continue;
        }
        let mut row = gw.row_mut(r);
        row.slice_mut(s![0..d_in]).scaled_add(dv, &cache.x);
        row.slice_mut(s![d_in..]).scaled_add(dv, &cache.h_prev);
    }
    *gb += &dpre;

    let dxh = p.w.t().dot(&dpre);
    let dx = dxh.slice(s![0..d_in]).to_owned();
    let dh_prev = dxh.slice(s![d_in..]).to_owned();
    (dx, dh_prev, dc_prev)
}

/// Accumulates gradients for a single pair into `grads`.
///
/// `d_ll` is the loss derivative with respect to the pair's log-likelihood
/// (negative mixture weight), `d_omega` with respect to its regularizer value.
fn backward_pair(
    params: &ModelParams,
    config: &ModelConfig,
    cache: &PairCache,
    d_ll: f64,
    d_omega: f64,
    grads: &mut ModelParams,
) {
    let d = config.embed_dim;
    let h = config.hidden;
    let r = config.norm_ratio;
    let n_src = cache.enc.states.len();

    let positions: Vec<f64> = cache.dec.iter().map(|s| s.position).collect();
    let dpos = regularizer_grad(&positions, config.regularizer);

    let mut ds_states: Vec<Array1<f64>> = vec![Array1::zeros(2 * h); n_src];
    let mut datt_states: Vec<Array1<f64>> = vec![Array1::zeros(h); n_src];
    let mut dex: Vec<Array1<f64>> = vec![Array1::zeros(d); n_src];
    let mut dey: Vec<(usize, Array1<f64>)> = Vec::with_capacity(cache.dec.len());

    let mut dh_carry = Array1::zeros(h);
    let mut dc_carry = Array1::zeros(h);

    for (t, step) in cache.dec.iter().enumerate().rev() {
        // softmax cross-entropy
        let mut dz = step.probs.mapv(|p| -d_ll * p);
        dz[step.target_class] += d_ll;
        outer_acc(&mut grads.w_proj, &dz, &step.hhat);
        grads.b_proj += &dz;
        let dhhat = params.w_proj.t().dot(&dz);
        let mut dc_emb = dhhat.slice(s![0..d]).to_owned();
        let dgh = dhhat.slice(s![d..]).to_owned();

        // norm-control path
        let mut dh_tilde = step.h_tilde.mapv(|v| v * 0.0);
        dh_tilde.scaled_add(step.g, &dgh);
        if !step.clamped && step.norm_c > 1e-12 {
            let dg = dgh.dot(&step.h_tilde);
            dc_emb.scaled_add(dg * r / (step.norm_c * step.norm_h), &step.c_emb);
            dh_tilde.scaled_add(
                -dg * r * step.norm_c / (step.norm_h * step.norm_h * step.norm_h),
                &step.h_tilde,
            );
        }

        // tanh combiner
        let dpre_ctx = &dh_tilde * &step.h_tilde.mapv(|v| 1.0 - v * v);
        // combined = [ctx; hd]
        for (row, &dv) in dpre_ctx.iter().enumerate() {
            if dv == 0.0 {
                continue;
            }
            let mut grow = grads.w_ctx.row_mut(row);
            grow.slice_mut(s![0..2 * h]).scaled_add(dv, &step.ctx);
            grow.slice_mut(s![2 * h..]).scaled_add(dv, &step.lstm.h);
        }
        grads.b_ctx += &dpre_ctx;
        let dcombined = params.w_ctx.t().dot(&dpre_ctx);
        let dctx = dcombined.slice(s![0..2 * h]).to_owned();
        let mut dhd = dcombined.slice(s![2 * h..]).to_owned();

        // attention
        let mut dalpha = Array1::zeros(n_src);
        for i in 0..n_src {
            dalpha[i] = dc_emb.dot(&cache.enc.ex_rows[i])
                + dctx.dot(&cache.enc.states[i])
                + d_omega * dpos[t] * i as f64;
            ds_states[i].scaled_add(step.alpha[i], &dctx);
            dex[i].scaled_add(step.alpha[i], &dc_emb);
        }
        let mix: f64 = step
            .alpha
            .iter()
            .zip(dalpha.iter())
            .map(|(&a, &da)| a * da)
            .sum();
        for i in 0..n_src {
            let dscore = step.alpha[i] * (dalpha[i] - mix);
            if dscore != 0.0 {
                dhd.scaled_add(dscore, &cache.enc.att_states[i]);
                datt_states[i].scaled_add(dscore, &step.lstm.h);
            }
        }

        // decoder LSTM step
        let dh_total = &dhd + &dh_carry;
        let (dx, dh_prev, dc_prev) = lstm_backward(
            &params.dec,
            &step.lstm,
            &dh_total,
            &dc_carry,
            &mut grads.dec.w,
            &mut grads.dec.b,
        );
        dey.push((step.input_row, dx));
        dh_carry = dh_prev;
        dc_carry = dc_prev;
    }

    // attention transform: att_s[i] = W_att s_i
    for i in 0..n_src {
        outer_acc(&mut grads.w_att, &datt_states[i], &cache.enc.states[i]);
        ds_states[i] += &params.w_att.t().dot(&datt_states[i]);
    }

    // encoder forward direction (BPTT right-to-left)
    let mut dh_carry = Array1::zeros(h);
    let mut dc_carry = Array1::zeros(h);
    for i in (0..n_src).rev() {
        let dh_total = &dh_carry + &ds_states[i].slice(s![0..h]);
        let (dx, dh_prev, dc_prev) = lstm_backward(
            &params.enc_fwd,
            &cache.enc.fwd[i],
            &dh_total,
            &dc_carry,
            &mut grads.enc_fwd.w,
            &mut grads.enc_fwd.b,
        );
        dex[i] += &dx;
        dh_carry = dh_prev;
        dc_carry = dc_prev;
    }

    // encoder backward direction (recurrence runs right-to-left, so BPTT
    // visits positions left-to-right)
    let mut dh_carry = Array1::zeros(h);
    let mut dc_carry = Array1::zeros(h);
    for i in 0..n_src {
        let dh_total = &dh_carry + &ds_states[i].slice(s![h..2 * h]);
        let (dx, dh_prev, dc_prev) = lstm_backward(
            &params.enc_bwd,
            &cache.enc.bwd[i],
            &dh_total,
            &dc_carry,
            &mut grads.enc_bwd.w,
            &mut grads.enc_bwd.b,
        );
        dex[i] += &dx;
        dh_carry = dh_prev;
        dc_carry = dc_prev;
    }

    // embedding factorization: E = W U
    for (i, drow) in dex.iter().enumerate() {
        let sym = cache.x[i] as usize;
        let gw_row = params.u.dot(drow);
        grads.w_x.row_mut(sym).scaled_add(1.0, &gw_row);
        outer_acc(&mut grads.u, &params.w_x.row(sym).to_owned(), drow);
    }
    for (row, drow) in &dey {
        let gw_row = params.u.dot(drow);
        grads.w_y.row_mut(*row).scaled_add(1.0, &gw_row);
        outer_acc(&mut grads.u, &params.w_y.row(*row).to_owned(), drow);
    }
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + terms.iter().map(|&t| (t - max).exp()).sum::<f64>().ln()
}

struct Mixture<'a, 'b> {
    pairs: Vec<(&'a TrainingPair<'b>, PairCache)>,
    lse: f64,
}

/// Forward passes for every positive-flow pair, grouped per known word.
fn forward_groups<'a, 'b>(
    params: &ModelParams,
    config: &ModelConfig,
    pairs: &'a [TrainingPair<'b>],
) -> Vec<Mixture<'a, 'b>> {
    let mut groups: std::collections::BTreeMap<usize, Vec<&TrainingPair>> =
        std::collections::BTreeMap::new();
    for p in pairs {
        if p.flow > 0.0 {
            groups.entry(p.group).or_default().push(p);
        }
    }
    let flat: Vec<&TrainingPair> = groups.values().flatten().copied().collect();
    let mut caches: Vec<PairCache> = flat
        .par_iter()
        .map(|p| forward_full(params, config, p.x, p.y))
        .collect();

    let mut out = Vec::with_capacity(groups.len());
    let mut iter = caches.drain(..);
    for members in groups.values() {
        let pairs: Vec<(&TrainingPair, PairCache)> = members
            .iter()
            .map(|&p| (p, iter.next().unwrap()))
            .collect();
        let terms: Vec<f64> = pairs
            .iter()
            .map(|(p, c)| p.flow.ln() + c.log_likelihood)
            .collect();
        let lse = log_sum_exp(&terms);
        out.push(Mixture { pairs, lse });
    }
    out
}

/// Flow-weighted mixture loss over a batch: for each known word,
/// `-log sum_i f_ij Pr(y_j | x_i)` (in log domain), plus the alignment
/// regularizer of every contributing pair scaled by `lambda` and its flow.
pub fn loss(params: &ModelParams, config: &ModelConfig, pairs: &[TrainingPair]) -> f64 {
    let mut total = 0.0;
    for mix in forward_groups(params, config, pairs) {
        total += -mix.lse;
        for (p, cache) in &mix.pairs {
            let positions: Vec<f64> = cache.dec.iter().map(|s| s.position).collect();
            total += config.lambda * p.flow * regularizer(&positions, config.regularizer);
        }
    }
    total
}

/// Loss and exact gradients for a batch. Errors if any gradient entry is
/// non-finite.
pub fn gradients(
    params: &ModelParams,
    config: &ModelConfig,
    pairs: &[TrainingPair],
) -> Result<(f64, ModelParams)> {
    let mut grads = params.zeroed();
    let mut total = 0.0;
    for mix in forward_groups(params, config, pairs) {
        total += -mix.lse;
        for (p, cache) in &mix.pairs {
            let weight = (p.flow.ln() + cache.log_likelihood - mix.lse).exp();
            let positions: Vec<f64> = cache.dec.iter().map(|s| s.position).collect();
            total += config.lambda * p.flow * regularizer(&positions, config.regularizer);
            backward_pair(params, config, cache, -weight, config.lambda * p.flow, &mut grads);
        }
    }
    if let Some(tensor) = grads.first_non_finite() {
        return Err(Error::Numeric {
            tensor: tensor.to_string(),
        });
    }
    Ok((total, grads))
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
            ..Default::default()
        }
    }

    #[test]
    fn omega1_examples() {
        assert_eq!(regularizer(&[0.0, 1.0, 2.0, 3.0], RegVariant::Omega1), 0.0);
        assert_eq!(regularizer(&[0.0, 0.0], RegVariant::Omega1), 1.0);
    }

    #[test]
    fn omega2_two_steps_per_symbol() {
        let p = [0.0, 0.0, 1.0, 1.0, 2.0, 2.0];
        assert_eq!(regularizer(&p, RegVariant::Omega2), 0.0);
        assert!(regularizer(&p, RegVariant::Omega1) > 0.0);
    }

    #[test]
    fn zero_flow_means_zero_loss_and_gradients() {
        let cfg = tiny();
        let p = init_params(&cfg, 3, 4, 0);
        let x = [0u32, 1, 2];
        let y = [0u32, 3];
        let batch = [TrainingPair { x: &x, y: &y, flow: 0.0, group: 0 }];
        assert_eq!(loss(&p, &cfg, &batch), 0.0);
        let (l, g) = gradients(&p, &cfg, &batch).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.to_flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_source_mixture_matches_direct_arithmetic() {
        let cfg = ModelConfig { lambda: 0.0, ..tiny() };
        let p = init_params(&cfg, 4, 4, 3);
        let x1 = [0u32, 1];
        let x2 = [2u32, 3];
        let y = [1u32, 2];
        let (l1, _) = super::super::forward::forward(&p, &cfg, &x1, &y);
        let (l2, _) = super::super::forward::forward(&p, &cfg, &x2, &y);
        let batch = [
            TrainingPair { x: &x1, y: &y, flow: 0.5, group: 0 },
            TrainingPair { x: &x2, y: &y, flow: 0.5, group: 0 },
        ];
        let expected = -(0.5 * l1.exp() + 0.5 * l2.exp()).ln();
        assert!((loss(&p, &cfg, &batch) - expected).abs() < 1e-9);
    }

    #[test]
    fn single_pair_loss_is_nll_plus_reg() {
        let cfg = tiny();
        let p = init_params(&cfg, 3, 4, 1);
        let x = [0u32, 1, 2];
        let y = [2u32, 0];
        let (ll, trace) = super::super::forward::forward(&p, &cfg, &x, &y);
        let omega = regularizer(&trace.positions, cfg.regularizer);
        let batch = [TrainingPair { x: &x, y: &y, flow: 1.0, group: 0 }];
        let expected = -ll + cfg.lambda * omega;
        assert!((loss(&p, &cfg, &batch) - expected).abs() < 1e-9);
        assert!(expected >= 0.0);
    }

    /// Central finite differences on a random subset of parameters.
    fn check_gradients(seed: u64, lambda: f64, probes: usize) {
        use rand::Rng;
        use rand::SeedableRng;
        let cfg = ModelConfig { lambda, ..tiny() };
        let params = init_params(&cfg, 4, 5, seed);
        let x1 = [0u32, 1, 2, 3];
        let x2 = [3u32, 0];
        let y1 = [1u32, 4, 2];
        let y2 = [0u32];
        let batch = [
            TrainingPair { x: &x1, y: &y1, flow: 0.7, group: 0 },
            TrainingPair { x: &x2, y: &y1, flow: 0.3, group: 0 },
            TrainingPair { x: &x1, y: &y2, flow: 1.0, group: 1 },
        ];
        let (_, grads) = gradients(&params, &cfg, &batch).unwrap();
        let flat_g = grads.to_flat();
        let flat_p = params.to_flat();
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed ^ 0xabcd);
        let eps = 1e-5;
        for _ in 0..probes {
            let idx = rng.gen_range(0..flat_p.len());
            let mut plus = flat_p.clone();
            plus[idx] += eps;
            let mut minus = flat_p.clone();
            minus[idx] -= eps;
            let mut pp = params.clone();
            pp.set_from_flat(&plus);
            let lp = loss(&pp, &cfg, &batch);
            pp.set_from_flat(&minus);
            let lm = loss(&pp, &cfg, &batch);
            let fd = (lp - lm) / (2.0 * eps);
            let g = flat_g[idx];
            let denom = g.abs().max(fd.abs()).max(1e-6);
            assert!(
                ((g - fd) / denom).abs() < 1e-3,
                "idx {idx}: analytic {g} vs fd {fd}"
            );
        }
    }

    #[test]
    fn gradient_check_with_regularizer() {
        check_gradients(11, 0.5, 60);
    }

    #[test]
    fn gradient_check_without_regularizer() {
        check_gradients(12, 0.0, 60);
    }

    #[test]
    fn lambda_only_affects_regularizer_path() {
        // with a single pair and fixed params, the loss difference between
        // lambda = 0 and lambda > 0 is exactly lambda * Omega
        let cfg0 = ModelConfig { lambda: 0.0, ..tiny() };
        let cfg1 = ModelConfig { lambda: 0.7, ..tiny() };
        let p = init_params(&cfg0, 3, 4, 9);
        let x = [0u32, 1, 2];
        let y = [3u32, 1];
        let batch = [TrainingPair { x: &x, y: &y, flow: 1.0, group: 0 }];
        let (_, trace) = super::super::forward::forward(&p, &cfg0, &x, &y);
        let omega = regularizer(&trace.positions, cfg0.regularizer);
        let d = loss(&p, &cfg1, &batch) - loss(&p, &cfg0, &batch);
        assert!((d - 0.7 * omega).abs() < 1e-9);
    }
}
