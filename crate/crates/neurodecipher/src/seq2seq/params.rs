//! Model parameters, initialization and checkpoint serialization.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};

/// Monotonic alignment regularizer variant. `Omega2` fits syllabic scripts
/// where one lost symbol corresponds to two known symbols.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegVariant {
    Omega1,
    Omega2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Character embedding dimensionality (d).
    pub embed_dim: usize,
    /// LSTM hidden size per direction.
    pub hidden: usize,
    /// Universal character inventory size.
    pub universal: usize,
    /// Alignment regularization weight.
    pub lambda: f64,
    /// Norm-control ratio r < 1: the scaled context vector norm may not exceed
    /// r times the embedding-context norm.
    pub norm_ratio: f64,
    pub regularizer: RegVariant,
    /// Monte-Carlo sample count for expected edit distance.
    pub sample_count: usize,
    pub max_decode_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 250,
            hidden: 250,
            universal: 50,
            lambda: 0.5,
            norm_ratio: 0.2,
            regularizer: RegVariant::Omega1,
            sample_count: 10,
            max_decode_len: 25,
        }
    }
}

impl ModelConfig {
    /// Syllabic preset: bigger universal inventory, two-step regularizer.
    pub fn syllabic(mut self) -> Self {
        self.universal = self.universal.max(100);
        self.regularizer = RegVariant::Omega2;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.hidden == 0 || self.universal == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if !(self.norm_ratio > 0.0 && self.norm_ratio < 1.0) {
            return Err(Error::Config("norm_ratio must lie in (0, 1)".into()));
        }
        if self.lambda < 0.0 {
            return Err(Error::Config("lambda must be nonnegative".into()));
        }
        if self.sample_count == 0 || self.max_decode_len == 0 {
            return Err(Error::Config("sample_count and max_decode_len must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    /// Gate weights, rows ordered [input; forget; cell; output], shape 4h x (in + h).
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl LstmParams {
    fn init(rng: &mut ChaCha20Rng, input: usize, hidden: usize) -> Self {
        LstmParams {
            w: uniform2(rng, 4 * hidden, input + hidden),
            b: uniform1(rng, 4 * hidden),
        }
    }
}

/// All learnable tensors of the cognate model.
///
/// Character embeddings are linear combinations of universal embeddings:
/// `E_x = W_x U`, `E_y = W_y U`. The known-side table carries two extra rows
/// (EOS, BOS) after the corpus symbols; the output layer predicts the corpus
/// symbols plus EOS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub n_lost: usize,
    pub n_known: usize,
    /// Universal embedding matrix, n_u x d.
    pub u: Array2<f64>,
    /// Lost-language weights, n_lost x n_u.
    pub w_x: Array2<f64>,
    /// Known-language weights, (n_known + 2) x n_u.
    pub w_y: Array2<f64>,
    pub enc_fwd: LstmParams,
    pub enc_bwd: LstmParams,
    pub dec: LstmParams,
    /// Bilinear attention, h x 2h.
    pub w_att: Array2<f64>,
    /// Context combiner, h x 3h.
    pub w_ctx: Array2<f64>,
    pub b_ctx: Array1<f64>,
    /// Projection from the residual output to logits, (n_known + 1) x (d + h).
    pub w_proj: Array2<f64>,
    pub b_proj: Array1<f64>,
}

fn uniform2(rng: &mut ChaCha20Rng, r: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_fn((r, c), |_| rng.gen_range(-0.1..0.1))
}

fn uniform2_scaled(rng: &mut ChaCha20Rng, r: usize, c: usize, lim: f64) -> Array2<f64> {
    Array2::from_shape_fn((r, c), |_| rng.gen_range(-lim..lim))
}

fn uniform1(rng: &mut ChaCha20Rng, n: usize) -> Array1<f64> {
    Array1::from_shape_fn(n, |_| rng.gen_range(-0.1..0.1))
}

/// Index of the EOS output class and of the EOS/BOS embedding rows.
pub fn eos_class(n_known: usize) -> usize {
    n_known
}

pub fn bos_row(n_known: usize) -> usize {
    n_known + 1
}

/// Fresh parameters, uniform in [-0.1, 0.1]; deterministic given the seed.
pub fn init_params(config: &ModelConfig, n_lost: usize, n_known: usize, seed: u64) -> ModelParams {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let d = config.embed_dim;
    let h = config.hidden;
    let n_u = config.universal;
    ModelParams {
        n_lost,
        n_known,
        u: uniform2_scaled(&mut rng, n_u, d, 0.5),
        w_x: uniform2_scaled(&mut rng, n_lost, n_u, 0.5),
        w_y: uniform2_scaled(&mut rng, n_known + 2, n_u, 0.5),
        enc_fwd: LstmParams::init(&mut rng, d, h),
        enc_bwd: LstmParams::init(&mut rng, d, h),
        dec: LstmParams::init(&mut rng, d, h),
        w_att: uniform2(&mut rng, h, 2 * h),
        w_ctx: uniform2(&mut rng, h, 3 * h),
        b_ctx: uniform1(&mut rng, h),
        w_proj: uniform2(&mut rng, n_known + 1, d + h),
        b_proj: uniform1(&mut rng, n_known + 1),
    }
}

impl ModelParams {
    /// Lost-language embedding matrix `W_x U`.
    pub fn embed_lost(&self) -> Array2<f64> {
        self.w_x.dot(&self.u)
    }

    /// Known-language embedding matrix `W_y U` (includes EOS/BOS rows).
    pub fn embed_known(&self) -> Array2<f64> {
        self.w_y.dot(&self.u)
    }

    pub fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("u", self.u.as_slice().unwrap()),
            ("w_x", self.w_x.as_slice().unwrap()),
            ("w_y", self.w_y.as_slice().unwrap()),
            ("enc_fwd.w", self.enc_fwd.w.as_slice().unwrap()),
            ("enc_fwd.b", self.enc_fwd.b.as_slice().unwrap()),
            ("enc_bwd.w", self.enc_bwd.w.as_slice().unwrap()),
            ("enc_bwd.b", self.enc_bwd.b.as_slice().unwrap()),
            ("dec.w", self.dec.w.as_slice().unwrap()),
            ("dec.b", self.dec.b.as_slice().unwrap()),
            ("w_att", self.w_att.as_slice().unwrap()),
            ("w_ctx", self.w_ctx.as_slice().unwrap()),
            ("b_ctx", self.b_ctx.as_slice().unwrap()),
            ("w_proj", self.w_proj.as_slice().unwrap()),
            ("b_proj", self.b_proj.as_slice().unwrap()),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        vec![
            ("u", self.u.as_slice_mut().unwrap()),
            ("w_x", self.w_x.as_slice_mut().unwrap()),
            ("w_y", self.w_y.as_slice_mut().unwrap()),
            ("enc_fwd.w", self.enc_fwd.w.as_slice_mut().unwrap()),
            ("enc_fwd.b", self.enc_fwd.b.as_slice_mut().unwrap()),
            ("enc_bwd.w", self.enc_bwd.w.as_slice_mut().unwrap()),
            ("enc_bwd.b", self.enc_bwd.b.as_slice_mut().unwrap()),
            ("dec.w", self.dec.w.as_slice_mut().unwrap()),
            ("dec.b", self.dec.b.as_slice_mut().unwrap()),
            ("w_att", self.w_att.as_slice_mut().unwrap()),
            ("w_ctx", self.w_ctx.as_slice_mut().unwrap()),
            ("b_ctx", self.b_ctx.as_slice_mut().unwrap()),
            ("w_proj", self.w_proj.as_slice_mut().unwrap()),
            ("b_proj", self.b_proj.as_slice_mut().unwrap()),
        ]
    }

    /// Same shapes, all zeros. Used for gradient accumulators.
    pub fn zeroed(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &Self, scale: f64) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b.iter()) {
                *x += scale * y;
            }
        }
    }

    /// Name of the first tensor holding a non-finite entry, if any.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.tensors()
            .into_iter()
            .find(|(_, t)| t.iter().any(|v| !v.is_finite()))
            .map(|(name, _)| name)
    }

    pub fn flat_len(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.flat_len());
        for (_, t) in self.tensors() {
            out.extend_from_slice(t);
        }
        out
    }

    pub fn set_from_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for (_, t) in self.tensors_mut() {
            t.copy_from_slice(&flat[offset..offset + t.len()]);
            offset += t.len();
        }
        assert_eq!(offset, flat.len());
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Loaded parameter container.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub version: u32,
    pub config: ModelConfig,
    pub params: ModelParams,
}

/// On-disk form (JSON). Weights are stored as raw f64 bit patterns so the
/// roundtrip is exact regardless of float formatting.
#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    config: ModelConfig,
    n_lost: usize,
    n_known: usize,
    weights: Vec<u64>,
}

pub fn save_checkpoint(path: &Path, config: &ModelConfig, params: &ModelParams) -> Result<()> {
    let file = CheckpointFile {
        version: CHECKPOINT_VERSION,
        config: config.clone(),
        n_lost: params.n_lost,
        n_known: params.n_known,
        weights: params.to_flat().iter().map(|v| v.to_bits()).collect(),
    };
    let json = serde_json::to_string(&file).map_err(|e| Error::Serde(e.to_string()))?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path)?;
    let file: CheckpointFile =
        serde_json::from_str(&text).map_err(|e| Error::Serde(e.to_string()))?;
    if file.version != CHECKPOINT_VERSION {
        return Err(Error::Input(format!(
            "unsupported checkpoint version {}",
            file.version
        )));
    }
    file.config.validate()?;
    let mut params = init_params(&file.config, file.n_lost, file.n_known, 0);
    if file.weights.len() != params.flat_len() {
        return Err(Error::Input(format!(
            "checkpoint holds {} weights, model needs {}",
            file.weights.len(),
            params.flat_len()
        )));
    }
    let flat: Vec<f64> = file.weights.iter().map(|&b| f64::from_bits(b)).collect();
    params.set_from_flat(&flat);
    Ok(Checkpoint {
        version: file.version,
        config: file.config,
        params,
    })
}
