//! Character-level encoder-decoder cognate model: universal embeddings,
//! bilinear attention, embedding-residual prediction with norm control, and
//! monotonic alignment regularization, with exact reverse-mode gradients.

mod adam;
mod backward;
mod forward;
mod params;

pub use adam::Adam;
pub use backward::{gradients, loss, regularizer, TrainingPair};
pub use forward::{forward, greedy_decode, sample, Decoded, ForwardTrace};
pub use params::{
    bos_row, eos_class, init_params, load_checkpoint, save_checkpoint, Checkpoint, LstmParams,
    ModelConfig, ModelParams, RegVariant, CHECKPOINT_VERSION,
};
