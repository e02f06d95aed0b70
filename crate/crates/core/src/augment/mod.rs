//! Training-time augmentation: Mixup on batches and TrivialAugment on
//! individual images. Evaluation never goes through this module.

mod mixup;
mod ops;
mod trivial;

pub use mixup::{mixup, mixup_with, LabeledBatch, MixupConfig};
pub use ops::{apply_op, TaOp};
pub use trivial::{trivial_augment, trivial_augment_image, TaConfig, TaOpSpec};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("mixup needs at least 2 examples, got {0}")]
    BatchTooSmall(usize),
    #[error("invalid augmentation config: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
}

pub type Result<T> = std::result::Result<T, AugmentError>;

/// Independent RNG stream `stream` of run seed `seed`: a ChaCha8 generator
/// keyed by `seed` with its stream id set to `stream`.
pub fn rng_stream(seed: u64, stream: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
