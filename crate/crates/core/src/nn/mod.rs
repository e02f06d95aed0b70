//! Minimal tensor engine with reverse-mode differentiation and the layers
//! the classifier needs: convolution, linear, ReLU, pooling, nearest
//! upsampling, concatenation and softmax cross-entropy.

mod checkpoint;
mod graph;
mod kernels;
mod loss;
mod model;
mod tensor;

pub use checkpoint::{Checkpoint, FORMAT_VERSION, MAGIC};
pub use graph::{Graph, Var};
pub use loss::{cross_entropy, softmax, ClassWeights, TARGET_SUM_TOL};
pub use model::{
    classify_head, forward_backbone, fpn_fuse, BackboneConfig, BackboneVars, FpnConfig, LayerVars, Model, ModelConfig,
    ModelVars, UpsampleMode, INPUT_DIVISOR,
};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("target row {row} is not a distribution (sum {sum})")]
    InvalidTarget { row: usize, sum: f64 },
    #[error("invalid class weights: {0}")]
    InvalidWeights(String),
    #[error("graph error: {0}")]
    Graph(String),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, NnError>;
