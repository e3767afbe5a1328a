//! Minimal differentiable numerics: tensors, the layer kinds the embedder
//! needs, reverse-mode gradients, RMSprop and finite-difference checking.
//!
//! All arithmetic is `f64`. Checkpoints store `f32`, and trained networks are
//! rounded to `f32` before they are returned so that a saved and reloaded
//! model is identical to the in-memory one.

mod checkpoint;
pub mod gradcheck;
mod layers;
mod network;
mod optim;
mod tensor;

pub use checkpoint::{read_checkpoint, to_bytes, write_checkpoint, MAGIC};
pub use gradcheck::{compare_gradients, finite_diff_check, BlockReport, GradCheckReport};
pub use layers::{Layer, LayerKind, L2_EPSILON};
pub use network::{Gradients, Network, Session, Trace};
pub use optim::RmspropState;
pub use tensor::Tensor;

pub(crate) use layers::{channel_argmax, dot};

#[derive(Debug, thiserror::Error)]
pub enum NdiffError {
    #[error("layer {layer} ({kind}): expected input shape {expected:?}, got {actual:?}")]
    ShapeMismatch {
        layer: usize,
        kind: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("invalid tensor shape {0:?}: extents must be positive")]
    InvalidShape(Vec<usize>),
    #[error("shape {shape:?} does not match data length {len}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("backward called before forward")]
    BackwardBeforeForward,
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
