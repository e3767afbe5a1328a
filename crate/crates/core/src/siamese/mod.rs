//! Siamese metric learning: mapped distance, contrastive loss, latent mixup
//! and the episodic trainer.

mod distance;
mod head;
mod loss;
mod mixup;
mod train;

pub use distance::{euclidean, mapped_distance, squash, squash_derivative};
pub use head::{pair_loss, HeadOutput};
pub use loss::{contrastive_loss, contrastive_loss_grad};
pub use mixup::{mix, mixup_pairs, sample_lambda, Labeled, MixupConfig, TrainingPair};
pub use train::{train, Sample, TrainConfig, TrainedModel};

use crate::ndiff::NdiffError;

#[derive(Debug, thiserror::Error)]
pub enum SiameseError {
    #[error("invalid support set: {0}")]
    Support(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    PairClass(String),
    #[error("training diverged at episode {0}")]
    Diverged(usize),
    #[error(transparent)]
    Ndiff(#[from] NdiffError),
}
