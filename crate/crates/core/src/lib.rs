//! Few-shot location classification of image frames and videos with a
//! Siamese metric-learning embedder.
//!
//! The pipeline: an [`embedder::Embedder`] maps a frame to a unit vector, a
//! [`siamese`] trainer fits it on a handful of labeled examples per class, a
//! [`inference::SupportIndex`] classifies frames by median distance with an
//! open-set threshold, and [`sequence`] smooths frame labels over sliding
//! windows under an anatomical ordering. [`metrics`] scores the results.

pub mod catalog;
pub mod dataio;
pub mod embedder;
pub mod inference;
pub mod metrics;
pub mod ndiff;
pub mod pipeline;
pub mod sequence;
pub mod siamese;

pub use catalog::{AnatomicalCatalog, Label, Location};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/overview.md")]
    mod overview {}
    #[doc = include_str!("../../../book/src/differentiation.md")]
    mod differentiation {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/inference.md")]
    mod inference {}
    #[doc = include_str!("../../../book/src/sequences.md")]
    mod sequences {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
}
