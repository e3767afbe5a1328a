//! Dataset manifests, image files, configuration and synthetic data.

mod config;
mod export;
mod image;
mod manifest;
mod synth;

use std::path::{Path, PathBuf};

pub use config::ConfigFile;
pub use export::{embed_images, embed_manifest, export_latents};
pub use image::{load_image, Image};
pub use manifest::{DatasetManifest, Modality, Record, Split, DATASET_HEADER};
pub use synth::{generate_synthetic, render, SyntheticDataset, SyntheticSpec, FAMILIES};

use crate::embedder::EmbedError;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("image: {0}")]
    Image(String),
    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

impl DataError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
