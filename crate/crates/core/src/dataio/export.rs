use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;

use super::{load_image, DataError, DatasetManifest, Image, Record};
use crate::embedder::{write_embeddings, EmbedError, EmbeddedItem, Embedder, InputKind};

/// Embeds in-memory images in parallel, preserving order.
pub fn embed_images(embedder: &Embedder, images: &[Image]) -> Result<Vec<crate::embedder::EmbeddingVector>, EmbedError> {
    images.par_iter().map(|img| embedder.embed_image(img)).collect()
}

/// Loads and embeds every record accepted by `filter`, keyed by id.
pub fn embed_manifest<F>(
    embedder: &Embedder,
    manifest: &DatasetManifest,
    filter: F,
) -> Result<BTreeMap<String, EmbeddedItem>, DataError>
where
    F: Fn(&Record) -> bool + Sync,
{
    let size = match embedder.input_kind() {
        InputKind::Image { size } => size,
        InputKind::Features { .. } => {
            return Err(DataError::Image("embedder expects feature vectors, not images".into()))
        }
    };
    manifest
        .records
        .par_iter()
        .filter(|r| filter(r))
        .map(|r| {
            let img = load_image(&manifest.resolve(r), size)?;
            let vector = embedder.embed_image(&img)?;
            Ok((
                r.id.clone(),
                EmbeddedItem {
                    label_index: r.label.index(),
                    vector,
                },
            ))
        })
        .collect()
}

/// Writes every manifest item's embedding in the exchange format.
pub fn export_latents<W: Write>(embedder: &Embedder, manifest: &DatasetManifest, out: W) -> Result<usize, DataError> {
    let items = embed_manifest(embedder, manifest, |_| true)?;
    let order: Vec<(&str, &EmbeddedItem)> = manifest
        .records
        .iter()
        .map(|r| (r.id.as_str(), &items[&r.id]))
        .collect();
    write_embeddings(out, order.iter().copied())?;
    Ok(order.len())
}
