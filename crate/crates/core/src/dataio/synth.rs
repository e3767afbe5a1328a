//! Seeded procedural stand-in for endoscopy data.
//!
//! Every class is a texture family: a base color, an oriented sinusoidal
//! stripe pattern of class-specific frequency, and a class-specific number of
//! soft blobs. Items of a class share the family and differ by seeded
//! perturbations scaled by `noise` (stripe phase, blob positions, color
//! jitter, per-pixel noise). With `noise = 0` all items of a class coincide.
//!
//! Images are quantized to 8 bits in memory, so writing them to PPM and
//! reading them back is lossless.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::manifest::{DatasetManifest, Modality, Record, Split};
use super::{DataError, Image};
use crate::catalog::{Label, Location};
use crate::sequence::VideoManifest;

/// Texture families available: ten locations plus one held-out family.
pub const FAMILIES: usize = 11;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub n_classes: usize,
    pub support_per_class: usize,
    /// Video frames generated per class.
    pub eval_per_class: usize,
    pub image_size: usize,
    /// Perturbation strength in `[0, 1]`.
    pub noise: f64,
    /// Also generate frames of a held-out family labeled `Other`.
    pub unknown_frames: usize,
    pub fps: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            n_classes: 10,
            support_per_class: 5,
            eval_per_class: 20,
            image_size: 64,
            noise: 0.1,
            unknown_frames: 0,
            fps: 5,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::Config { line: 0, message: m });
        if !(1..=10).contains(&self.n_classes) {
            return bad(format!("n_classes must be in 1..=10, got {}", self.n_classes));
        }
        if self.support_per_class == 0 || self.image_size < 8 || self.fps == 0 {
            return bad("support_per_class and fps must be positive, image_size at least 8".into());
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return bad(format!("noise must lie in [0, 1], got {}", self.noise));
        }
        Ok(())
    }
}

struct Family {
    color: [f64; 3],
    frequency: f64,
    angle: f64,
    blobs: Vec<(f64, f64)>,
    blob_radius: f64,
    blob_gain: f64,
}

fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.fract() * 6.0).rem_euclid(6.0);
    let c = v * s;
    let x = c * (1.0 - ((h6 % 2.0) - 1.0).abs());
    let (r, g, b) = match h6 as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

fn family(seed: u64, k: usize) -> Family {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1_000_000 + k as u64);
    let n_blobs = 1 + (k * 4) % 7;
    Family {
        color: hsv(k as f64 / FAMILIES as f64, 0.55, 0.7),
        frequency: 2.0 + ((k * 3) % 5) as f64,
        angle: (k as f64 * 0.61 * PI) % PI,
        blobs: (0..n_blobs)
            .map(|_| (rng.random_range(0.15..0.85), rng.random_range(0.15..0.85)))
            .collect(),
        blob_radius: 0.06 + 0.02 * (k % 3) as f64,
        blob_gain: if k % 2 == 0 { 0.25 } else { -0.25 },
    }
}

/// Renders one item of texture family `k`. `stream` selects the item's
/// perturbation draws.
pub fn render(seed: u64, k: usize, stream: u64, size: usize, noise: f64) -> Image {
    let fam = family(seed, k);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let phase = noise * PI * rng.random_range(-1.0..1.0);
    let jitter: [f64; 3] = std::array::from_fn(|_| noise * 0.3 * rng.sample::<f64, _>(StandardNormal));
    let blobs: Vec<(f64, f64)> = fam
        .blobs
        .iter()
        .map(|&(x, y)| {
            (
                x + noise * 0.25 * rng.random_range(-1.0..1.0),
                y + noise * 0.25 * rng.random_range(-1.0..1.0),
            )
        })
        .collect();
    let (ca, sa) = (fam.angle.cos(), fam.angle.sin());
    let mut data = Vec::with_capacity(size * size * 3);
    for r in 0..size {
        for c in 0..size {
            let (y, x) = ((r as f64 + 0.5) / size as f64, (c as f64 + 0.5) / size as f64);
            let stripe = 0.18 * (2.0 * PI * fam.frequency * (x * ca + y * sa) + phase).sin();
            let blob: f64 = blobs
                .iter()
                .map(|&(bx, by)| {
                    let d2 = (x - bx).powi(2) + (y - by).powi(2);
                    (-d2 / (2.0 * fam.blob_radius.powi(2))).exp()
                })
                .sum();
            for ch in 0..3 {
                let pixel_noise = if noise > 0.0 {
                    noise * 0.5 * rng.sample::<f64, _>(StandardNormal)
                } else {
                    0.0
                };
                let v = fam.color[ch] + jitter[ch] + stripe + fam.blob_gain * blob + pixel_noise;
                data.push((v.clamp(0.0, 1.0) * 255.0).round() / 255.0);
            }
        }
    }
    Image::new(size, size, 3, data).expect("positive extents")
}

/// Generated dataset held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub spec: SyntheticSpec,
    /// Paths are `images/<id>.ppm` relative to the output directory.
    pub manifest: DatasetManifest,
    /// Image per manifest record, same order.
    pub images: Vec<Image>,
    /// Frames of all classes in anatomical order.
    pub video: VideoManifest,
    /// Frames of the held-out family, if requested.
    pub unknown_video: Option<VideoManifest>,
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticDataset, DataError> {
    spec.validate()?;
    struct Item {
        id: String,
        family: usize,
        label: Label,
        split: Split,
    }
    let mut items = Vec::new();
    for k in 0..spec.n_classes {
        let label = Label::Location(Location::new(k as u32 + 1).expect("n_classes <= 10"));
        for j in 0..spec.support_per_class {
            items.push(Item {
                id: format!("s{:02}_{j:02}", k + 1),
                family: k,
                label,
                split: Split::Support,
            });
        }
    }
    let mut frame = 0;
    for k in 0..spec.n_classes {
        let label = Label::Location(Location::new(k as u32 + 1).expect("n_classes <= 10"));
        for _ in 0..spec.eval_per_class {
            items.push(Item {
                id: format!("v{frame:04}"),
                family: k,
                label,
                split: Split::Eval,
            });
            frame += 1;
        }
    }
    for j in 0..spec.unknown_frames {
        items.push(Item {
            id: format!("u{j:04}"),
            family: FAMILIES - 1,
            label: Label::Other,
            split: Split::Eval,
        });
    }
    let images: Vec<Image> = items
        .par_iter()
        .enumerate()
        .map(|(i, it)| render(spec.seed, it.family, i as u64, spec.image_size, spec.noise))
        .collect();
    let records: Vec<Record> = items
        .iter()
        .map(|it| Record {
            id: it.id.clone(),
            path: format!("images/{}.ppm", it.id),
            label: it.label,
            modality: Modality::Wce,
            split: it.split,
        })
        .collect();
    let video_of = |prefix: char| {
        let frames: Vec<(String, String)> = records
            .iter()
            .filter(|r| r.id.starts_with(prefix))
            .map(|r| (r.id.clone(), r.path.clone()))
            .collect();
        (!frames.is_empty()).then_some(VideoManifest { fps: spec.fps, frames })
    };
    let video = video_of('v').unwrap_or(VideoManifest {
        fps: spec.fps,
        frames: Vec::new(),
    });
    let unknown_video = video_of('u');
    Ok(SyntheticDataset {
        spec: spec.clone(),
        manifest: DatasetManifest {
            records,
            root: Default::default(),
        },
        images,
        video,
        unknown_video,
    })
}

impl SyntheticDataset {
    /// Writes `manifest.txt`, `video.txt`, optional `video_unknown.txt` and
    /// `images/*.ppm` under `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<(), DataError> {
        let images = dir.join("images");
        std::fs::create_dir_all(&images).map_err(|e| DataError::io(&images, e))?;
        for (r, img) in self.manifest.records.iter().zip(&self.images) {
            img.save_ppm(&dir.join(&r.path))?;
        }
        let write = |name: &str, text: String| {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| DataError::io(&p, e))
        };
        write("manifest.txt", self.manifest.to_text())?;
        if !self.video.frames.is_empty() {
            write("video.txt", self.video.to_text())?;
        }
        if let Some(u) = &self.unknown_video {
            write("video_unknown.txt", u.to_text())?;
        }
        Ok(())
    }

    pub fn image(&self, id: &str) -> Option<&Image> {
        self.manifest
            .records
            .iter()
            .position(|r| r.id == id)
            .map(|i| &self.images[i])
    }

    /// Records and images of one split.
    pub fn split(&self, split: Split) -> impl Iterator<Item = (&Record, &Image)> {
        self.manifest
            .records
            .iter()
            .zip(&self.images)
            .filter(move |(r, _)| r.split == split)
    }
}
