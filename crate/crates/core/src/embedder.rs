//! Image embeddings: the built-in network, heatmap positions, and the
//! embedding exchange file format.
//!
//! The built-in network is
//!
//! ```text
//! conv2d(3->8, stride 2) -> relu -> conv2d(8->16, stride 2) -> relu
//!   -> global_max_pool -> dense(16->64) -> l2_normalize
//! ```
//!
//! Feature vectors from an external backbone can instead be fed through a
//! head of `dense(64->64) -> l2_normalize` (see [`Embedder::feature_head`]).

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataio::Image;
use crate::ndiff::{channel_argmax, dot, Layer, LayerKind, NdiffError, Network, Tensor};

pub const EMBEDDING_DIM: usize = 64;
/// Channels of the last feature map before pooling.
pub const FEATURE_CHANNELS: usize = 16;
/// Unit-norm tolerance for emitted embeddings.
pub const NORM_TOLERANCE: f64 = 1e-6;
/// Ingested vectors whose norm is further than this from 1 are re-normalized.
pub const RENORMALIZE_THRESHOLD: f64 = 1e-3;
pub const EXCHANGE_HEADER: &str = "#MLOC-EMB v1 dim=64";

/// Input resolution of the synthetic benchmark.
pub const SYNTHETIC_SIZE: usize = 64;
/// Input resolution used for real endoscopy frames.
pub const FULL_SIZE: usize = 256;

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("expected 3 channels, image has {0}")]
    Channels(usize),
    #[error("expected {expected}x{expected} image, got {height}x{width}")]
    Size {
        expected: usize,
        height: usize,
        width: usize,
    },
    #[error("image values must lie in [0, 1]")]
    Range,
    #[error("line {line}: expected {EMBEDDING_DIM} values for {id:?}, found {found}")]
    Dimension { line: usize, id: String, found: usize },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("missing or wrong header, expected {EXCHANGE_HEADER:?}")]
    Header,
    #[error("embedding must have {EMBEDDING_DIM} finite values with nonzero norm")]
    InvalidVector,
    #[error("network does not match the embedder layout: {0}")]
    Layout(String),
    #[error(transparent)]
    Ndiff(#[from] NdiffError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A 64-dimensional unit-norm latent vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// Wraps `values`, which must already have unit norm within [`NORM_TOLERANCE`].
    pub fn new(values: Vec<f64>) -> Result<Self, EmbedError> {
        if values.len() != EMBEDDING_DIM || values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::InvalidVector);
        }
        if (dot(&values, &values).sqrt() - 1.0).abs() > NORM_TOLERANCE {
            return Err(EmbedError::InvalidVector);
        }
        Ok(Self(values))
    }

    /// Divides `values` by their norm.
    pub fn normalized(mut values: Vec<f64>) -> Result<Self, EmbedError> {
        let norm = dot(&values, &values).sqrt();
        if values.len() != EMBEDDING_DIM || !norm.is_finite() || norm == 0.0 {
            return Err(EmbedError::InvalidVector);
        }
        values.iter_mut().for_each(|v| *v /= norm);
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        dot(&self.0, &self.0).sqrt()
    }
}

/// Per-channel argmax positions of the pre-pooling feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapReport {
    pub height: usize,
    pub width: usize,
    /// `(row, col)` of each channel's maximum.
    pub positions: Vec<(usize, usize)>,
    /// Row-major `height x width` map of the standard deviation across channels.
    pub variability: Vec<f64>,
}

/// A trained or freshly initialized embedding network plus its input contract.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedder {
    net: Network,
    input: InputKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputKind {
    /// Square RGB images of the given side length.
    Image { size: usize },
    /// External feature vectors of the given length.
    Features { dim: usize },
}

fn check_layout(net: &Network) -> Result<(), EmbedError> {
    let layers = net.layers();
    match layers.last() {
        Some(Layer::L2Normalize) => {}
        _ => return Err(EmbedError::Layout("last layer must be l2_normalize".into())),
    }
    let dim = net
        .parameters()
        .last()
        .map(|w| w.shape()[0])
        .ok_or_else(|| EmbedError::Layout("no parameterized layers".into()))?;
    if dim != EMBEDDING_DIM {
        return Err(EmbedError::Layout(format!(
            "output dimension {dim}, expected {EMBEDDING_DIM}"
        )));
    }
    Ok(())
}

impl Embedder {
    /// The built-in image network with seeded uniform Glorot initialization.
    pub fn image_network(seed: u64, size: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Network::new(vec![
            Layer::conv2d(&mut rng, 3, 8, 2),
            Layer::Relu,
            Layer::conv2d(&mut rng, 8, FEATURE_CHANNELS, 2),
            Layer::Relu,
            Layer::GlobalMaxPool,
            Layer::dense(&mut rng, FEATURE_CHANNELS, EMBEDDING_DIM),
            Layer::L2Normalize,
        ]);
        Self {
            net,
            input: InputKind::Image { size },
        }
    }

    /// `dense(dim -> 64) -> l2_normalize` over precomputed features.
    pub fn feature_head(seed: u64, dim: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Network::new(vec![Layer::dense(&mut rng, dim, EMBEDDING_DIM), Layer::L2Normalize]);
        Self {
            net,
            input: InputKind::Features { dim },
        }
    }

    /// Wraps a loaded network. Image networks take `image_size` as their
    /// resolution; feature heads infer their input length from the first layer.
    pub fn from_network(net: Network, image_size: usize) -> Result<Self, EmbedError> {
        check_layout(&net)?;
        let input = match net.layers().first() {
            Some(Layer::Conv2d { weight, .. }) if weight.shape()[1] == 3 => InputKind::Image { size: image_size },
            Some(Layer::Dense { weight }) => InputKind::Features {
                dim: weight.shape()[1],
            },
            _ => return Err(EmbedError::Layout("first layer must be conv2d(3->..) or dense".into())),
        };
        Ok(Self { net, input })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.net
    }

    pub fn into_network(self) -> Network {
        self.net
    }

    pub fn input_kind(&self) -> InputKind {
        self.input
    }

    /// Validates an image and converts it to the network's input tensor.
    pub fn image_input(&self, image: &Image) -> Result<Tensor, EmbedError> {
        if image.channels() != 3 {
            return Err(EmbedError::Channels(image.channels()));
        }
        if let InputKind::Image { size } = self.input {
            if image.height() != size || image.width() != size {
                return Err(EmbedError::Size {
                    expected: size,
                    height: image.height(),
                    width: image.width(),
                });
            }
        }
        if image.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(EmbedError::Range);
        }
        Ok(image.to_chw())
    }

    /// Embeds a prepared input tensor.
    pub fn embed_tensor(&self, input: &Tensor) -> Result<EmbeddingVector, EmbedError> {
        let out = self.net.infer(input)?;
        if out.data().iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::InvalidVector);
        }
        // l2_normalize's epsilon leaves a norm of 1 - O(1e-12 / |x|^2); the
        // division below only corrects that residue.
        EmbeddingVector::normalized(out.into_data())
    }

    pub fn embed_image(&self, image: &Image) -> Result<EmbeddingVector, EmbedError> {
        self.embed_tensor(&self.image_input(image)?)
    }

    /// Argmax position of every pre-pooling channel, i.e. the pixels that
    /// global max pooling selects, plus per-position channel variability.
    pub fn heatmap_positions(&self, image: &Image) -> Result<HeatmapReport, EmbedError> {
        let input = self.image_input(image)?;
        let pool = self
            .net
            .layers()
            .iter()
            .position(|l| l.kind() == LayerKind::GlobalMaxPool)
            .ok_or_else(|| EmbedError::Layout("no global_max_pool layer".into()))?;
        let fmap = self.net.infer_prefix(&input, pool)?;
        let (channels, height, width) = (fmap.shape()[0], fmap.shape()[1], fmap.shape()[2]);
        let plane = height * width;
        let positions = channel_argmax(&fmap)
            .into_iter()
            .map(|flat| {
                let p = flat % plane;
                (p / width, p % width)
            })
            .collect();
        let data = fmap.data();
        let variability = (0..plane)
            .map(|p| {
                let vals: Vec<f64> = (0..channels).map(|c| data[c * plane + p]).collect();
                let mean = vals.iter().sum::<f64>() / channels as f64;
                (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / channels as f64).sqrt()
            })
            .collect();
        Ok(HeatmapReport {
            height,
            width,
            positions,
            variability,
        })
    }
}

/// One row of an embedding exchange file.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedItem {
    /// 0 = unlabeled, otherwise a location index.
    pub label_index: u32,
    pub vector: EmbeddingVector,
}

/// Result of [`ingest_embeddings`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Ingested {
    pub items: BTreeMap<String, EmbeddedItem>,
    /// Rows whose norm deviated from 1 by more than [`RENORMALIZE_THRESHOLD`].
    pub renormalized: usize,
}

/// Writes records in the exchange format. Floats use the shortest
/// representation that parses back to the same value.
pub fn write_embeddings<'a, W, I>(mut out: W, records: I) -> Result<(), EmbedError>
where
    W: Write,
    I: IntoIterator<Item = (&'a str, &'a EmbeddedItem)>,
{
    writeln!(out, "{EXCHANGE_HEADER}")?;
    for (id, item) in records {
        if id.contains(',') || id.contains('\n') || id.is_empty() {
            return Err(EmbedError::Malformed {
                line: 0,
                message: format!("id {id:?} cannot be written"),
            });
        }
        write!(out, "{id},{}", item.label_index)?;
        for v in item.vector.values() {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn ingest_embeddings<R: BufRead>(input: R) -> Result<Ingested, EmbedError> {
    let mut lines = input.lines().enumerate();
    match lines.next() {
        Some((_, Ok(h))) if h.trim_end() == EXCHANGE_HEADER => {}
        Some((_, Err(e))) => return Err(e.into()),
        _ => return Err(EmbedError::Header),
    }
    let mut out = Ingested::default();
    for (i, line) in lines {
        let line_no = i + 1;
        let line = line?;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let id = fields.next().unwrap_or_default().to_string();
        if id.is_empty() {
            return Err(EmbedError::Malformed {
                line: line_no,
                message: "empty id".into(),
            });
        }
        let label_index = fields
            .next()
            .and_then(|s| s.trim().parse::<u32>().ok())
            .filter(|&l| l <= 10)
            .ok_or_else(|| EmbedError::Malformed {
                line: line_no,
                message: "label index must be an integer in 0..=10".into(),
            })?;
        let values = fields
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| EmbedError::Malformed {
                line: line_no,
                message: format!("bad value: {e}"),
            })?;
        if values.len() != EMBEDDING_DIM {
            return Err(EmbedError::Dimension {
                line: line_no,
                id,
                found: values.len(),
            });
        }
        let norm = dot(&values, &values).sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(EmbedError::Malformed {
                line: line_no,
                message: "vector must be finite and nonzero".into(),
            });
        }
        let vector = if (norm - 1.0).abs() > RENORMALIZE_THRESHOLD {
            out.renormalized += 1;
            EmbeddingVector::normalized(values)?
        } else {
            EmbeddingVector(values)
        };
        if out.items.contains_key(&id) {
            return Err(EmbedError::DuplicateId { line: line_no, id });
        }
        out.items.insert(id, EmbeddedItem { label_index, vector });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_image(seed: u64, size: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..size * size * 3).map(|_| rng.random::<f64>()).collect();
        Image::new(size, size, 3, data).unwrap()
    }

    fn unit(i: usize) -> EmbeddingVector {
        let mut v = vec![0.0; EMBEDDING_DIM];
        v[i] = 1.0;
        EmbeddingVector::new(v).unwrap()
    }

    #[test]
    fn embeddings_are_unit_norm_and_deterministic() {
        let e = Embedder::image_network(3, 32);
        for seed in 0..5 {
            let img = random_image(seed, 32);
            let a = e.embed_image(&img).unwrap();
            assert!((a.norm() - 1.0).abs() < NORM_TOLERANCE);
            assert_eq!(a, e.embed_image(&img).unwrap());
        }
    }

    #[test]
    fn distinct_images_give_distinct_vectors() {
        let e = Embedder::image_network(11, 32);
        let a = e.embed_image(&random_image(1, 32)).unwrap();
        let b = e.embed_image(&random_image(2, 32)).unwrap();
        let max_diff = a
            .values()
            .iter()
            .zip(b.values())
            .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        assert!(max_diff > 1e-9);
    }

    #[test]
    fn rejects_wrong_channels_size_and_range() {
        let e = Embedder::image_network(0, 16);
        let gray = Image::new(16, 16, 1, vec![0.5; 256]).unwrap();
        assert!(matches!(e.embed_image(&gray), Err(EmbedError::Channels(1))));
        assert!(matches!(
            e.embed_image(&Image::filled(8, 8, [0.1; 3])),
            Err(EmbedError::Size { expected: 16, .. })
        ));
        assert!(matches!(
            e.embed_image(&Image::filled(16, 16, [1.5, 0.0, 0.0])),
            Err(EmbedError::Range)
        ));
    }

    #[test]
    fn constant_image_ties_at_origin() {
        let e = Embedder::image_network(5, 32);
        // Interior pixels see full kernels and border pixels partial ones, so
        // a constant image is not constant after convolution; a zero image is.
        let report = e.heatmap_positions(&Image::filled(32, 32, [0.0; 3])).unwrap();
        assert_eq!(report.positions, vec![(0, 0); FEATURE_CHANNELS]);
        assert_eq!((report.height, report.width), (8, 8));
        assert!(report.variability.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn heatmap_positions_are_the_pooled_argmax() {
        let e = Embedder::image_network(8, 32);
        let img = random_image(4, 32);
        let report = e.heatmap_positions(&img).unwrap();
        let fmap = e.network().infer_prefix(&img.to_chw(), 4).unwrap();
        let pooled = e.network().infer_prefix(&img.to_chw(), 5).unwrap();
        let plane = report.height * report.width;
        for (c, &(r, q)) in report.positions.iter().enumerate() {
            assert!(r < report.height && q < report.width);
            assert_eq!(fmap.data()[c * plane + r * report.width + q], pooled.data()[c]);
        }
    }

    #[test]
    fn exchange_round_trip() {
        let mut items = BTreeMap::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for i in 0..4 {
            let v: Vec<f64> = (0..EMBEDDING_DIM).map(|_| rng.random::<f64>() - 0.5).collect();
            items.insert(
                format!("item{i}"),
                EmbeddedItem {
                    label_index: i,
                    vector: EmbeddingVector::normalized(v).unwrap(),
                },
            );
        }
        let mut buf = Vec::new();
        write_embeddings(&mut buf, items.iter().map(|(k, v)| (k.as_str(), v))).unwrap();
        let back = ingest_embeddings(&buf[..]).unwrap();
        assert_eq!(back.items, items);
        assert_eq!(back.renormalized, 0);
    }

    fn row(id: &str, values: &[f64]) -> String {
        let vals: Vec<String> = values.iter().map(|v| v.to_string()).collect();
        format!("{EXCHANGE_HEADER}\n{id},1,{}\n", vals.join(","))
    }

    #[test]
    fn short_row_reports_dimension() {
        let text = row("bad", &[0.125; 63]);
        match ingest_embeddings(text.as_bytes()) {
            Err(EmbedError::Dimension { line, id, found }) => {
                assert_eq!((line, id.as_str(), found), (2, "bad", 63));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn long_vector_is_renormalized() {
        let mut v = vec![0.0; EMBEDDING_DIM];
        v[0] = 2.0 * 0.6;
        v[1] = 2.0 * 0.8;
        let got = ingest_embeddings(row("x", &v).as_bytes()).unwrap();
        assert_eq!(got.renormalized, 1);
        let e = &got.items["x"].vector;
        assert!((e.values()[0] - 0.6).abs() < 1e-15 && (e.values()[1] - 0.8).abs() < 1e-15);
        assert!((e.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn duplicate_and_malformed_rows() {
        let one = row("a", unit(0).values());
        let dup = format!("{one}{}", one.lines().nth(1).unwrap());
        assert!(matches!(
            ingest_embeddings(dup.as_bytes()),
            Err(EmbedError::DuplicateId { line: 3, .. })
        ));
        let bad = one.replace(",1,", ",x,");
        assert!(matches!(
            ingest_embeddings(bad.as_bytes()),
            Err(EmbedError::Malformed { line: 2, .. })
        ));
        assert!(matches!(ingest_embeddings(&b"a,1,0\n"[..]), Err(EmbedError::Header)));
    }
}
