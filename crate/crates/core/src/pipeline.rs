//! End-to-end glue: support loading, index building, video scoring and the
//! synthetic experiment.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::catalog::{AnatomicalCatalog, Label};
use crate::dataio::{
    embed_images, generate_synthetic, load_image, DataError, DatasetManifest, Modality, Split, SyntheticDataset,
    SyntheticSpec,
};
use crate::embedder::{EmbedError, Embedder, InputKind};
use crate::inference::{InferenceError, SupportIndex};
use crate::metrics::{confusion, evaluate, MetricsError, MetricsReport};
use crate::ndiff::gradcheck::DEFAULT_STEP;
use crate::ndiff::{compare_gradients, finite_diff_check, GradCheckReport, Network, Tensor, Trace};
use crate::sequence::{classify_video, SequenceError, VideoPrediction, WindowPrediction};
use crate::siamese::{pair_loss, train, MixupConfig, Sample, SiameseError, TrainConfig, TrainedModel};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Siamese(#[from] SiameseError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Sequence(#[from] SequenceError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{0}")]
    Input(String),
}

fn image_size(embedder: &Embedder) -> Result<usize, PipelineError> {
    match embedder.input_kind() {
        InputKind::Image { size } => Ok(size),
        InputKind::Features { .. } => Err(PipelineError::Input(
            "embedder takes feature vectors; supply embeddings instead of images".into(),
        )),
    }
}

/// Loads the support images of `manifest` as training samples.
pub fn support_samples(
    manifest: &DatasetManifest,
    modality: Option<Modality>,
    size: usize,
) -> Result<Vec<Sample>, PipelineError> {
    manifest
        .support(modality)
        .par_iter()
        .map(|r| {
            let img = load_image(&manifest.resolve(r), size)?;
            Ok(Sample {
                class: r.label.location().expect("support rows carry a location"),
                input: img.to_chw(),
            })
        })
        .collect()
}

/// Embeds the support images of `manifest` into an index.
pub fn support_index(
    embedder: &Embedder,
    manifest: &DatasetManifest,
    modality: Option<Modality>,
) -> Result<SupportIndex, PipelineError> {
    let size = image_size(embedder)?;
    let members = manifest
        .support(modality)
        .par_iter()
        .map(|r| {
            let img = load_image(&manifest.resolve(r), size)?;
            let e = embedder.embed_image(&img)?;
            Ok((r.label.location().expect("support rows carry a location"), e))
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    Ok(SupportIndex::from_members(members))
}

/// Ground truth per window: the most frequent true frame label, ties to
/// the smaller anatomical index (`Other` counts as 0).
pub fn window_truth(frame_truth: &[Label], windows: &[WindowPrediction]) -> Vec<Label> {
    windows
        .iter()
        .map(|w| {
            let mut counts = [0usize; 11];
            for l in &frame_truth[w.start..=w.end] {
                counts[l.index() as usize] += 1;
            }
            let best = (0..11).rev().max_by_key(|&i| counts[i]).expect("nonempty");
            Label::from_index(best as u32).expect("index in range")
        })
        .collect()
}

/// Labels seen in either sequence, in index order.
pub fn label_set(a: &[Label], b: &[Label]) -> Vec<Label> {
    let mut v: Vec<Label> = a.iter().chain(b).copied().collect();
    v.sort_by_key(|l| l.index());
    v.dedup();
    v
}

pub fn score(predicted: &[Label], truth: &[Label]) -> Result<MetricsReport, PipelineError> {
    let labels = label_set(predicted, truth);
    Ok(evaluate(&confusion(predicted, truth, &labels)?))
}

/// Scores repaired windows against per-frame ground truth.
pub fn score_windows(windows: &[WindowPrediction], frame_truth: &[Label]) -> Result<MetricsReport, PipelineError> {
    if let Some(w) = windows.iter().find(|w| w.end >= frame_truth.len()) {
        return Err(PipelineError::Input(format!(
            "window ends at frame {} but only {} frames have ground truth",
            w.end,
            frame_truth.len()
        )));
    }
    let predicted: Vec<Label> = windows.iter().map(|w| w.label).collect();
    score(&predicted, &window_truth(frame_truth, windows))
}

#[derive(Debug, Clone)]
pub struct SyntheticRun {
    pub dataset: SyntheticDataset,
    pub model: TrainedModel,
    pub index: SupportIndex,
    pub video: VideoPrediction,
    pub frame_truth: Vec<Label>,
    /// Repaired windows against window ground truth.
    pub window_report: MetricsReport,
    /// Individual frame labels against frame ground truth.
    pub frame_report: MetricsReport,
}

/// Generates a synthetic dataset, trains on its support split and runs the
/// full video pipeline on its ordered video, all in memory.
pub fn run_synthetic(
    spec: &SyntheticSpec,
    train_config: &TrainConfig,
    mixup: &MixupConfig,
    threshold: f64,
) -> Result<SyntheticRun, PipelineError> {
    let dataset = generate_synthetic(spec)?;
    let samples: Vec<Sample> = dataset
        .split(Split::Support)
        .map(|(r, img)| Sample {
            class: r.label.location().expect("support rows carry a location"),
            input: img.to_chw(),
        })
        .collect();
    let embedder = Embedder::image_network(train_config.seed, spec.image_size);
    let model = train(embedder, &samples, train_config, mixup)?;
    let (records, images): (Vec<_>, Vec<_>) = dataset.split(Split::Support).map(|(r, i)| (r, i.clone())).unzip();
    let vectors = embed_images(&model.embedder, &images)?;
    let index = SupportIndex::from_members(
        records
            .iter()
            .map(|r| r.label.location().expect("support rows carry a location"))
            .zip(vectors),
    );
    let video = classify_video(
        &dataset.video,
        &index,
        threshold,
        &AnatomicalCatalog::default(),
        |id, _| {
            let img = dataset.image(id).ok_or("unknown frame")?;
            model.embedder.embed_image(img).map_err(|e| e.to_string())
        },
    )?;
    let frame_truth: Vec<Label> = dataset
        .video
        .frames
        .iter()
        .map(|(id, _)| dataset.manifest.get(id).expect("generated frame").label)
        .collect();
    let window_report = score_windows(&video.windows, &frame_truth)?;
    let frame_labels: Vec<Label> = video.frames.iter().map(|(_, p)| p.label).collect();
    let frame_report = score(&frame_labels, &frame_truth)?;
    Ok(SyntheticRun {
        dataset,
        model,
        index,
        video,
        frame_truth,
        window_report,
        frame_report,
    })
}

fn random_image(rng: &mut ChaCha8Rng, size: usize) -> Tensor {
    let data = (0..3 * size * size).map(|_| rng.random::<f64>()).collect();
    Tensor::new(vec![3, size, size], data).expect("positive extents")
}

/// Finite-difference check of the freshly initialized image network under a
/// fixed linear readout of its normalized output, covering every layer kind
/// and the input.
pub fn network_grad_check(seed: u64, size: usize, tolerance: f64) -> Result<GradCheckReport, PipelineError> {
    let embedder = Embedder::image_network(seed, size);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let input = random_image(&mut rng, size);
    let readout: Vec<f64> = (0..crate::embedder::EMBEDDING_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
    let report = finite_diff_check(
        embedder.network(),
        &input,
        |y| (y.data().iter().zip(&readout).map(|(a, b)| a * b).sum(), readout.clone()),
        tolerance,
    )
    .map_err(SiameseError::from)?;
    Ok(report)
}

/// Finite-difference check of the pair loss through both twins of the
/// freshly initialized image network: embed, normalize, mapped distance,
/// contrastive loss with soft target `target`.
pub fn head_grad_check(
    seed: u64,
    size: usize,
    target: f64,
    tolerance: f64,
) -> Result<GradCheckReport, PipelineError> {
    let embedder = Embedder::image_network(seed, size);
    let net = embedder.network();
    let depth = net.layers().len() - 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xface);
    let (a, b) = (random_image(&mut rng, size), random_image(&mut rng, size));
    let loss_of = |net: &Network| -> Result<(f64, GradPair), SiameseError> {
        let ta = net.trace_prefix(&a, depth)?;
        let tb = net.trace_prefix(&b, depth)?;
        let out = pair_loss(ta.output().data(), tb.output().data(), target);
        Ok((out.loss, (ta, tb, out.grad_anchor, out.grad_partner)))
    };
    let (_, (ta, tb, ga, gb)) = loss_of(net)?;
    let mut grads = net.gradients(&ta, &ga).map_err(SiameseError::from)?;
    grads.accumulate(&net.gradients(&tb, &gb).map_err(SiameseError::from)?);
    let point: Vec<Vec<f64>> = net.parameters().map(|p| p.data().to_vec()).collect();
    let report = compare_gradients(
        &net.parameter_names(),
        &point,
        &grads.blocks,
        |params| {
            let mut probe = net.clone();
            probe.set_parameters(params);
            loss_of(&probe).map(|(l, _)| l).unwrap_or(f64::NAN)
        },
        DEFAULT_STEP,
        tolerance,
    );
    Ok(report)
}

type GradPair = (Trace, Trace, Vec<f64>, Vec<f64>);
