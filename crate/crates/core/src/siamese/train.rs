//! Episodic Siamese training with latent mixup.
//!
//! Each episode draws `pairs_per_episode` (anchor, positive, foreign) item
//! triples. The shared network maps all three to unnormalized 64-d latents;
//! the anchor is then compared against the pure positive (target 0), the pure
//! foreign item (target 1) and, with mixup on, `mixes_per_pair` partners
//! `lambda * positive + (1 - lambda) * foreign` (target `1 - lambda`). The mean
//! contrastive loss over all pairs is minimized with one RMSprop step per
//! episode.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::head::pair_loss;
use super::mixup::{mix, sample_lambda, MixupConfig};
use super::SiameseError;
use crate::catalog::Location;
use crate::embedder::Embedder;
use crate::ndiff::{Gradients, RmspropState, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub episodes: usize,
    pub pairs_per_episode: usize,
    pub seed: u64,
    pub mixup_enabled: bool,
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
    /// Stop once the episode loss stays below this for `patience` episodes.
    pub early_stop_loss: f64,
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 200,
            pairs_per_episode: 32,
            seed: 0,
            mixup_enabled: true,
            learning_rate: 1e-3,
            decay: 0.9,
            epsilon: 1e-8,
            early_stop_loss: 1e-4,
            patience: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), SiameseError> {
        if self.episodes == 0 || self.pairs_per_episode == 0 || self.patience == 0 {
            return Err(SiameseError::Config(
                "episodes, pairs_per_episode and patience must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.decay) || !(self.epsilon > 0.0) {
            return Err(SiameseError::Config(format!(
                "invalid optimizer settings lr={} decay={} eps={}",
                self.learning_rate, self.decay, self.epsilon
            )));
        }
        Ok(())
    }
}

/// A labeled network input (an image tensor or a feature vector).
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub class: Location,
    pub input: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    /// Parameters rounded to `f32`, exactly what a checkpoint stores.
    pub embedder: Embedder,
    /// Mean pair loss per episode.
    pub loss_trace: Vec<f64>,
}

impl TrainedModel {
    /// `episode,loss` lines, episodes numbered from 1.
    pub fn loss_trace_text(&self) -> String {
        self.loss_trace
            .iter()
            .enumerate()
            .map(|(i, l)| format!("{},{l}\n", i + 1))
            .collect()
    }
}

struct Draw {
    anchor: usize,
    positive: usize,
    foreign: usize,
    lambdas: Vec<f64>,
}

/// Item indices per class, classes in index order.
fn group(samples: &[Sample]) -> Vec<(Location, Vec<usize>)> {
    let mut groups: Vec<(Location, Vec<usize>)> = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        match groups.iter_mut().find(|(c, _)| *c == s.class) {
            Some((_, items)) => items.push(i),
            None => groups.push((s.class, vec![i])),
        }
    }
    groups.sort_by_key(|(c, _)| *c);
    groups
}

fn check_support(embedder: &Embedder, samples: &[Sample]) -> Result<Vec<(Location, Vec<usize>)>, SiameseError> {
    let groups = group(samples);
    if groups.len() < 2 {
        return Err(SiameseError::Support(format!(
            "need at least 2 classes, found {}",
            groups.len()
        )));
    }
    if groups.iter().all(|(_, items)| items.len() < 2) {
        return Err(SiameseError::Support(
            "need at least one class with 2 items to form a positive pair".into(),
        ));
    }
    for s in samples {
        embedder.network().output_shape(s.input.shape())?;
    }
    Ok(groups)
}

fn draw(
    rng: &mut ChaCha8Rng,
    groups: &[(Location, Vec<usize>)],
    anchor_classes: &[usize],
    config: &TrainConfig,
    mixup: &MixupConfig,
) -> Draw {
    let g = *anchor_classes.choose(rng).expect("nonempty");
    let items = &groups[g].1;
    let a = rng.random_range(0..items.len());
    let mut p = rng.random_range(0..items.len() - 1);
    if p >= a {
        p += 1;
    }
    let mut f = rng.random_range(0..groups.len() - 1);
    if f >= g {
        f += 1;
    }
    let foreign = *groups[f].1.choose(rng).expect("nonempty class");
    let lambdas = if config.mixup_enabled {
        (0..mixup.mixes_per_pair)
            .map(|_| sample_lambda(rng, mixup.alpha))
            .collect()
    } else {
        Vec::new()
    };
    Draw {
        anchor: items[a],
        positive: items[p],
        foreign,
        lambdas,
    }
}

/// Loss sum, pair count and parameter gradients of the loss sum for one draw.
fn draw_gradients(embedder: &Embedder, samples: &[Sample], d: &Draw) -> Result<(f64, usize, Gradients), SiameseError> {
    let net = embedder.network();
    // everything but the final l2_normalize, which the head applies itself
    let depth = net.layers().len() - 1;
    let traces = [d.anchor, d.positive, d.foreign]
        .iter()
        .map(|&i| net.trace_prefix(&samples[i].input, depth))
        .collect::<Result<Vec<_>, _>>()?;
    let (za, zp, zf) = (
        traces[0].output().data(),
        traces[1].output().data(),
        traces[2].output().data(),
    );
    let dim = za.len();
    let mut ga = vec![0.0; dim];
    let mut gp = vec![0.0; dim];
    let mut gf = vec![0.0; dim];
    let mut loss = 0.0;

    let add = |acc: &mut [f64], g: &[f64], w: f64| acc.iter_mut().zip(g).for_each(|(a, b)| *a += w * b);

    let pos = pair_loss(za, zp, 0.0);
    loss += pos.loss;
    add(&mut ga, &pos.grad_anchor, 1.0);
    add(&mut gp, &pos.grad_partner, 1.0);
    let neg = pair_loss(za, zf, 1.0);
    loss += neg.loss;
    add(&mut ga, &neg.grad_anchor, 1.0);
    add(&mut gf, &neg.grad_partner, 1.0);
    for &lambda in &d.lambdas {
        let partner = mix(lambda, zp, zf);
        let out = pair_loss(za, &partner, 1.0 - lambda);
        loss += out.loss;
        add(&mut ga, &out.grad_anchor, 1.0);
        add(&mut gp, &out.grad_partner, lambda);
        add(&mut gf, &out.grad_partner, 1.0 - lambda);
    }

    let mut grads = net.gradients(&traces[0], &ga)?;
    grads.accumulate(&net.gradients(&traces[1], &gp)?);
    grads.accumulate(&net.gradients(&traces[2], &gf)?);
    Ok((loss, 2 + d.lambdas.len(), grads))
}

/// Trains `embedder` on labeled `samples`.
///
/// Draws are generated sequentially from `config.seed`; per-draw gradients
/// are computed in parallel and summed in draw order, so results are
/// bitwise reproducible regardless of thread count.
pub fn train(
    mut embedder: Embedder,
    samples: &[Sample],
    config: &TrainConfig,
    mixup: &MixupConfig,
) -> Result<TrainedModel, SiameseError> {
    config.validate()?;
    if config.mixup_enabled {
        mixup.validate()?;
    }
    let groups = check_support(&embedder, samples)?;
    let anchor_classes: Vec<usize> = (0..groups.len()).filter(|&g| groups[g].1.len() >= 2).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut optimizer = RmspropState::new(config.learning_rate, config.decay, config.epsilon);
    let mut loss_trace = Vec::with_capacity(config.episodes);
    let mut calm = 0;

    for _ in 0..config.episodes {
        let draws: Vec<Draw> = (0..config.pairs_per_episode)
            .map(|_| draw(&mut rng, &groups, &anchor_classes, config, mixup))
            .collect();
        let results = draws
            .par_iter()
            .map(|d| draw_gradients(&embedder, samples, d))
            .collect::<Result<Vec<_>, _>>()?;

        let mut total = Gradients::zeros_like(embedder.network(), 0);
        let mut loss = 0.0;
        let mut pairs = 0;
        for (l, n, g) in &results {
            loss += l;
            pairs += n;
            total.accumulate(g);
        }
        let scale = 1.0 / pairs as f64;
        total.scale(scale);
        let loss = loss * scale;
        if !loss.is_finite() {
            return Err(SiameseError::Diverged(loss_trace.len() + 1));
        }
        optimizer.step(embedder.network_mut(), &total);
        loss_trace.push(loss);

        calm = if loss < config.early_stop_loss { calm + 1 } else { 0 };
        if calm >= config.patience {
            break;
        }
    }
    embedder.network_mut().round_to_f32();
    if !embedder.network().is_finite() {
        return Err(SiameseError::Diverged(loss_trace.len()));
    }
    Ok(TrainedModel { embedder, loss_trace })
}
