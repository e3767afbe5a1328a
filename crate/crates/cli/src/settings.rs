use std::fmt::Display;
use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::Args;
use mloc::dataio::ConfigFile;
use mloc::inference::DEFAULT_THRESHOLD;
use mloc::sequence::{hop, WCE_FPS};
use mloc::siamese::{MixupConfig, TrainConfig};

/// Keys accepted in a `--config` file.
pub const KNOWN_KEYS: &[&str] = &[
    "seed",
    "tau",
    "alpha",
    "mixes_per_pair",
    "fps",
    "size",
    "episodes",
    "pairs_per_episode",
    "learning_rate",
    "mixup",
    "modality",
    "classes",
    "support",
    "frames",
    "noise",
    "unknown",
];

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Flat key=value file; flags given on the command line win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Open-set threshold on the winning median distance, in (0, 1).
    #[arg(long)]
    pub tau: Option<f64>,
    /// Beta(alpha, alpha) parameter for mixing coefficients.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub mixes_per_pair: Option<usize>,
    /// Frames per second; overrides the video header.
    #[arg(long)]
    pub fps: Option<usize>,
    /// Square input resolution of the image network.
    #[arg(long)]
    pub size: Option<usize>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct TrainArgs {
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub pairs_per_episode: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Train on pure pairs only.
    #[arg(long)]
    pub no_mixup: bool,
    /// Restrict the support set to one modality (CE or WCE).
    #[arg(long)]
    pub modality: Option<String>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct SynthArgs {
    #[arg(long)]
    pub classes: Option<usize>,
    /// Support images per class.
    #[arg(long)]
    pub support: Option<usize>,
    /// Video frames per class.
    #[arg(long)]
    pub frames: Option<usize>,
    /// Perturbation strength in [0, 1].
    #[arg(long)]
    pub noise: Option<f64>,
    /// Frames of a held-out texture family labeled Other.
    #[arg(long)]
    pub unknown: Option<usize>,
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub seed: u64,
    pub tau: f64,
    pub alpha: f64,
    pub mixes_per_pair: usize,
    /// `None` means "take it from the video header".
    pub fps: Option<usize>,
    pub size: usize,
    pub episodes: usize,
    pub pairs_per_episode: usize,
    pub learning_rate: f64,
    pub mixup: bool,
    pub modality: Option<String>,
    pub classes: usize,
    pub support: usize,
    pub frames: usize,
    pub noise: f64,
    pub unknown: usize,
}

fn pick<T: FromStr>(flag: Option<T>, file: &ConfigFile, key: &str, default: T) -> Result<T> {
    match flag {
        Some(v) => Ok(v),
        None => Ok(file.parse_value(key)?.unwrap_or(default)),
    }
}

impl Settings {
    pub fn resolve(common: &Common, train: &TrainArgs, synth: &SynthArgs) -> Result<Self> {
        let file = match &common.config {
            Some(p) => ConfigFile::load(p).with_context(|| format!("reading config {}", p.display()))?,
            None => ConfigFile::default(),
        };
        if let Some(k) = file.keys().find(|k| !KNOWN_KEYS.contains(k)) {
            bail!("unknown config key {k:?}; known keys: {}", KNOWN_KEYS.join(", "));
        }
        let t = TrainConfig::default();
        let m = MixupConfig::default();
        let d = mloc::dataio::SyntheticSpec::default();
        let s = Settings {
            seed: pick(common.seed, &file, "seed", 0)?,
            tau: pick(common.tau, &file, "tau", DEFAULT_THRESHOLD)?,
            alpha: pick(common.alpha, &file, "alpha", m.alpha)?,
            mixes_per_pair: pick(common.mixes_per_pair, &file, "mixes_per_pair", m.mixes_per_pair)?,
            fps: match common.fps {
                Some(f) => Some(f),
                None => file.parse_value("fps")?,
            },
            size: pick(common.size, &file, "size", mloc::embedder::SYNTHETIC_SIZE)?,
            episodes: pick(train.episodes, &file, "episodes", t.episodes)?,
            pairs_per_episode: pick(train.pairs_per_episode, &file, "pairs_per_episode", t.pairs_per_episode)?,
            learning_rate: pick(train.learning_rate, &file, "learning_rate", t.learning_rate)?,
            mixup: if train.no_mixup {
                false
            } else {
                file.parse_value("mixup")?.unwrap_or(true)
            },
            modality: match &train.modality {
                Some(m) => Some(m.clone()),
                None => file.get("modality").map(str::to_string),
            },
            classes: pick(synth.classes, &file, "classes", d.n_classes)?,
            support: pick(synth.support, &file, "support", d.support_per_class)?,
            frames: pick(synth.frames, &file, "frames", d.eval_per_class)?,
            noise: pick(synth.noise, &file, "noise", d.noise)?,
            unknown: pick(synth.unknown, &file, "unknown", d.unknown_frames)?,
        };
        if !(s.tau > 0.0 && s.tau < 1.0) {
            bail!("tau must lie strictly between 0 and 1, got {}", s.tau);
        }
        if s.fps == Some(0) || s.size == 0 {
            bail!("fps and size must be positive");
        }
        Ok(s)
    }

    pub fn modality(&self) -> Result<Option<mloc::dataio::Modality>> {
        self.modality
            .as_deref()
            .map(|m| m.parse().map_err(anyhow::Error::msg))
            .transpose()
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            episodes: self.episodes,
            pairs_per_episode: self.pairs_per_episode,
            seed: self.seed,
            mixup_enabled: self.mixup,
            learning_rate: self.learning_rate,
            ..TrainConfig::default()
        }
    }

    pub fn mixup_config(&self) -> MixupConfig {
        MixupConfig {
            alpha: self.alpha,
            mixes_per_pair: self.mixes_per_pair,
        }
    }

    /// Frames per second: flag or config, else the video's own rate.
    pub fn fps_or(&self, video_fps: usize) -> usize {
        self.fps.unwrap_or(video_fps)
    }

    /// The audit line every command prints.
    pub fn echo(&self, fps: usize) -> String {
        format!(
            "# config seed={} tau={} alpha={} mixes_per_pair={} fps={} hop={}",
            self.seed,
            self.tau,
            self.alpha,
            self.mixes_per_pair,
            fps,
            hop(fps)
        )
    }

    pub fn default_fps(&self) -> usize {
        self.fps.unwrap_or(WCE_FPS)
    }

    /// Every resolved key as a config file, readable by `--config`.
    pub fn to_config_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: &dyn Display| s.push_str(&format!("{k}={v}\n"));
        kv("seed", &self.seed);
        kv("tau", &self.tau);
        kv("alpha", &self.alpha);
        kv("mixes_per_pair", &self.mixes_per_pair);
        kv("fps", &self.default_fps());
        kv("size", &self.size);
        kv("episodes", &self.episodes);
        kv("pairs_per_episode", &self.pairs_per_episode);
        kv("learning_rate", &self.learning_rate);
        kv("mixup", &self.mixup);
        if let Some(m) = &self.modality {
            kv("modality", m);
        }
        s
    }
}
