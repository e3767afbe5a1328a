mod settings;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};

use mloc::catalog::{AnatomicalCatalog, Label};
use mloc::dataio::{export_latents, generate_synthetic, load_image, DatasetManifest, SyntheticSpec};
use mloc::embedder::{ingest_embeddings, EmbeddedItem, Embedder, EmbeddingVector, InputKind};
use mloc::inference::{classify_frame, read_frame_dump, write_frame_dump, SupportIndex};
use mloc::metrics::roc_curve;
use mloc::ndiff::gradcheck::DEFAULT_TOLERANCE;
use mloc::ndiff::{read_checkpoint, to_bytes, Tensor};
use mloc::pipeline::{head_grad_check, network_grad_check, score, score_windows, support_samples};
use mloc::sequence::{classify_video, read_windows, write_windows, VideoManifest};
use mloc::siamese::{train, Sample};

use settings::{Common, Settings, SynthArgs, TrainArgs};

/// Few-shot location classification of endoscopy-style frames and videos.
#[derive(Parser, Debug)]
#[command(name = "mloc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a seeded synthetic dataset: images, manifest and ordered videos.
    GenSynth {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        synth: SynthArgs,
    },
    /// Train the embedder on a manifest's support split.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// Directory for checkpoint.bin, loss_trace.csv and config.txt.
        #[arg(long)]
        out: PathBuf,
        /// Train a feature head on precomputed embeddings instead of images.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Classify one frame against the support set.
    ClassifyFrame {
        #[command(flatten)]
        model: ModelArgs,
        /// Image path, or an embedding id when --embeddings is given.
        #[arg(long)]
        input: String,
        #[command(flatten)]
        common: Common,
    },
    /// Classify every frame of a video, then window and repair the order.
    ClassifyVideo {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        video: PathBuf,
        /// Directory for frames.csv, raw_windows.csv and windows.csv.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Score window predictions (and optionally frame dumps) against manifest labels.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        video: PathBuf,
        #[arg(long)]
        windows: PathBuf,
        /// Frame dump for frame-level metrics and ROC curves.
        #[arg(long)]
        frames: Option<PathBuf>,
        /// Directory for metrics.txt (and frame_metrics.txt, roc.csv).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Write every manifest item's embedding in the exchange format.
    ExportLatents {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Finite-difference check of a freshly initialized network.
    GradCheck {
        #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
        tolerance: f64,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(clap::Args, Debug)]
struct ModelArgs {
    /// Trained parameters; optional with --embeddings, whose vectors are then used as is.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Manifest whose support split forms the index.
    #[arg(long)]
    manifest: PathBuf,
    /// Exchange file resolving ids to embeddings.
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

fn no_train() -> TrainArgs {
    TrainArgs::default()
}

fn no_synth() -> SynthArgs {
    SynthArgs::default()
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

fn load_embeddings(path: &Path) -> Result<BTreeMap<String, EmbeddedItem>> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let ingested = ingest_embeddings(std::io::BufReader::new(f)).with_context(|| format!("ingesting {}", path.display()))?;
    if ingested.renormalized > 0 {
        eprintln!(
            "warning: {} rows of {} were not unit norm and have been renormalized",
            ingested.renormalized,
            path.display()
        );
    }
    Ok(ingested.items)
}

fn load_model(path: &Path, size: usize) -> Result<Embedder> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let net = read_checkpoint(std::io::BufReader::new(f)).with_context(|| format!("reading {}", path.display()))?;
    Ok(Embedder::from_network(net, size)?)
}

/// Maps frame references to embeddings: through image files, through
/// ingested vectors, or through ingested vectors fed to a feature head.
struct Resolver {
    model: Option<Embedder>,
    embeddings: Option<BTreeMap<String, EmbeddedItem>>,
    size: usize,
}

impl Resolver {
    fn new(args: &ModelArgs, size: usize) -> Result<Self> {
        let model = args.checkpoint.as_deref().map(|p| load_model(p, size)).transpose()?;
        let embeddings = args.embeddings.as_deref().map(load_embeddings).transpose()?;
        match (&model, &embeddings) {
            (None, None) => bail!("need --checkpoint, --embeddings, or both"),
            (Some(m), Some(_)) if matches!(m.input_kind(), InputKind::Image { .. }) => {
                bail!("--embeddings needs a feature-head checkpoint (trained with --embeddings) or none")
            }
            (Some(m), None) if matches!(m.input_kind(), InputKind::Features { .. }) => {
                bail!("feature-head checkpoint needs --embeddings")
            }
            _ => {}
        }
        Ok(Self { model, embeddings, size })
    }

    fn resolve(&self, reference: &str, base: &Path) -> Result<EmbeddingVector, String> {
        match (&self.embeddings, &self.model) {
            (Some(items), model) => {
                let item = items.get(reference).ok_or_else(|| format!("no embedding with id {reference:?}"))?;
                match model {
                    Some(m) => m
                        .embed_tensor(&Tensor::from_vec(item.vector.values().to_vec()))
                        .map_err(|e| e.to_string()),
                    None => Ok(item.vector.clone()),
                }
            }
            (None, Some(m)) => {
                let img = load_image(&base.join(reference), self.size).map_err(|e| e.to_string())?;
                m.embed_image(&img).map_err(|e| e.to_string())
            }
            (None, None) => unreachable!("checked in Resolver::new"),
        }
    }

    fn index(&self, manifest: &DatasetManifest, settings: &Settings) -> Result<SupportIndex> {
        let modality = settings.modality()?;
        let mut members = Vec::new();
        for r in manifest.support(modality) {
            let reference = if self.embeddings.is_some() { &r.id } else { &r.path };
            let e = self.resolve(reference, &manifest.root).map_err(|e| anyhow!("support item {}: {e}", r.id))?;
            members.push((r.label.location().expect("support rows carry a location"), e));
        }
        if members.is_empty() {
            bail!("manifest has no support items");
        }
        Ok(SupportIndex::from_members(members))
    }
}

fn gen_synth(out: &Path, s: &Settings) -> Result<()> {
    let spec = SyntheticSpec {
        seed: s.seed,
        n_classes: s.classes,
        support_per_class: s.support,
        eval_per_class: s.frames,
        image_size: s.size,
        noise: s.noise,
        unknown_frames: s.unknown,
        fps: s.default_fps(),
    };
    let d = generate_synthetic(&spec)?;
    d.write_to(out)?;
    println!(
        "wrote {} items ({} video frames, {} unknown) to {}",
        d.manifest.records.len(),
        d.video.frames.len(),
        d.unknown_video.as_ref().map_or(0, |v| v.frames.len()),
        out.display()
    );
    Ok(())
}

fn train_cmd(manifest: &Path, out: &Path, embeddings: Option<&Path>, s: &Settings) -> Result<()> {
    let m = DatasetManifest::load(manifest)?;
    let modality = s.modality()?;
    let (embedder, samples) = match embeddings {
        Some(p) => {
            let items = load_embeddings(p)?;
            let samples = m
                .support(modality)
                .iter()
                .map(|r| {
                    let item = items.get(&r.id).ok_or_else(|| anyhow!("no embedding for support item {}", r.id))?;
                    Ok(Sample {
                        class: r.label.location().expect("support rows carry a location"),
                        input: Tensor::from_vec(item.vector.values().to_vec()),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            (Embedder::feature_head(s.seed, mloc::embedder::EMBEDDING_DIM), samples)
        }
        None => (Embedder::image_network(s.seed, s.size), support_samples(&m, modality, s.size)?),
    };
    let model = train(embedder, &samples, &s.train_config(), &s.mixup_config())?;
    create_dir(out)?;
    write(&out.join("checkpoint.bin"), to_bytes(model.embedder.network()))?;
    write(&out.join("loss_trace.csv"), format!("#episode,loss\n{}", model.loss_trace_text()))?;
    write(&out.join("config.txt"), s.to_config_text())?;
    println!(
        "trained {} episodes on {} support items; final loss {:.6}",
        model.loss_trace.len(),
        samples.len(),
        model.loss_trace.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn classify_frame_cmd(model: &ModelArgs, input: &str, s: &Settings) -> Result<()> {
    let resolver = Resolver::new(model, s.size)?;
    let manifest = DatasetManifest::load(&model.manifest)?;
    let index = resolver.index(&manifest, s)?;
    let e = resolver.resolve(input, Path::new(".")).map_err(|e| anyhow!("frame {input}: {e}"))?;
    let p = classify_frame(&e, &index, s.tau)?;
    let mut out = Vec::new();
    write_frame_dump(&mut out, &index.locations(), &[(input.to_string(), p)])?;
    print!("{}", String::from_utf8(out).expect("dump is UTF-8"));
    Ok(())
}

fn classify_video_cmd(model: &ModelArgs, video: &Path, out: &Path, s: &Settings) -> Result<()> {
    let resolver = Resolver::new(model, s.size)?;
    let manifest = DatasetManifest::load(&model.manifest)?;
    let index = resolver.index(&manifest, s)?;
    let mut v = VideoManifest::parse(&read_text(video)?).with_context(|| format!("parsing {}", video.display()))?;
    v.fps = s.fps_or(v.fps);
    let base = video.parent().unwrap_or(Path::new(".")).to_path_buf();
    let by_id = resolver.embeddings.is_some();
    let pred = classify_video(&v, &index, s.tau, &AnatomicalCatalog::default(), |id, r| {
        match resolver.resolve(r, &base) {
            Err(_) if by_id => resolver.resolve(id, &base),
            other => other,
        }
    })?;
    create_dir(out)?;
    let mut frames = Vec::new();
    write_frame_dump(&mut frames, &index.locations(), &pred.frames)?;
    write(&out.join("frames.csv"), frames)?;
    let mut raw = Vec::new();
    write_windows(&mut raw, &pred.raw_windows)?;
    write(&out.join("raw_windows.csv"), raw)?;
    let mut windows = Vec::new();
    write_windows(&mut windows, &pred.windows)?;
    write(&out.join("windows.csv"), windows)?;
    let demoted = pred
        .raw_windows
        .iter()
        .zip(&pred.windows)
        .filter(|(a, b)| a.label != b.label)
        .count();
    println!(
        "{} frames, {} windows, {} demoted by order repair",
        pred.frames.len(),
        pred.windows.len(),
        demoted
    );
    Ok(())
}

fn frame_truth(manifest: &DatasetManifest, video: &VideoManifest) -> Result<Vec<Label>> {
    video
        .frames
        .iter()
        .map(|(id, _)| {
            manifest
                .get(id)
                .map(|r| r.label)
                .ok_or_else(|| anyhow!("frame {id} has no manifest record"))
        })
        .collect()
}

fn evaluate_cmd(
    manifest: &Path,
    video: &Path,
    windows: &Path,
    frames: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    let m = DatasetManifest::load(manifest)?;
    let v = VideoManifest::parse(&read_text(video)?).with_context(|| format!("parsing {}", video.display()))?;
    let truth = frame_truth(&m, &v)?;
    let w = read_windows(&read_text(windows)?).map_err(|e| anyhow!("parsing {}: {e}", windows.display()))?;
    let report = score_windows(&w, &truth)?.to_text();
    println!("{report}");
    let mut extra = Vec::new();
    if let Some(f) = frames {
        let rows = read_frame_dump(&read_text(f)?).map_err(|e| anyhow!("parsing {}: {e}", f.display()))?;
        let by_id: BTreeMap<&str, Label> = v.frames.iter().map(|(id, _)| id.as_str()).zip(truth.iter().copied()).collect();
        let t = rows
            .iter()
            .map(|r| by_id.get(r.frame_id.as_str()).copied().ok_or_else(|| anyhow!("frame {} not in video", r.frame_id)))
            .collect::<Result<Vec<_>>>()?;
        let predicted: Vec<Label> = rows.iter().map(|r| r.label).collect();
        let frame_report = score(&predicted, &t)?.to_text();
        let classes: Vec<_> = rows.first().map(|r| r.medians.iter().map(|(c, _)| *c).collect()).unwrap_or_default();
        let scores: Vec<Vec<f64>> = rows.iter().map(|r| r.medians.iter().map(|(_, d)| -d).collect()).collect();
        let roc = roc_curve(&scores, &t, &classes)?;
        println!("# frames\n{frame_report}\n{}", roc.summary());
        extra.push(("frame_metrics.txt", frame_report));
        extra.push(("roc.csv", roc.to_text()));
    }
    if let Some(dir) = out {
        create_dir(dir)?;
        write(&dir.join("metrics.txt"), &report)?;
        for (name, text) in extra {
            write(&dir.join(name), text)?;
        }
    }
    Ok(())
}

fn export_cmd(checkpoint: &Path, manifest: &Path, out: &Path, s: &Settings) -> Result<()> {
    let model = load_model(checkpoint, s.size)?;
    let m = DatasetManifest::load(manifest)?;
    let mut buf = Vec::new();
    let n = export_latents(&model, &m, &mut buf)?;
    write(out, buf)?;
    println!("exported {n} embeddings to {}", out.display());
    Ok(())
}

/// Returns whether every block passed.
fn grad_check_cmd(tolerance: f64, s: &Settings) -> Result<bool> {
    let size = s.size;
    let net = network_grad_check(s.seed, size, tolerance)?;
    println!("# network ({size}x{size} input)\n{net}");
    let head = head_grad_check(s.seed, size, 0.5, tolerance)?;
    println!("# siamese pair loss\n{head}");
    Ok(net.passed() && head.passed())
}

fn run(cli: Cli) -> Result<bool> {
    let echo = |s: &Settings, fps: usize| println!("{}", s.echo(fps));
    match cli.command {
        Command::GenSynth { out, common, synth } => {
            let s = Settings::resolve(&common, &no_train(), &synth)?;
            echo(&s, s.default_fps());
            gen_synth(&out, &s)?;
        }
        Command::Train {
            manifest,
            out,
            embeddings,
            common,
            train,
        } => {
            let s = Settings::resolve(&common, &train, &no_synth())?;
            echo(&s, s.default_fps());
            train_cmd(&manifest, &out, embeddings.as_deref(), &s)?;
        }
        Command::ClassifyFrame { model, input, common } => {
            let s = Settings::resolve(&common, &no_train(), &no_synth())?;
            echo(&s, s.default_fps());
            classify_frame_cmd(&model, &input, &s)?;
        }
        Command::ClassifyVideo {
            model,
            video,
            out,
            common,
        } => {
            let s = Settings::resolve(&common, &no_train(), &no_synth())?;
            let header_fps = VideoManifest::parse(&read_text(&video)?).map(|v| v.fps).unwrap_or(s.default_fps());
            echo(&s, s.fps_or(header_fps));
            classify_video_cmd(&model, &video, &out, &s)?;
        }
        Command::Evaluate {
            manifest,
            video,
            windows,
            frames,
            out,
            common,
        } => {
            let s = Settings::resolve(&common, &no_train(), &no_synth())?;
            echo(&s, s.default_fps());
            evaluate_cmd(&manifest, &video, &windows, frames.as_deref(), out.as_deref())?;
        }
        Command::ExportLatents {
            checkpoint,
            manifest,
            out,
            common,
        } => {
            let s = Settings::resolve(&common, &no_train(), &no_synth())?;
            echo(&s, s.default_fps());
            export_cmd(&checkpoint, &manifest, &out, &s)?;
        }
        Command::GradCheck { tolerance, common } => {
            let s = Settings::resolve(&common, &no_train(), &no_synth())?;
            echo(&s, s.default_fps());
            return grad_check_cmd(tolerance, &s);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: gradient check failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
