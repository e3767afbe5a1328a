//! One pass/fail line per acceptance criterion. Runs without the libtest
//! harness so the lines always reach the terminal.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use mloc::catalog::{AnatomicalCatalog, Label, Location};
use mloc::dataio::SyntheticSpec;
use mloc::embedder::{EmbeddingVector, EMBEDDING_DIM};
use mloc::inference::{classify_frame, leave_one_out_threshold, SupportIndex, DEFAULT_THRESHOLD};
use mloc::metrics::{evaluate, roc_binary, ConfusionMatrix};
use mloc::ndiff::gradcheck::DEFAULT_TOLERANCE;
use mloc::ndiff::{finite_diff_check, Layer, Network, Tensor};
use mloc::pipeline::{head_grad_check, network_grad_check, run_synthetic, SyntheticRun};
use mloc::sequence::{enforce_anatomical_order, WindowPrediction};
use mloc::siamese::{contrastive_loss, mix, mixup_pairs, sample_lambda, Labeled, MixupConfig, TrainConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn loc(name: &str) -> Location {
    name.parse::<Label>().unwrap().location().unwrap()
}

fn criterion_1() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let layers: Vec<(&str, Network, Vec<usize>)> = vec![
        ("conv2d", Network::new(vec![Layer::conv2d(&mut rng, 3, 4, 2)]), vec![3, 9, 8]),
        ("relu", Network::new(vec![Layer::Relu]), vec![2, 5, 5]),
        ("global_max_pool", Network::new(vec![Layer::GlobalMaxPool]), vec![4, 6, 6]),
        ("dense", Network::new(vec![Layer::dense(&mut rng, 16, 64)]), vec![16]),
        ("l2_normalize", Network::new(vec![Layer::L2Normalize]), vec![64]),
    ];
    let mut worst: f64 = 0.0;
    for (name, net, shape) in &layers {
        let n: usize = shape.iter().product();
        let x = Tensor::new(shape.clone(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let out: usize = net.output_shape(shape).unwrap().iter().product();
        let w: Vec<f64> = (0..out).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r = finite_diff_check(
            net,
            &x,
            |y| (y.data().iter().zip(&w).map(|(a, b)| a * b).sum(), w.clone()),
            DEFAULT_TOLERANCE,
        )
        .map_err(|e| e.to_string())?;
        ensure(r.passed(), format!("{name}:\n{r}"))?;
        worst = worst.max(r.worst());
    }
    let net = network_grad_check(0, 64, DEFAULT_TOLERANCE).map_err(|e| e.to_string())?;
    ensure(net.passed(), format!("embedder:\n{net}"))?;
    worst = worst.max(net.worst());
    for target in [0.0, 0.5, 1.0] {
        let head = head_grad_check(0, 64, target, DEFAULT_TOLERANCE).map_err(|e| e.to_string())?;
        ensure(head.passed(), format!("pair loss, target {target}:\n{head}"))?;
        worst = worst.max(head.worst());
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 60.0, format!("took {secs:.1}s"))?;
    Ok(format!("worst relative error {worst:.2e} < 1e-4, {secs:.1}s"))
}

fn criterion_2() -> Check {
    ensure(contrastive_loss(0.0, 0.0) == 0.0, "L(0,0)")?;
    ensure(contrastive_loss(0.5, 1.0) == 0.25, "L(0.5,1)")?;
    let a = [0.3, -1.0, 2.5];
    let b = [1.5, 0.25, -4.0];
    ensure(mix(1.0, &a, &b) == a, "Mix_1(a,b) = a")?;
    ensure(mix(0.0, &a, &b) == b, "Mix_0(a,b) = b")?;
    let (c1, c2) = (loc("Cardia"), loc("Colon"));
    let pairs = mixup_pairs(
        Labeled { latent: &a, class: c1 },
        Labeled { latent: &a, class: c1 },
        Labeled { latent: &b, class: c2 },
        &[1.0, 0.0],
    )
    .map_err(|e| e.to_string())?;
    ensure(pairs[0].target == 0.0 && pairs[0].partner == a, "lambda 1 is the positive pair")?;
    ensure(pairs[1].target == 1.0 && pairs[1].partner == b, "lambda 0 is the negative pair")?;
    Ok("L(0,0)=0, L(0.5,1)=0.25, Mix_1=a, Mix_0=b, endpoint targets 0 and 1".into())
}

fn criterion_3() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 100_000;
    let xs: Vec<f64> = (0..n).map(|_| sample_lambda(&mut rng, 2.0)).collect();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    ensure((mean - 0.5).abs() <= 0.01, format!("mean {mean}"))?;
    ensure((var - 0.05).abs() <= 0.005, format!("variance {var}"))?;
    Ok(format!("mean {mean:.4}, variance {var:.4}"))
}

fn few_shot_run() -> Result<(SyntheticRun, f64), String> {
    let spec = SyntheticSpec {
        seed: 0,
        unknown_frames: 40,
        ..SyntheticSpec::default()
    };
    let start = Instant::now();
    let run = run_synthetic(&spec, &TrainConfig::default(), &MixupConfig::default(), DEFAULT_THRESHOLD)
        .map_err(|e| e.to_string())?;
    Ok((run, start.elapsed().as_secs_f64()))
}

fn criterion_4(run: &SyntheticRun, secs: f64) -> Check {
    let spec = &run.dataset.spec;
    ensure(spec.n_classes == 10 && spec.support_per_class == 5, "scale")?;
    ensure(run.model.loss_trace.len() <= 200, "episodes")?;
    ensure(run.frame_truth.len() >= 200, "held-out frames")?;
    let m = &run.window_report.macro_avg;
    let detail = format!(
        "{} frames, {} windows, {} episodes: macro F1 {:.4}, overall accuracy {:.4} (frame-level F1 {:.4}), {secs:.0}s",
        run.frame_truth.len(),
        run.video.windows.len(),
        run.model.loss_trace.len(),
        m.f1,
        m.overall_accuracy,
        run.frame_report.macro_avg.f1
    );
    ensure(m.f1 >= 0.90 && m.overall_accuracy >= 0.90, detail.clone())?;
    ensure(secs < 600.0, detail.clone())?;
    Ok(detail)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn criterion_5() -> Check {
    let seeds = [0u64, 1, 2, 3, 4];
    let f1 = |noise: f64, mixup: bool| -> Result<Vec<f64>, String> {
        seeds
            .iter()
            .map(|&seed| {
                let spec = SyntheticSpec {
                    seed,
                    noise,
                    ..SyntheticSpec::default()
                };
                let cfg = TrainConfig {
                    seed,
                    mixup_enabled: mixup,
                    ..TrainConfig::default()
                };
                run_synthetic(&spec, &cfg, &MixupConfig::default(), DEFAULT_THRESHOLD)
                    .map(|r| r.window_report.macro_avg.f1)
                    .map_err(|e| e.to_string())
            })
            .collect()
    };
    let mut ladder = Vec::new();
    let mut level = None;
    for step in 2..=10 {
        let noise = step as f64 / 10.0;
        let plain = f1(noise, false)?;
        ladder.push(format!("{noise:.1}:{:.3}", mean(&plain)));
        if mean(&plain) < 0.85 {
            level = Some((noise, plain));
            break;
        }
    }
    let (noise, plain) = level.ok_or_else(|| format!("no-mixup F1 never fell below 0.85 ({})", ladder.join(" ")))?;
    let mixed = f1(noise, true)?;
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(",");
    let detail = format!(
        "noise {noise:.1} (ladder {}): mean macro F1 with mixup {:.4} [{}] vs without {:.4} [{}]",
        ladder.join(" "),
        mean(&mixed),
        fmt(&mixed),
        mean(&plain),
        fmt(&plain)
    );
    ensure(mean(&mixed) >= mean(&plain), detail.clone())?;
    Ok(detail)
}

/// Per-class medians by direct enumeration of every query-support distance.
fn audit_winning_median(query: &EmbeddingVector, index: &SupportIndex) -> f64 {
    index
        .classes()
        .map(|(_, members)| {
            let mut d: Vec<f64> = members
                .iter()
                .map(|m| {
                    let sq: f64 = (0..EMBEDDING_DIM).map(|k| (query.values()[k] - m.values()[k]).powi(2)).sum();
                    2.0 / (1.0 + (-sq.sqrt()).exp()) - 1.0
                })
                .collect();
            d.sort_by(f64::total_cmp);
            let n = d.len();
            if n % 2 == 1 {
                d[n / 2]
            } else {
                (d[n / 2 - 1] + d[n / 2]) / 2.0
            }
        })
        .fold(f64::INFINITY, f64::min)
}

fn criterion_6(run: &SyntheticRun) -> Check {
    let unknown = run.dataset.unknown_video.as_ref().ok_or("no held-out frames")?;
    let embed = |id: &str| run.model.embedder.embed_image(run.dataset.image(id).unwrap()).unwrap();
    let queries: Vec<EmbeddingVector> = unknown.frames.iter().map(|(id, _)| embed(id)).collect();
    let known: Vec<EmbeddingVector> = run.dataset.video.frames.iter().map(|(id, _)| embed(id)).collect();
    let audit: Vec<f64> = queries.iter().map(|q| audit_winning_median(q, &run.index)).collect();
    let above = |tau: f64| audit.iter().filter(|&&m| m > tau).count() as f64 / audit.len() as f64;
    let rejected = |tau: f64, qs: &[EmbeddingVector]| {
        qs.iter()
            .filter(|q| classify_frame(q, &run.index, tau).unwrap().label.is_other())
            .count() as f64
            / qs.len() as f64
    };
    let tau = if above(DEFAULT_THRESHOLD) >= 0.80 {
        DEFAULT_THRESHOLD
    } else {
        leave_one_out_threshold(&run.index).ok_or("support too small to calibrate")?
    };
    let rate = rejected(tau, &queries);
    let audit_min = audit.iter().copied().fold(f64::INFINITY, f64::min);
    let detail = format!(
        "audit: {:.0}% of held-out medians exceed 0.5 (min {audit_min:.3}); tau {tau:.4}{}: {:.1}% of {} held-out frames rejected, {:.1}% of known frames rejected",
        100.0 * above(DEFAULT_THRESHOLD),
        if tau == DEFAULT_THRESHOLD { "" } else { " (leave-one-out calibrated)" },
        100.0 * rate,
        queries.len(),
        100.0 * rejected(tau, &known)
    );
    ensure((rate - above(tau)).abs() < 1e-12, format!("classifier disagrees with audit; {detail}"))?;
    ensure(rate >= 0.80, detail.clone())?;
    Ok(detail)
}

fn criterion_7() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let unit = |rng: &mut ChaCha8Rng| {
        EmbeddingVector::normalized((0..EMBEDDING_DIM).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    };
    let mut outcomes = [0usize; 2];
    for case in 0..50 {
        let n_classes = rng.random_range(1..=4);
        let mut ids: Vec<u32> = (1..=10).collect();
        ids.shuffle(&mut rng);
        let mut members = Vec::new();
        for &id in &ids[..n_classes] {
            for _ in 0..rng.random_range(1..=5) {
                members.push((Location::new(id).unwrap(), unit(&mut rng)));
            }
        }
        let query = if rng.random_bool(0.5) {
            members[rng.random_range(0..members.len())].1.clone()
        } else {
            unit(&mut rng)
        };
        let tau = rng.random_range(0.05..0.95);
        let got = classify_frame(&query, &SupportIndex::from_members(members.clone()), tau).map_err(|e| e.to_string())?;

        let mut classes: Vec<Location> = members.iter().map(|(c, _)| *c).collect();
        classes.sort();
        classes.dedup();
        let mut best: Option<(Location, f64)> = None;
        for &c in &classes {
            let mut d: Vec<f64> = members
                .iter()
                .filter(|(mc, _)| *mc == c)
                .map(|(_, m)| {
                    let sq: f64 = (0..EMBEDDING_DIM).map(|k| (query.values()[k] - m.values()[k]).powi(2)).sum();
                    (sq.sqrt() * 0.5).tanh()
                })
                .collect();
            d.sort_by(f64::total_cmp);
            let n = d.len();
            let med = if n % 2 == 1 { d[n / 2] } else { 0.5 * (d[n / 2 - 1] + d[n / 2]) };
            ensure(got.median_for(c) == Some(med), format!("case {case}: median of {c}"))?;
            if best.is_none_or(|(_, b)| med < b) {
                best = Some((c, med));
            }
        }
        let (c, m) = best.unwrap();
        let want = if m > tau { Label::Other } else { Label::Location(c) };
        ensure(got.label == want && got.winning_median == m, format!("case {case}: label"))?;
        outcomes[want.is_other() as usize] += 1;
    }
    Ok(format!(
        "50 instances match exactly ({} accepted, {} rejected)",
        outcomes[0], outcomes[1]
    ))
}

fn window(label: Label, avg: f64) -> WindowPrediction {
    WindowPrediction {
        start: 0,
        end: 0,
        label,
        group_avg_distance: avg,
    }
}

fn criterion_8() -> Check {
    let cat = AnatomicalCatalog::default();
    let l = |n: &str| Label::Location(loc(n));
    let labels = |ws: Vec<WindowPrediction>| ws.into_iter().map(|w| w.label).collect::<Vec<_>>();
    let a = vec![window(l("Esophagus"), 0.3), window(l("Cardia"), 0.3), window(l("Pylorus"), 0.3)];
    ensure(enforce_anatomical_order(&a, &cat) == a, "ordered case")?;
    let b = vec![window(l("Esophagus"), 0.1), window(l("Colon"), 0.6), window(l("Cardia"), 0.2)];
    ensure(
        labels(enforce_anatomical_order(&b, &cat)) == vec![l("Esophagus"), Label::Other, l("Cardia")],
        "three-window case",
    )?;
    let c = vec![window(l("Colon"), 0.2), window(l("Cardia"), 0.6)];
    ensure(
        labels(enforce_anatomical_order(&c, &cat)) == vec![l("Colon"), Label::Other],
        "two-window case",
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for case in 0..1000 {
        let n = rng.random_range(0..40);
        let ws: Vec<WindowPrediction> = (0..n)
            .map(|_| {
                let idx = rng.random_range(0..=10);
                window(Label::from_index(idx).unwrap(), rng.random_range(0.0..1.0))
            })
            .collect();
        let out = enforce_anatomical_order(&ws, &cat);
        let idx: Vec<u32> = out.iter().filter(|w| !w.label.is_other()).map(|w| w.label.index()).collect();
        ensure(idx.windows(2).all(|p| p[0] <= p[1]), format!("fuzz case {case} not monotone"))?;
    }
    Ok("3 hand cases exact; 1000 fuzzed sequences monotone after repair".into())
}

fn criterion_9() -> Check {
    let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
    let (c1, c2) = (Label::from_index(1).unwrap(), Label::from_index(2).unwrap());
    let cm = ConfusionMatrix::from_counts(vec![c1, c2], vec![vec![8, 2], vec![1, 9]]).ok_or("matrix")?;
    let r = evaluate(&cm);
    let k = &r.classes[0];
    ensure(
        close(k.precision, 8.0 / 9.0) && close(k.recall, 0.8) && close(k.specificity, 0.9) && close(k.f1, 16.0 / 19.0),
        "2x2 hand matrix",
    )?;
    ensure(close(k.balanced_auc, 0.85) && close(k.accuracy_literal, 0.4) && close(k.accuracy_standard, 0.85), "2x2 accuracy and AUC")?;
    let (p2, r2, s2) = (9.0 / 11.0, 0.9, 0.8);
    let (mp, mr, ms) = ((8.0 / 9.0 + p2) / 2.0, (0.8 + r2) / 2.0, (0.9 + s2) / 2.0);
    ensure(close(r.macro_avg.f1, 2.0 * mp * mr / (mp + mr)), "macro F1")?;
    ensure(close(r.macro_avg.auc, (mr + ms) / 2.0), "macro AUC")?;
    ensure(close(r.macro_avg.overall_accuracy, 17.0 / 20.0), "overall accuracy")?;

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut scores: Vec<f64> = (0..40).map(|i| i as f64 + rng.random_range(0.0..0.5)).collect();
    scores.shuffle(&mut rng);
    let positive: Vec<bool> = (0..40).map(|_| rng.random_bool(0.4)).collect();
    let (_, area) = roc_binary(&scores, &positive);
    let (mut wins, mut pairs) = (0.0, 0.0);
    for i in 0..40 {
        for j in 0..40 {
            if positive[i] && !positive[j] {
                pairs += 1.0;
                wins += (scores[i] > scores[j]) as u8 as f64;
            }
        }
    }
    let area = area.ok_or("one-sided labels")?;
    ensure(close(area, wins / pairs), format!("ROC {area} vs ranking {}", wins / pairs))?;

    let perfect = ConfusionMatrix::from_counts(
        vec![c1, c2, Label::from_index(3).unwrap()],
        vec![vec![4, 0, 0], vec![0, 7, 0], vec![0, 0, 2]],
    )
    .ok_or("matrix")?;
    let p = evaluate(&perfect).macro_avg;
    ensure(p.f1 == 1.0 && p.auc == 1.0 && p.overall_accuracy == 1.0, "perfect predictions")?;
    let (_, perfect_roc) = roc_binary(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]);
    ensure(perfect_roc == Some(1.0), "perfect ROC")?;
    Ok(format!("hand matrices exact to 1e-12; ROC area {area:.6} equals ranking oracle; perfect -> 1"))
}

fn mloc_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_mloc"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(
        out.status.success(),
        format!("mloc {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)),
    )
}

fn cli_run(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let p = |s: &str| dir.join(s).to_string_lossy().into_owned();
    let common = ["--seed", "7", "--size", "32"];
    let with = |head: &[&str]| -> Vec<String> { head.iter().chain(&common).map(|s| s.to_string()).collect() };
    let run = |v: Vec<String>| mloc_cli(&v.iter().map(String::as_str).collect::<Vec<_>>());
    run(with(&["gen-synth", "--out", &p("ds"), "--classes", "4", "--support", "3", "--frames", "10", "--noise", "0.2"]))?;
    run(with(&["train", "--manifest", &p("ds/manifest.txt"), "--out", &p("model"), "--episodes", "15"]))?;
    run(with(&[
        "classify-video",
        "--checkpoint",
        &p("model/checkpoint.bin"),
        "--manifest",
        &p("ds/manifest.txt"),
        "--video",
        &p("ds/video.txt"),
        "--out",
        &p("pred"),
    ]))?;
    run(with(&[
        "evaluate",
        "--manifest",
        &p("ds/manifest.txt"),
        "--video",
        &p("ds/video.txt"),
        "--windows",
        &p("pred/windows.csv"),
        "--frames",
        &p("pred/frames.csv"),
        "--out",
        &p("eval"),
    ]))?;
    [
        "model/checkpoint.bin",
        "model/loss_trace.csv",
        "pred/frames.csv",
        "pred/windows.csv",
        "eval/metrics.txt",
        "eval/roc.csv",
    ]
    .iter()
    .map(|f| std::fs::read(dir.join(f)).map(|b| (f.to_string(), b)).map_err(|e| format!("{f}: {e}")))
    .collect()
}

fn criterion_10() -> Check {
    let (a, b) = (tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?);
    let first = cli_run(a.path())?;
    let second = cli_run(b.path())?;
    for ((name, x), (_, y)) in first.iter().zip(&second) {
        ensure(x == y, format!("{name} differs between runs"))?;
    }
    Ok(format!(
        "{} artifacts byte-identical across two seeded CLI runs",
        first.len()
    ))
}

fn report(n: usize, title: &str, f: impl FnOnce() -> Check) -> bool {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    match outcome {
        Ok(detail) => {
            println!("criterion {n:>2} PASS  {title}: {detail}");
            true
        }
        Err(detail) => {
            println!("criterion {n:>2} FAIL  {title}: {detail}");
            false
        }
    }
}

fn main() {
    let total = Instant::now();
    let mut ok = true;
    ok &= report(1, "gradient correctness", criterion_1);
    ok &= report(2, "loss and mixup identities", criterion_2);
    ok &= report(3, "Beta(2,2) sampler moments", criterion_3);
    let shared = catch_unwind(few_shot_run).unwrap_or_else(|_| Err("few-shot run panicked".into()));
    match &shared {
        Ok((run, secs)) => {
            ok &= report(4, "few-shot synthetic pipeline", || criterion_4(run, *secs));
            ok &= report(6, "open-set rejection", || criterion_6(run));
        }
        Err(e) => {
            ok &= report(4, "few-shot synthetic pipeline", || Err(e.clone()));
            ok &= report(6, "open-set rejection", || Err(e.clone()));
        }
    }
    ok &= report(5, "mixup ablation direction", criterion_5);
    ok &= report(7, "classifier oracle equivalence", criterion_7);
    ok &= report(8, "anatomical order repair", criterion_8);
    ok &= report(9, "metrics fidelity", criterion_9);
    ok &= report(10, "CLI determinism", criterion_10);
    println!(
        "acceptance: {} in {:.0}s",
        if ok { "all criteria pass" } else { "FAILURES" },
        total.elapsed().as_secs_f64()
    );
    if !ok {
        std::process::exit(1);
    }
}
