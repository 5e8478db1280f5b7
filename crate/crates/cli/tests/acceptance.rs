//! Acceptance run: one PASS/FAIL line per criterion, each with what was
//! measured, the pinned tolerance and the time budget. Exits non-zero if any
//! criterion fails.
//!
//! The end-to-end criterion runs the full desk-scale experiment through the
//! `agf` binary, so the whole target takes several minutes; pass name
//! fragments after `--` to run a subset.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use agf_cli::{manifest_name, RunManifest};
use agf_core::dataset::{build_phantom_dataset, make_folds, DatasetManifest, LesionClass, PhantomConfig};
use agf_core::evaluation::{run_classic_arm, tsne_embed, ConfusionMatrix, Curve, ExperimentConfig, MetricsReport, TsneConfig};
use agf_core::imageops::{expand_augmentations, AugmentationPlan};
use agf_core::models::{build_classifier, build_dcgan_discriminator, build_dcgan_generator, ClassifierArch, GanArch, Layer, Mode, Model, NetInput, Shape};
use agf_core::training::{generate, DcganTrainer, NoiseDist, TrainConfig};
use agf_tensor::{Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_pcg::Pcg64;

#[allow(dead_code)]
#[path = "../../tensor/tests/gradients.rs"]
mod gradients;

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_pp(got: f64, want_pct: f64, what: &str, worst: &mut f64) -> Result<(), String> {
    let dev = (got * 100.0 - want_pct).abs();
    *worst = worst.max(dev);
    ensure(dev <= 0.1, || format!("{what}: {:.3}% vs {want_pct}%", got * 100.0))
}

const CLASSIC_COUNTS: [[u64; 3]; 3] = [[52, 1, 0], [2, 44, 18], [0, 18, 47]];
const SYNTHETIC_COUNTS: [[u64; 3]; 3] = [[53, 0, 0], [2, 52, 10], [1, 13, 51]];

fn metric_oracle() -> Check {
    let mut worst = 0.0f64;
    let cases = [
        (CLASSIC_COUNTS, [98.1, 68.7, 72.3], [98.4, 83.9, 84.6], None, (78.6, 88.4)),
        (SYNTHETIC_COUNTS, [100.0, 81.2, 78.5], [97.7, 89.0, 91.4], Some(85.7), (85.7, 92.4)),
    ];
    for (i, (counts, sens, spec, total, weighted)) in cases.into_iter().enumerate() {
        let cm = ConfusionMatrix::from_counts(counts);
        let table = ["classic", "synthetic"][i];
        for (c, class) in LesionClass::ALL.into_iter().enumerate() {
            let s = cm.sensitivity(class).map_err(|e| e.to_string())?;
            let p = cm.specificity(class).map_err(|e| e.to_string())?;
            within_pp(s, sens[c], &format!("{table} matrix {class} sensitivity"), &mut worst)?;
            within_pp(p, spec[c], &format!("{table} matrix {class} specificity"), &mut worst)?;
        }
        let report = MetricsReport::from_confusion(cm, 0, vec![0]).map_err(|e| e.to_string())?;
        if let Some(t) = total {
            within_pp(report.total_accuracy, t, &format!("{table} matrix total accuracy"), &mut worst)?;
        }
        within_pp(report.weighted_sensitivity, weighted.0, &format!("{table} matrix weighted sensitivity"), &mut worst)?;
        within_pp(report.weighted_specificity, weighted.1, &format!("{table} matrix weighted specificity"), &mut worst)?;
    }
    Ok(format!("22 rates, worst deviation {worst:.3} pp (tolerance 0.1 pp)"))
}

fn gradient_suite() -> Check {
    let mut failed = Vec::new();
    for (name, check) in gradients::SUITE {
        if catch_unwind(check).is_err() {
            failed.push(*name);
        }
    }
    ensure(failed.is_empty(), || format!("failing checks: {}", failed.join(", ")))?;
    Ok(format!(
        "{} operation groups × 20 seeds at f64, rel. error < 1e-4 (< 1e-3 through batch norm)",
        gradients::SUITE.len()
    ))
}

fn spatial_chain(shapes: &[Shape]) -> Vec<usize> {
    let mut sides = Vec::new();
    for s in shapes {
        if let Shape::Chw(_, h, _) = s {
            if sides.last() != Some(h) {
                sides.push(*h);
            }
        }
    }
    sides
}

fn architecture_locks() -> Check {
    let clf = build_classifier(&ClassifierArch::default()).map_err(|e| e.to_string())?;
    let params = clf.param_count();
    ensure((1_170_000..=1_430_000).contains(&params), || format!("classifier has {params} parameters"))?;

    let gen = build_dcgan_generator(&GanArch::default()).map_err(|e| e.to_string())?;
    let chain = spatial_chain(&gen.body_shapes().map_err(|e| e.to_string())?);
    ensure(chain == [4, 8, 16, 32, 64], || format!("generator spatial chain {chain:?}"))?;
    let kernels: Vec<usize> = gen
        .body
        .iter()
        .filter_map(|l| if let Layer::ConvTranspose2d { kernel, .. } = l { Some(*kernel) } else { None })
        .collect();
    ensure(kernels == [5; 4], || format!("transposed-convolution kernels {kernels:?}"))?;

    // Noise far outside the training range still maps into the open interval.
    let mut model = Model::<f32>::init(&gen, 0).map_err(|e| e.to_string())?;
    let mut g = Graph::new();
    let vars = model.bind(&mut g, false);
    let mut r = Pcg64::seed_from_u64(1);
    let z = g.input(Tensor::from_fn(&[4, 100], |_| 50.0 * r.random_range(-1.0f32..1.0)));
    let out = model
        .forward(&mut g, &vars, NetInput::Noise { z, classes: None }, Mode::TRAIN, &mut Pcg64::seed_from_u64(0))
        .map_err(|e| e.to_string())?;
    let peak = g.value(out.outputs[0]).data().iter().fold(0.0f32, |m, v| m.max(v.abs()));
    ensure(peak < 1.0, || format!("generator output reaches {peak}"))?;

    let plan = AugmentationPlan::new(30, 3, 7, 5, 0).map_err(|e| e.to_string())?;
    let ds = build_phantom_dataset(&PhantomConfig { counts: [3, 3, 3], ..Default::default() }).map_err(|e| e.to_string())?;
    let per_roi = expand_augmentations(&ds.phantoms[0].source, &plan).map_err(|e| e.to_string())?.len();
    ensure(plan.total_per_roi() == 480 && per_roi == 480, || format!("plan (30,3,7,5) gives {per_roi} per ROI"))?;

    Ok(format!(
        "classifier {params} params in [1.17M, 1.43M]; generator 4→8→16→32→64, 5×5 kernels, |output| ≤ {peak:.4} < 1; plan (30,3,7,5) → {per_roi} per ROI"
    ))
}

fn degenerate_gan() -> Check {
    let arch = GanArch { image_size: 16, gen_base: 32, disc_base: 16, noise_dim: 100 };
    let run = || -> Result<(f64, String), String> {
        let cfg = TrainConfig { epochs: 1000, max_iterations: Some(200), seed: 0, ..TrainConfig::dcgan() };
        let gen = build_dcgan_generator(&arch).map_err(|e| e.to_string())?;
        let disc = build_dcgan_discriminator(&arch).map_err(|e| e.to_string())?;
        // A single distinct image, repeated to fill batches.
        let imgs = vec![vec![0.8f32; 256]; 64];
        let out = DcganTrainer::new(&gen, &disc, &cfg)
            .and_then(|t| t.train(&imgs, |_, _| Ok(())))
            .map_err(|e| e.to_string())?;
        let iterations = out.log.records.last().map_or(0, |r| r.iterations);
        ensure(iterations <= 200, || format!("trained for {iterations} iterations"))?;
        let samples = generate(&out.generator, None, 64, 1, NoiseDist::Uniform).map_err(|e| e.to_string())?;
        let rms = samples
            .iter()
            .map(|(_, im)| (im.pixels().iter().map(|&v| f64::from(v - 0.8).powi(2)).sum::<f64>() / 256.0).sqrt())
            .sum::<f64>()
            / samples.len() as f64;
        Ok((rms, out.generator.digest()))
    };
    let (rms, digest) = run()?;
    ensure(rms < 0.1, || format!("mean RMS distance {rms:.4} after 200 iterations"))?;
    let (rms2, digest2) = run()?;
    ensure(rms2 == rms && digest2 == digest, || "a second run with the same seed differs".into())?;
    Ok(format!("16×16 constant 0.8: mean RMS {rms:.4} < 0.1 after 200 iterations; rerun bit-identical"))
}

struct Agf {
    dir: tempfile::TempDir,
}

impl Agf {
    fn new() -> Result<Self, String> {
        Ok(Agf { dir: tempfile::tempdir().map_err(|e| e.to_string())? })
    }

    fn data(&self) -> PathBuf {
        self.dir.path().join("data")
    }

    fn run(&self, args: &[&str]) -> Result<String, String> {
        let o = Command::new(env!("CARGO_BIN_EXE_agf"))
            .args(args)
            .env("AGF_DATA_DIR", self.data())
            .current_dir(self.dir.path())
            .output()
            .map_err(|e| e.to_string())?;
        if !o.status.success() {
            return Err(format!("agf {args:?} exited {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr).trim()));
        }
        Ok(String::from_utf8_lossy(&o.stdout).into_owned())
    }

    fn manifest(&self, command: &str) -> Result<RunManifest, String> {
        let dir = if matches!(command, "phantom-gen" | "folds") { "dataset".to_string() } else { format!("runs/{command}") };
        RunManifest::read(&self.data().join(dir).join(manifest_name(command))).map_err(|e| e.to_string())
    }
}

fn read_curve(path: &Path) -> Result<Curve, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Curve::from_json(&text).map_err(|e| e.to_string())
}

fn phantom_end_to_end() -> Check {
    let agf = Agf::new()?;
    agf.run(&["phantom-gen"])?;
    agf.run(&["folds"])?;
    agf.run(&["experiment"])?;
    let curve = read_curve(&agf.data().join("runs/experiment/curve.json"))?;
    let manifest = std::fs::read_to_string(agf.data().join("dataset/manifest.json")).map_err(|e| e.to_string())?;
    let manifest = DatasetManifest::from_json(&manifest).map_err(|e| e.to_string())?;
    let folds = manifest.folds.ok_or("dataset manifest has no folds")?;
    let fold_sizes = folds.sizes();
    let n: usize = fold_sizes.iter().sum();
    ensure(n == 182 && folds.k == 3, || format!("{n} ROIs in {} folds", folds.k))?;

    // Purity: every cell was tested on exactly its fold's real ROIs, so the
    // pooled rows of every group are the dataset's class counts.
    let counts = manifest.counts.map(|c| c as u64);
    for arm in &curve.arms {
        for p in &arm.points {
            let rows = p.result.report.confusion.row_sums();
            ensure(rows == counts, || format!("{} group {}: pooled rows {rows:?} vs {counts:?}", arm.name, p.group_index))?;
            for f in &p.result.folds {
                let tested = f.confusion.total() as usize;
                ensure(tested == fold_sizes[f.fold], || {
                    format!("{} group {} fold {}: tested {tested} of {}", arm.name, p.group_index, f.fold, fold_sizes[f.fold])
                })?;
            }
        }
    }
    let classic = curve.arms.iter().find(|a| a.name == "classic").ok_or("no classic arm")?;
    let largest = classic.points.last().ok_or("empty classic arm")?;
    let acc = largest.result.report.total_accuracy;
    ensure(acc >= 0.90, || format!("largest classic group (+{}) scores {:.1}%", largest.per_fold_added, acc * 100.0))?;
    let groups: Vec<String> = curve.arms.iter().map(|a| format!("{} {}", a.name, a.points.len())).collect();
    Ok(format!(
        "desk scale, 182 phantoms, 3 folds, groups [{}]: largest classic group (+{}) {:.1}% ≥ 90%; every cell tested on its fold's real ROIs only",
        groups.join(", "),
        largest.per_fold_added,
        acc * 100.0
    ))
}

fn augmentation_trend() -> Check {
    let config = ExperimentConfig { classic_sizes: vec![0, 1000], ..ExperimentConfig::desk_scale() };
    let mut per_seed = Vec::new();
    for seed in 0..3u64 {
        let ds = build_phantom_dataset(&PhantomConfig { counts: [21, 21, 21], seed, ..Default::default() })
            .map_err(|e| e.to_string())?;
        let rois = ds.rois();
        let sources: Vec<_> = ds.phantoms.iter().map(|p| p.source.clone()).collect();
        let folds = make_folds(&rois, 3, seed).map_err(|e| e.to_string())?;
        for fold in 0..3 {
            let train: Vec<_> = folds.train_ids(fold).into_iter().collect();
            let mut by_class = [0usize; 3];
            for r in rois.iter().filter(|r| train.contains(&r.id.as_str())) {
                by_class[r.class.index()] += 1;
            }
            ensure(by_class.iter().all(|&c| c <= 15), || format!("seed {seed} fold {fold}: {by_class:?} training ROIs per class"))?;
        }
        let cfg = ExperimentConfig { seed, ..config.clone() };
        let groups = run_classic_arm(&cfg, &rois, &sources, &folds, 1, &|_| {}).map_err(|e| e.to_string())?;
        let first = groups.first().ok_or("no groups")?.report.total_accuracy;
        let last = groups.last().ok_or("no groups")?.report.total_accuracy;
        per_seed.push((first, last));
    }
    let mean = |f: fn(&(f64, f64)) -> f64| per_seed.iter().map(f).sum::<f64>() / per_seed.len() as f64;
    let (zero, largest) = (mean(|p| p.0), mean(|p| p.1));
    let detail: Vec<String> = per_seed.iter().map(|(a, b)| format!("{:.1}→{:.1}", a * 100.0, b * 100.0)).collect();
    ensure(largest >= zero, || format!("mean accuracy +0: {:.2}%, +1000: {:.2}% ({})", zero * 100.0, largest * 100.0, detail.join(", ")))?;
    Ok(format!(
        "≤14 training ROIs per class, 3 seeds ({}): mean +1000 {:.2}% ≥ mean +0 {:.2}%",
        detail.join(", "),
        largest * 100.0,
        zero * 100.0
    ))
}

fn tsne() -> Check {
    // 200 points in four noisy clusters of a 10-dimensional feature space.
    let mut r = Pcg64::seed_from_u64(5);
    let x: Vec<Vec<f64>> = (0..200)
        .map(|i| (0..10).map(|d| if d % 4 == i % 4 { (i % 4) as f64 * 3.0 } else { 0.0 } + r.random_range(-1.0..1.0)).collect())
        .collect();
    let res = tsne_embed(&x, &TsneConfig::default()).map_err(|e| e.to_string())?;
    ensure(res.max_entropy_error <= 1e-5, || format!("entropy error {:e}", res.max_entropy_error))?;
    let tail = &res.kl_history[res.kl_history.len().saturating_sub(100)..];
    ensure(tail.len() == 100, || format!("only {} iterations recorded", res.kl_history.len()))?;
    let rise = tail.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    ensure(rise <= 0.0, || format!("KL rises by {rise:e} within the final 100 iterations"))?;
    Ok(format!(
        "200 points: max entropy error {:.1e} ≤ 1e-5; final 100 KL steps non-increasing (largest step {rise:.2e}), KL {:.4}",
        res.max_entropy_error, res.kl
    ))
}

fn determinism() -> Check {
    const SETTINGS: &[&str] = &[
        "--set",
        "experiment.classic_sizes=[0, 200]",
        "--set",
        "experiment.synthetic_sizes=[50]",
        "--set",
        "experiment.classifier.max_iterations=5",
        "--set",
        "experiment.gan.max_iterations=5",
    ];
    let commands: [&[&str]; 5] = [
        &["phantom-gen"],
        &["folds"],
        &["train-clf"],
        &["train-dcgan", "--class", "metastasis"],
        &["experiment"],
    ];
    let runs = [Agf::new()?, Agf::new()?];
    let mut hashes: [BTreeMap<String, String>; 2] = Default::default();
    for (agf, hashes) in runs.iter().zip(&mut hashes) {
        for cmd in commands {
            let mut args = SETTINGS.to_vec();
            args.extend_from_slice(cmd);
            agf.run(&args)?;
            for (file, sha) in agf.manifest(cmd[0])?.stable_outputs() {
                hashes.insert(format!("{}/{file}", cmd[0]), sha);
            }
        }
    }
    for cmd in ["train-clf", "train-dcgan", "experiment"] {
        ensure(hashes[0].keys().any(|k| k.starts_with(cmd)), || format!("{cmd} recorded no outputs"))?;
    }
    let differing: Vec<&String> = hashes[0].iter().filter(|(k, v)| hashes[1].get(*k) != Some(v)).map(|(k, _)| k).collect();
    ensure(differing.is_empty() && hashes[0].len() == hashes[1].len(), || format!("differing outputs: {differing:?}"))?;
    Ok(format!("{} checkpoint and artifact hashes identical across two runs of train-clf/train-dcgan/experiment", hashes[0].len()))
}

fn rater_oracle() -> Check {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("../rater/tests/data/expert_study");
    let agf = Agf::new()?;
    let out = agf.dir.path().join("report");
    let (e1, e2) = (fixtures.join("expert1.jsonl"), fixtures.join("expert2.jsonl"));
    agf.run(&["report", &e1.to_string_lossy(), &e2.to_string_lossy(), "--out", &out.to_string_lossy()])?;
    let text = std::fs::read_to_string(out.join("report.json")).map_err(|e| e.to_string())?;
    let report: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let count = |v: &serde_json::Value, field: &str| v[field].as_u64().unwrap_or(u64::MAX);
    let s = &report["sessions"];
    let got = [
        ("expert 1 classification", &s[0]["classification"]["total"], "correct", "answered", 235, 302, "77.8"),
        ("expert 2 classification", &s[1]["classification"]["total"], "correct", "answered", 209, 302, "69.2"),
        ("expert 1 real vs. synthetic", &s[0]["real_vs_fake"], "correct", "answered", 189, 302, "62.5"),
        ("expert 2 real vs. synthetic", &s[1]["real_vs_fake"], "correct", "answered", 177, 302, "58.6"),
        ("agreement", &report["agreement"], "agreed", "co_answered", 222, 302, "73.5"),
    ];
    let mut shown = Vec::new();
    for (what, v, hit, of, want_hit, want_of, want_pct) in got {
        let (h, n) = (count(v, hit), count(v, of));
        // Percentages are shown truncated to one decimal.
        let pct = format!("{:.1}", (h as f64 * 1000.0 / n as f64).floor() / 10.0);
        ensure((h, n, pct.as_str()) == (want_hit, want_of, want_pct), || {
            format!("{what}: {h}/{n} = {pct}% vs {want_hit}/{want_of} = {want_pct}%")
        })?;
        shown.push(format!("{h}/{n} = {pct}%"));
    }
    Ok(shown.join(", "))
}

struct Criterion {
    name: &'static str,
    budget: Option<Duration>,
    check: fn() -> Check,
}

fn main() {
    let criteria = [
        Criterion { name: "metric oracle", budget: Some(Duration::from_secs(1)), check: metric_oracle },
        Criterion { name: "gradient suite", budget: Some(Duration::from_secs(120)), check: gradient_suite },
        Criterion { name: "architecture locks", budget: None, check: architecture_locks },
        Criterion { name: "degenerate GAN", budget: Some(Duration::from_secs(300)), check: degenerate_gan },
        Criterion { name: "phantom end-to-end", budget: Some(Duration::from_secs(30 * 60)), check: phantom_end_to_end },
        Criterion { name: "augmentation trend", budget: None, check: augmentation_trend },
        Criterion { name: "t-SNE", budget: None, check: tsne },
        Criterion { name: "determinism", budget: None, check: determinism },
        Criterion { name: "rater oracle", budget: None, check: rater_oracle },
    ];
    // `cargo test --test acceptance -- <text>…` runs only the criteria whose
    // names contain one of the given texts.
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failures = 0;
    for c in criteria.into_iter().filter(|c| filters.is_empty() || filters.iter().any(|f| c.name.contains(f.as_str()))) {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(c.check)).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let over = c.budget.filter(|&b| elapsed > b);
        let pass = outcome.is_ok() && over.is_none();
        failures += usize::from(!pass);
        let timing = match c.budget {
            Some(b) => format!("{:.2}s, budget {}s", elapsed.as_secs_f64(), b.as_secs()),
            None => format!("{:.2}s", elapsed.as_secs_f64()),
        };
        let detail = match outcome {
            Ok(d) if over.is_some() => format!("{d}; over time budget"),
            Ok(d) | Err(d) => d,
        };
        println!("{} {} ({timing}): {detail}", if pass { "PASS" } else { "FAIL" }, c.name);
    }
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
