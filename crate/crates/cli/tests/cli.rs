//! Drives the `agf` binary end to end on small phantom datasets.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use agf_cli::{manifest_name, RunManifest};

const SMALL: &[&str] = &[
    "--set",
    "phantom.counts=[12, 12, 12]",
    "--set",
    "experiment.classifier.max_iterations=3",
    "--set",
    "experiment.gan.max_iterations=3",
    "--set",
    "acgan.train.max_iterations=2",
];

struct Env {
    dir: tempfile::TempDir,
}

impl Env {
    fn new() -> Self {
        Env { dir: tempfile::tempdir().unwrap() }
    }

    fn data(&self) -> PathBuf {
        self.dir.path().join("data")
    }

    fn agf(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_agf"))
            .args(args)
            .env("AGF_DATA_DIR", self.data())
            .current_dir(self.dir.path())
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let o = self.agf(args);
        assert!(o.status.success(), "agf {args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8(o.stdout).unwrap()
    }

    fn code(&self, args: &[&str]) -> i32 {
        self.agf(args).status.code().unwrap()
    }

    fn small(&self, args: &[&str]) -> String {
        let mut v: Vec<&str> = SMALL.to_vec();
        v.extend_from_slice(args);
        self.ok(&v)
    }

    fn dataset(&self) -> &Self {
        self.small(&["phantom-gen"]);
        self.small(&["folds"]);
        self
    }

    fn manifest(&self, dir: &Path, command: &str) -> RunManifest {
        RunManifest::read(&dir.join(manifest_name(command))).unwrap()
    }
}

#[test]
fn augment_reports_480_per_roi_for_the_full_plan() {
    let e = Env::new();
    e.dataset();
    let out = e.ok(&["augment", "--plan", "30,3,7,5"]);
    assert!(out.contains("480 augmentations per ROI"), "{out}");
    assert!(out.contains("3 ROIs → 1440 augmented ROIs"), "{out}");
    let m = e.manifest(&e.data().join("runs/augment"), "augment");
    assert!(m.stable_outputs().contains_key("augmented.agrp"));
}

#[test]
fn default_paths_live_under_the_data_dir_and_manifests_chain() {
    let e = Env::new();
    e.dataset();
    let ds = e.data().join("dataset");
    for f in ["rois.agrp", "manifest.json", "phantom-gen.run.json", "folds.run.json"] {
        assert!(ds.join(f).is_file(), "{f}");
    }
    let folds = e.manifest(&ds, "folds");
    assert_eq!(folds.parents.len(), 1);
    assert!(folds.parents[0].path.ends_with("phantom-gen.run.json"));
    assert_eq!(folds.config.phantom.counts, [12, 12, 12]);
    assert!(folds.seeds.contains_key("folds"));

    e.small(&["train-clf", "--fold", "1"]);
    let clf = e.manifest(&e.data().join("runs/train-clf"), "train-clf");
    // The inputs' manifest was rewritten by `folds`, so it is the parent.
    assert!(clf.parents.iter().any(|p| p.path.ends_with("folds.run.json")));
    let names: Vec<&str> = clf.outputs.iter().map(|o| Path::new(&o.path).file_name().unwrap().to_str().unwrap()).collect();
    for f in ["classifier.agfp", "classifier.agfp.json", "train_log.jsonl", "metrics.json"] {
        assert!(names.contains(&f), "{f} missing from {names:?}");
    }
    assert!(clf.outputs.iter().find(|o| o.path.ends_with("train_log.jsonl")).unwrap().volatile);
}

#[test]
fn repeated_runs_reproduce_every_stable_output() {
    let a = Env::new();
    let b = Env::new();
    for e in [&a, &b] {
        e.dataset();
        e.small(&["train-clf"]);
        e.small(&["train-dcgan", "--class", "hemangioma"]);
        e.small(&["synth", "--generator", "data/runs/train-dcgan/generator.agfp", "--class", "hemangioma", "-n", "5"]);
    }
    for (dir, cmd) in [("dataset", "phantom-gen"), ("dataset", "folds"), ("runs/train-clf", "train-clf"), ("runs/train-dcgan", "train-dcgan"), ("runs/synth", "synth")] {
        let ma = a.manifest(&a.data().join(dir), cmd);
        let mb = b.manifest(&b.data().join(dir), cmd);
        assert!(!ma.stable_outputs().is_empty());
        assert_eq!(ma.stable_outputs(), mb.stable_outputs(), "{cmd}");
    }
}

#[test]
fn seeds_change_outputs() {
    let e = Env::new();
    e.dataset();
    let first = e.manifest(&e.data().join("dataset"), "phantom-gen").stable_outputs();
    e.small(&["--seed", "5", "phantom-gen", "--out", "other"]);
    let second = e.manifest(&e.dir.path().join("other"), "phantom-gen").stable_outputs();
    assert_ne!(first["rois.agrp"], second["rois.agrp"]);
}

#[test]
fn usage_and_config_errors_exit_2() {
    let e = Env::new();
    std::fs::write(e.dir.path().join("bad.cfg"), "[experiment]\nclasic_sizes = [0]\n").unwrap();
    for args in [
        vec!["phantom-gen", "--bogus"],
        vec!["frobnicate"],
        vec!["--config", "bad.cfg", "phantom-gen"],
        vec!["--config", "missing.cfg", "phantom-gen"],
        vec!["--set", "experiment.gan.seed=1", "phantom-gen"],
        vec!["--set", "phantom.counts=[1, 1, 1]", "phantom-gen"],
        vec!["--jobs", "0", "phantom-gen"],
        vec!["augment", "--plan", "30,4,7,5"],
        vec!["train-dcgan", "--class", "tumor"],
    ] {
        assert_eq!(e.code(&args), 2, "{args:?}");
    }
    e.dataset();
    assert_eq!(e.code(&["train-clf", "--fold", "3"]), 2);
}

#[test]
fn data_errors_exit_3() {
    let e = Env::new();
    assert_eq!(e.code(&["folds"]), 3, "no dataset yet");
    e.small(&["phantom-gen"]);
    assert_eq!(e.code(&["train-clf"]), 3, "no folds yet");
    e.small(&["folds"]);
    assert_eq!(e.code(&["evaluate", "--checkpoint", "nope.agfp"]), 3);
    assert_eq!(e.code(&["report", "nope.jsonl"]), 3);
    std::fs::write(e.dir.path().join("torn.jsonl"), "{\"event\":\"created\"}\n{\"event\":").unwrap();
    assert_eq!(e.code(&["report", "torn.jsonl"]), 3);
    let pack = e.data().join("dataset/rois.agrp");
    let mut bytes = std::fs::read(&pack).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    std::fs::write(&pack, bytes).unwrap();
    assert_eq!(e.code(&["augment"]), 3, "tampered pack");
}

#[test]
fn undefined_rates_exit_4() {
    let e = Env::new();
    e.dataset();
    e.small(&["train-clf"]);
    e.small(&["train-dcgan", "--class", "cyst"]);
    e.small(&["synth", "--generator", "data/runs/train-dcgan/generator.agfp", "--class", "cyst", "-n", "4"]);
    // A single-class pack leaves the other classes' sensitivity undefined.
    let code = e.code(&["evaluate", "--checkpoint", "data/runs/train-clf/classifier.agfp", "--pack", "data/runs/synth/synthetic.agrp"]);
    assert_eq!(code, 4);
    assert_eq!(e.code(&["synth", "--generator", "data/runs/train-dcgan/generator.agfp", "--class", "metastasis"]), 2);
}

#[test]
fn acgan_and_tsne_commands_produce_their_artifacts() {
    let e = Env::new();
    e.dataset();
    e.small(&["train-acgan"]);
    e.small(&["synth", "--generator", "data/runs/train-acgan/generator.agfp", "--class", "metastasis", "-n", "30"]);
    e.small(&["train-clf"]);
    let out = e.small(&[
        "--set",
        "tsne.perplexity=5.0",
        "--set",
        "tsne.iterations=300",
        "tsne",
        "--checkpoint",
        "data/runs/train-clf/classifier.agfp",
        "--synthetic",
        "data/runs/synth/synthetic.agrp",
    ]);
    assert!(out.contains("points"), "{out}");
    let m = e.manifest(&e.data().join("runs/tsne"), "tsne");
    for f in ["embedding.json", "embedding.png", "tsne_summary.json"] {
        assert!(m.stable_outputs().contains_key(f), "{f}");
    }
    let emb: serde_json::Value = serde_json::from_slice(&std::fs::read(e.data().join("runs/tsne/embedding.json")).unwrap()).unwrap();
    let rows = emb["rows"].as_array().unwrap();
    let count = |p: &str| rows.iter().filter(|r| r["provenance"] == p).count();
    // Held-out real ROIs, two augmentations of each, and the synthetic pack.
    assert!(count("real") >= 10);
    assert_eq!(count("augmented"), 2 * count("real"));
    assert_eq!(count("synthetic"), 30);
}

#[test]
fn report_scores_fixture_logs() {
    let e = Env::new();
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("../rater/tests/data/expert_study");
    let a = fixtures.join("expert1.jsonl");
    let b = fixtures.join("expert2.jsonl");
    let out = e.ok(&["report", a.to_str().unwrap(), b.to_str().unwrap()]);
    assert!(out.contains("total  77.8% (235/302)"), "{out}");
    assert!(out.contains("agreement 73.5% (222/302)"), "{out}");
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(e.data().join("runs/report/report.json")).unwrap()).unwrap();
    assert_eq!(r["agreement"]["agreed"], 222);
    assert_eq!(r["sessions"][1]["real_vs_fake"]["correct"], 177);
}

#[test]
fn tiny_experiment_is_independent_of_jobs() {
    let e = Env::new();
    e.dataset();
    let tiny = [
        "--set",
        "experiment.classic_sizes=[0, 24]",
        "--set",
        "experiment.synthetic_sizes=[4]",
        "--set",
        "experiment.plan={ n_rot = 2, n_flip = 1, n_trans = 1, n_scale = 0 }",
    ];
    let run = |jobs: &str, out: &str| {
        let mut args: Vec<&str> = tiny.to_vec();
        args.extend(["--jobs", jobs, "experiment", "--out", out]);
        e.small(&args);
        e.manifest(&e.dir.path().join(out), "experiment").stable_outputs()
    };
    let one = run("1", "exp1");
    let two = run("2", "exp2");
    assert_eq!(one, two);
    let curve: serde_json::Value = serde_json::from_slice(&std::fs::read(e.dir.path().join("exp1/curve.json")).unwrap()).unwrap();
    assert_eq!(curve["arms"].as_array().unwrap().len(), 2);
    assert_eq!(curve["generators"].as_array().unwrap().len(), 9);
}
