//! Keeps the checked-in fuzz corpus seeds current and replays every corpus
//! file through the fuzz targets' checks. Regenerate the seeds with
//! `UPDATE_CORPUS=1 cargo test -p agf-cli --test fuzz_corpus`.

use std::path::{Path, PathBuf};

use agf_core::dataset::{build_phantom_dataset, pack, PhantomConfig};
use agf_core::models::{build_classifier, build_dcgan_generator, ClassifierArch, GanArch};
use agf_tensor::checkpoint::{self, NamedTensor};
use agf_tensor::Tensor;

#[path = "../../../fuzz/checks.rs"]
mod checks;

type Check = fn(&[u8]);

const TARGETS: [(&str, Check); 5] = [
    ("roi_pack_read", checks::roi_pack_read),
    ("checkpoint_read", checks::checkpoint_read),
    ("config_parse", checks::config_parse),
    ("response_log_replay", checks::response_log_replay),
    ("model_spec_json", checks::model_spec_json),
];

fn corpus_dir(target: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target)
}

fn repo_file(rel: &str) -> Vec<u8> {
    std::fs::read(Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)).unwrap()
}

/// Valid inputs for each target plus a truncated copy of the binary ones,
/// so the fuzzer starts from both sides of the accept/reject boundary.
fn seeds() -> Vec<(&'static str, &'static str, Vec<u8>)> {
    let ds = build_phantom_dataset(&PhantomConfig { counts: [3, 3, 3], ..Default::default() }).unwrap();
    let rois = ds.rois();
    let pack_bytes = pack::encode(&rois[..2]).unwrap();

    let ckpt = checkpoint::encode(&[
        NamedTensor { name: "conv1.weight".into(), tensor: Tensor::from_fn(&[2, 1, 3, 3], |i| i as f32 * 0.1) },
        NamedTensor { name: "conv1.bias".into(), tensor: Tensor::full(&[2], -0.5) },
    ]);

    let log = repo_file("crates/rater/tests/data/expert_study/expert1.jsonl");
    let text = String::from_utf8(log).unwrap();
    let short: String = text.lines().take(6).map(|l| format!("{l}\n")).collect();
    let torn = format!("{short}{}", &text.lines().nth(6).unwrap()[..20]);

    let clf = build_classifier(&ClassifierArch { channels: [4, 4, 4], hidden: 8, image_size: 64 }).unwrap();
    let gen = build_dcgan_generator(&GanArch { image_size: 16, gen_base: 8, disc_base: 4, noise_dim: 8 }).unwrap();

    vec![
        ("roi_pack_read", "two_rois.agrp", pack_bytes.clone()),
        ("roi_pack_read", "truncated.agrp", pack_bytes[..pack_bytes.len() / 3].to_vec()),
        ("checkpoint_read", "two_tensors.agfp", ckpt.clone()),
        ("checkpoint_read", "truncated.agfp", ckpt[..ckpt.len() - 5].to_vec()),
        ("config_parse", "desk_scale.cfg", repo_file("configs/desk_scale.cfg")),
        ("config_parse", "overrides.cfg", b"seed = 3\nfolds = 4\n\n[experiment]\nclassic_sizes = [0, 10]\n".to_vec()),
        ("response_log_replay", "six_responses.jsonl", short.into_bytes()),
        ("response_log_replay", "torn_tail.jsonl", torn.into_bytes()),
        ("model_spec_json", "classifier.json", clf.canonical_json().into_bytes()),
        ("model_spec_json", "generator16.json", gen.canonical_json().into_bytes()),
    ]
}

#[test]
fn corpus_seeds_are_current() {
    let update = std::env::var_os("UPDATE_CORPUS").is_some();
    for (target, name, bytes) in seeds() {
        let path = corpus_dir(target).join(name);
        if update {
            std::fs::create_dir_all(path.parent().unwrap()).unwrap();
            std::fs::write(&path, &bytes).unwrap();
        } else {
            let stored = std::fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}; rerun with UPDATE_CORPUS=1", path.display()));
            assert!(stored == bytes, "{} is stale; rerun with UPDATE_CORPUS=1", path.display());
        }
    }
}

#[test]
fn every_corpus_file_replays_cleanly() {
    for (target, check) in TARGETS {
        let dir = corpus_dir(target);
        let mut n = 0;
        for entry in std::fs::read_dir(&dir).unwrap_or_else(|e| panic!("{}: {e}", dir.display())) {
            let path = entry.unwrap().path();
            check(&std::fs::read(&path).unwrap());
            n += 1;
        }
        assert!(n >= 2, "{target}: only {n} corpus files");
    }
}

#[test]
fn valid_seeds_are_accepted() {
    // The replay above only proves "no panic"; make sure the valid seeds
    // actually reach the deep end of each reader.
    let s = seeds();
    let get = |name: &str| &s.iter().find(|(_, n, _)| *n == name).unwrap().2;
    assert_eq!(pack::decode(get("two_rois.agrp")).unwrap().len(), 2);
    assert!(pack::decode(get("truncated.agrp")).is_err());
    assert_eq!(checkpoint::decode(get("two_tensors.agfp")).unwrap().len(), 2);
    assert!(checkpoint::decode(get("truncated.agfp")).is_err());
    for cfg in ["desk_scale.cfg", "overrides.cfg"] {
        agf_cli::AppConfig::parse(std::str::from_utf8(get(cfg)).unwrap(), None, &[]).unwrap();
    }
    for log in ["six_responses.jsonl", "torn_tail.jsonl"] {
        assert_eq!(agf_rater::replay(get(log)).unwrap().1.len(), 5);
    }
    for spec in ["classifier.json", "generator16.json"] {
        agf_core::models::ModelSpec::from_json(std::str::from_utf8(get(spec)).unwrap()).unwrap();
    }
}
