//! What each fuzz target asserts about one input. Shared with the corpus
//! replay test of the `agf-cli` crate so the seeds stay exercised without a
//! fuzzing toolchain.

use agf_cli::AppConfig;
use agf_core::dataset::pack;
use agf_core::models::ModelSpec;
use agf_tensor::checkpoint;

/// Anything the ROI-pack reader accepts survives a write/read round trip.
pub fn roi_pack_read(data: &[u8]) {
    let Ok(rois) = pack::decode(data) else { return };
    let bytes = pack::encode(&rois).expect("re-encoding a decoded pack");
    assert_eq!(pack::decode(&bytes).expect("re-reading an encoded pack"), rois);
}

pub fn checkpoint_read(data: &[u8]) {
    let Ok(records) = checkpoint::decode(data) else { return };
    let bytes = checkpoint::encode(&records);
    assert_eq!(checkpoint::decode(&bytes).expect("re-reading an encoded checkpoint"), records);
}

/// A config that loads is valid and can be written into a run manifest.
pub fn config_parse(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(cfg) = AppConfig::parse(text, None, &[]) else { return };
    cfg.validate().expect("a loaded config validates");
    let _ = cfg.to_toml();
}

pub fn response_log_replay(data: &[u8]) {
    let Ok((created, responses)) = agf_rater::replay(data) else { return };
    let _ = agf_rater::session_report(&created, &responses);
    let _ = agf_rater::agreement((&created, &responses), (&created, &responses));
}

pub fn model_spec_json(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(spec) = ModelSpec::from_json(text) else { return };
    let _ = spec.param_count();
    let _ = spec.body_shapes();
    assert_eq!(ModelSpec::from_json(&spec.canonical_json()).expect("re-reading a canonical spec"), spec);
}
