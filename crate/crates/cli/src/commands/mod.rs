//! One function per subcommand plus the artifact plumbing they share.

mod data;
mod rater;
mod study;
mod train;

use std::path::{Path, PathBuf};

use agf_core::dataset::{pack, DatasetManifest, FoldSplit, LesionClass, RoiImage};
use agf_core::imageops::AugmentSource;
use agf_core::models::{sidecar_path, Model, ModelMeta};
use agf_tensor::NamedTensor;

use crate::args::{Cli, Command, DatasetArgs, OutArgs};
use crate::config::AppConfig;
use crate::error::{CliError, CliResult};
use crate::manifest::{Recorder, RunManifest};

pub const ROIS_FILE: &str = "rois.agrp";
pub const DATASET_MANIFEST: &str = "manifest.json";

/// Settings every command sees.
pub struct Ctx {
    pub cfg: AppConfig,
    pub jobs: usize,
    pub data_dir: PathBuf,
}

impl Ctx {
    pub fn dataset_dir(&self, a: &DatasetArgs) -> PathBuf {
        a.dataset.clone().unwrap_or_else(|| self.data_dir.join("dataset"))
    }

    pub fn out_dir(&self, a: &OutArgs, command: &str) -> PathBuf {
        a.out.clone().unwrap_or_else(|| self.data_dir.join("runs").join(command))
    }

    pub fn recorder(&self, command: &str, out: &Path) -> CliResult<Recorder> {
        Recorder::new(command, &self.cfg, out)
    }
}

/// Parses the global flags into a context and runs the subcommand.
pub fn run(cli: Cli) -> CliResult<RunManifest> {
    let g = &cli.global;
    let mut overrides = g.overrides.clone();
    if let Some(seed) = g.seed {
        overrides.push(format!("seed={seed}"));
    }
    let cfg = AppConfig::load(g.config.as_deref(), g.scale, &overrides)?;
    let ctx = Ctx { cfg, jobs: g.jobs as usize, data_dir: g.data_dir.clone() };
    match &cli.command {
        Command::PhantomGen(a) => data::phantom_gen(&ctx, a),
        Command::Folds(a) => data::folds(&ctx, a),
        Command::Augment(a) => data::augment(&ctx, a),
        Command::TrainClf(a) => train::train_clf(&ctx, a),
        Command::TrainDcgan(a) => train::train_dcgan(&ctx, a),
        Command::TrainAcgan(a) => train::train_acgan(&ctx, a),
        Command::Synth(a) => train::synth(&ctx, a),
        Command::Evaluate(a) => train::evaluate(&ctx, a),
        Command::Experiment(a) => study::experiment(&ctx, a),
        Command::Tsne(a) => study::tsne(&ctx, a),
        Command::RaterServe(a) => rater::rater_serve(&ctx, a),
        Command::Report(a) => rater::report(&ctx, a),
    }
}

/// The phantom dataset as read from disk.
pub struct Dataset {
    pub rois: Vec<RoiImage>,
    pub manifest: DatasetManifest,
}

impl Dataset {
    /// Reads the pack and manifest and checks that they describe each other.
    pub fn load(rec: &mut Recorder, dir: &Path) -> CliResult<Self> {
        let manifest_path = dir.join(DATASET_MANIFEST);
        let text = rec.input_text(&manifest_path)?;
        let manifest = DatasetManifest::from_json(&text).map_err(|e| CliError::data(format!("{}: {e}", manifest_path.display())))?;
        let pack_path = dir.join(ROIS_FILE);
        let bytes = rec.input(&pack_path)?;
        if agf_core::rng::sha256_hex(&bytes) != manifest.content_hash {
            return Err(CliError::data(format!("{} does not match the content hash in {}", pack_path.display(), manifest_path.display())));
        }
        let rois = pack::decode(&bytes).map_err(|e| CliError::data(format!("{}: {e}", pack_path.display())))?;
        if rois.len() != manifest.rois.len() || rois.iter().zip(&manifest.rois).any(|(r, m)| r.id != m.id || r.patient_id != m.patient_id || r.class != m.class) {
            return Err(CliError::data(format!("{} and {} list different ROIs", pack_path.display(), manifest_path.display())));
        }
        if let Some(r) = rois.iter().find(|r| !r.provenance.is_real()) {
            return Err(CliError::data(format!("dataset ROI {} is {}, not real", r.id, r.provenance.label())));
        }
        Ok(Dataset { rois, manifest })
    }

    pub fn folds(&self) -> CliResult<&FoldSplit> {
        self.manifest.folds.as_ref().ok_or_else(|| CliError::data("the dataset has no fold assignment; run `agf folds` first"))
    }

    pub fn check_fold(&self, fold: usize) -> CliResult<&FoldSplit> {
        let folds = self.folds()?;
        if fold >= folds.k {
            return Err(CliError::config(format!("fold {fold} out of range for {} folds", folds.k)));
        }
        Ok(folds)
    }

    /// Real ROIs outside `fold`, and those inside it.
    pub fn split(&self, fold: usize) -> CliResult<(Vec<RoiImage>, Vec<RoiImage>)> {
        let folds = self.check_fold(fold)?;
        let (test, train): (Vec<RoiImage>, Vec<RoiImage>) = self.rois.iter().cloned().partition(|r| folds.fold_of(&r.id) == Some(fold));
        Ok((train, test))
    }

    /// Re-renders the phantom context of every listed ROI, checking that it
    /// reproduces the stored ROI exactly.
    pub fn sources(&self, ids: &[&str]) -> CliResult<Vec<AugmentSource>> {
        ids.iter()
            .map(|id| {
                let i = self.manifest.rois.iter().position(|m| m.id == *id).ok_or_else(|| CliError::data(format!("unknown ROI {id}")))?;
                let p = self.manifest.regenerate(i)?;
                if p.roi != self.rois[i] {
                    return Err(CliError::data(format!("ROI {id} does not regenerate from its manifest entry")));
                }
                Ok(p.source)
            })
            .collect()
    }
}

pub fn read_pack(rec: &mut Recorder, path: &Path) -> CliResult<Vec<RoiImage>> {
    let bytes = rec.input(path)?;
    pack::decode(&bytes).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

pub fn write_pack(rec: &mut Recorder, name: &str, rois: &[RoiImage]) -> CliResult<PathBuf> {
    rec.write(name, &pack::encode(rois)?)
}

/// Saves a checkpoint and its sidecar into the output directory.
pub fn save_model(rec: &mut Recorder, name: &str, model: &Model<f32>, extra: &[NamedTensor], training: serde_json::Value) -> CliResult<PathBuf> {
    let path = rec.out_dir().join(name);
    model.save(&path, extra, &ModelMeta::new(&model.spec, training))?;
    rec.record(&path, false)?;
    rec.record(&sidecar_path(&path), false)?;
    Ok(path)
}

/// Loads a checkpoint, recording it and its sidecar as inputs.
pub fn load_model(rec: &mut Recorder, path: &Path) -> CliResult<(Model<f32>, Vec<NamedTensor>, ModelMeta)> {
    rec.input(path)?;
    rec.input(&sidecar_path(path))?;
    Model::load(path).map_err(|e| match e {
        agf_core::Error::Parameter(m) => CliError::data(m),
        other => other.into(),
    })
}

/// Highest-probability class; the lowest class code wins ties.
pub fn argmax(p: &[f32; 3]) -> LesionClass {
    LesionClass::ALL[(0..3).fold(0, |b, i| if p[i] > p[b] { i } else { b })]
}

pub fn json_pretty<T: serde::Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s.into_bytes()
}
