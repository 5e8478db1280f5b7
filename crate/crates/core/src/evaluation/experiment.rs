//! The two-arm data-volume experiment.
//!
//! 1. Classic arm: nested groups of originals plus classic augmentations,
//!    each evaluated with k-fold testing.
//! 2. The optimal group is the smallest one whose accuracy is within a
//!    tolerance of the arm's best.
//! 3. Per fold and class, a DCGAN is trained on that group's images of the
//!    class and a pool of synthetic ROIs is drawn from it.
//! 4. Synthetic arm: the optimal group plus nested synthetic groups.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::crossval::{crossval_evaluate, run_parallel, ClassifierRecipe, FoldResult, GroupResult, GroupSchedule};
use crate::dataset::{augmented_roi, build_aug_groups, build_synth_groups, DataGroup, FoldSplit, LesionClass, Member, RoiImage};
use crate::error::{param, Result};
use crate::imageops::{AugmentSource, AugmentationPlan};
use crate::models::{build_dcgan_discriminator, build_dcgan_generator, ClassifierArch, GanArch};
use crate::rng;
use crate::training::{synthesize, DcganTrainer, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Augmentations added per fold, one entry per classic group.
    pub classic_sizes: Vec<usize>,
    /// Synthetic ROIs added per class, one entry per synthetic group.
    pub synthetic_sizes: Vec<usize>,
    pub plan: AugmentationPlan,
    pub classifier_arch: ClassifierArch,
    pub classifier: TrainConfig,
    pub gan_arch: GanArch,
    pub gan: TrainConfig,
    /// Percentage points below the best classic accuracy that still count
    /// as optimal.
    pub optimal_tolerance_pp: f64,
}

impl ExperimentConfig {
    /// Full-size schedules and networks.
    pub fn paper_scale() -> Self {
        ExperimentConfig {
            seed: 0,
            classic_sizes: vec![0, 500, 1000, 2000, 3000, 5000, 7500, 10000, 15000],
            synthetic_sizes: vec![100, 500, 1000, 2000, 3000, 4000],
            plan: AugmentationPlan { n_rot: 30, n_flip: 3, n_trans: 7, n_scale: 5, seed: 0 },
            classifier_arch: ClassifierArch::default(),
            classifier: TrainConfig::classifier(),
            gan_arch: GanArch::default(),
            gan: TrainConfig::dcgan(),
            optimal_tolerance_pp: 0.5,
        }
    }

    /// A schedule that runs on one CPU core in well under half an hour:
    /// reduced group sizes, narrow GANs and capped iteration budgets.
    pub fn desk_scale() -> Self {
        ExperimentConfig {
            classic_sizes: vec![0, 200, 1000],
            synthetic_sizes: vec![50, 200],
            plan: AugmentationPlan { n_rot: 5, n_flip: 3, n_trans: 2, n_scale: 2, seed: 0 },
            classifier: TrainConfig { epochs: 30, max_iterations: Some(30), ..TrainConfig::classifier() },
            gan_arch: GanArch { gen_base: 8, disc_base: 4, ..GanArch::default() },
            gan: TrainConfig { epochs: 20, max_iterations: Some(60), ..TrainConfig::dcgan() },
            ..Self::paper_scale()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.plan.validate()?;
        for (name, sizes) in [("classic", &self.classic_sizes), ("synthetic", &self.synthetic_sizes)] {
            if sizes.is_empty() {
                return Err(param(format!("{name} schedule is empty")));
            }
            if sizes.windows(2).any(|w| w[0] > w[1]) {
                return Err(param(format!("{name} schedule {sizes:?} must be non-decreasing")));
            }
        }
        if !(self.optimal_tolerance_pp >= 0.0 && self.optimal_tolerance_pp.is_finite()) {
            return Err(param(format!("optimal tolerance {} must be a non-negative number", self.optimal_tolerance_pp)));
        }
        self.classifier.validate(false)?;
        self.gan.validate(true)?;
        self.gan_arch.stages()?;
        Ok(())
    }
}

/// Index of the smallest group whose accuracy is within `tolerance_pp`
/// percentage points of the best. `accuracies` must be in group order.
pub fn select_optimal(accuracies: &[f64], tolerance_pp: f64) -> Result<usize> {
    let best = accuracies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !best.is_finite() {
        return Err(param("no finite accuracies to select from"));
    }
    let floor = best - tolerance_pp / 100.0;
    // Rounding slack keeps a group at exactly the floor eligible.
    Ok(accuracies.iter().position(|&a| a >= floor - 1e-12).expect("the best group qualifies"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub group_index: usize,
    pub per_fold_added: usize,
    pub result: GroupResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arm {
    pub name: String,
    /// Samples per fold already present before this arm's additions.
    pub base_added: usize,
    pub points: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorRecord {
    pub fold: usize,
    pub class: LesionClass,
    pub training_images: usize,
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalGroup {
    pub group_index: usize,
    pub per_fold_added: usize,
    pub total_accuracy: f64,
}

/// The accuracy-versus-volume artifact of one experiment run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub seed: u64,
    pub folds: usize,
    pub config: ExperimentConfig,
    pub arms: Vec<Arm>,
    pub optimal: OptimalGroup,
    pub generators: Vec<GeneratorRecord>,
}

impl Curve {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Progress events of a running experiment.
#[derive(Debug, Clone, Copy)]
pub enum Progress<'a> {
    Cell { arm: &'a str, group: usize, fold: usize, result: &'a FoldResult },
    Optimal(&'a OptimalGroup),
    Generator(&'a GeneratorRecord),
}

struct Pool<'a> {
    rois: HashMap<&'a str, &'a RoiImage>,
    sources: HashMap<&'a str, &'a AugmentSource>,
    plan: AugmentationPlan,
}

impl<'a> Pool<'a> {
    fn new(rois: &'a [RoiImage], sources: &'a [AugmentSource], plan: AugmentationPlan) -> Result<Self> {
        let sources: HashMap<&str, &AugmentSource> = sources.iter().map(|s| (s.roi_id.as_str(), s)).collect();
        if let Some(r) = rois.iter().find(|r| !sources.contains_key(r.id.as_str())) {
            return Err(param(format!("no augmentation source for ROI {}", r.id)));
        }
        let rois = rois.iter().map(|r| (r.id.as_str(), r)).collect();
        Ok(Pool { rois, sources, plan })
    }

    fn materialize(&self, group: &DataGroup, synthetic: &[Vec<RoiImage>]) -> Result<Vec<RoiImage>> {
        group
            .members
            .iter()
            .map(|m| match m {
                Member::Original { id } => self.roi(id).cloned(),
                Member::Augmented { parent, index } => augmented_roi(self.roi(parent)?, self.sources[parent.as_str()], &self.plan, *index),
                Member::Synthetic { class, index } => synthetic[class.index()]
                    .get(*index)
                    .cloned()
                    .ok_or_else(|| param(format!("synthetic {class} #{index} outside the generated pool"))),
            })
            .collect()
    }

    fn roi(&self, id: &str) -> Result<&'a RoiImage> {
        self.rois.get(id).copied().ok_or_else(|| param(format!("unknown ROI {id}")))
    }
}

struct ClassicSchedule<'p> {
    pool: &'p Pool<'p>,
    /// Per fold, the nested groups.
    groups: Vec<Vec<DataGroup>>,
}

impl GroupSchedule for ClassicSchedule<'_> {
    fn groups(&self) -> usize {
        self.groups[0].len()
    }

    fn added(&self, group: usize) -> usize {
        self.groups[0][group].added
    }

    fn training_set(&self, fold: usize, group: usize) -> Result<Vec<RoiImage>> {
        self.pool.materialize(&self.groups[fold][group], &[])
    }
}

struct SyntheticSchedule<'p> {
    /// Per fold, the optimal classic training set.
    base: Vec<Vec<RoiImage>>,
    /// Per fold, the synthetic pool of each class.
    synthetic: Vec<Vec<Vec<RoiImage>>>,
    groups: Vec<Vec<DataGroup>>,
    pool: &'p Pool<'p>,
}

impl GroupSchedule for SyntheticSchedule<'_> {
    fn groups(&self) -> usize {
        self.groups[0].len()
    }

    fn added(&self, group: usize) -> usize {
        self.groups[0][group].added
    }

    fn training_set(&self, fold: usize, group: usize) -> Result<Vec<RoiImage>> {
        let mut set = self.base[fold].clone();
        set.extend(self.pool.materialize(&self.groups[fold][group], &self.synthetic[fold])?);
        Ok(set)
    }
}

fn classic_recipe(config: &ExperimentConfig) -> ClassifierRecipe {
    ClassifierRecipe {
        arch: config.classifier_arch,
        config: TrainConfig { seed: rng::child_seed(config.seed, "classic-arm", &[]), ..config.classifier.clone() },
    }
}

fn classic_schedule<'p>(config: &ExperimentConfig, pool: &'p Pool<'p>, folds: &FoldSplit) -> Result<ClassicSchedule<'p>> {
    let mut groups = Vec::with_capacity(folds.k);
    for fold in 0..folds.k {
        let ids = folds.train_ids(fold);
        let seed = rng::child_seed(config.seed, "aug-groups", &[fold as u64]);
        groups.push(build_aug_groups(&ids, config.plan.total_per_roi(), &config.classic_sizes, seed)?);
    }
    Ok(ClassicSchedule { pool, groups })
}

/// Only the classic arm of [`run_experiment`]: the same groups, seeds and
/// results, without training any GAN.
pub fn run_classic_arm(
    config: &ExperimentConfig,
    rois: &[RoiImage],
    sources: &[AugmentSource],
    folds: &FoldSplit,
    jobs: usize,
    progress: &(dyn Fn(Progress<'_>) + Sync),
) -> Result<Vec<GroupResult>> {
    config.validate()?;
    let pool = Pool::new(rois, sources, config.plan)?;
    let classic = classic_schedule(config, &pool, folds)?;
    crossval_evaluate(rois, folds, &classic, &classic_recipe(config), jobs, &|group, fold, result| {
        progress(Progress::Cell { arm: "classic", group, fold, result })
    })
}

/// Runs both arms on the real ROIs `rois` (with one augmentation source
/// each) under the split `folds`. Cells run on up to `jobs` threads; the
/// result does not depend on `jobs`.
pub fn run_experiment(
    config: &ExperimentConfig,
    rois: &[RoiImage],
    sources: &[AugmentSource],
    folds: &FoldSplit,
    jobs: usize,
    progress: &(dyn Fn(Progress<'_>) + Sync),
) -> Result<Curve> {
    config.validate()?;
    let pool = Pool::new(rois, sources, config.plan)?;
    let k = folds.k;
    let recipe = classic_recipe(config);
    let classic = classic_schedule(config, &pool, folds)?;
    let classic_results = crossval_evaluate(rois, folds, &classic, &recipe, jobs, &|group, fold, result| {
        progress(Progress::Cell { arm: "classic", group, fold, result })
    })?;

    let accuracies: Vec<f64> = classic_results.iter().map(|r| r.report.total_accuracy).collect();
    let opt = select_optimal(&accuracies, config.optimal_tolerance_pp)?;
    let optimal = OptimalGroup {
        group_index: opt,
        per_fold_added: classic_results[opt].per_fold_added,
        total_accuracy: accuracies[opt],
    };
    progress(Progress::Optimal(&optimal));

    let base: Vec<Vec<RoiImage>> = (0..k).map(|f| classic.training_set(f, opt)).collect::<Result<_>>()?;
    let per_class = *config.synthetic_sizes.last().expect("validated non-empty");
    let gen_spec = build_dcgan_generator(&config.gan_arch)?;
    let disc_spec = build_dcgan_discriminator(&config.gan_arch)?;
    // One GAN per (fold, class), trained on that fold's optimal group only.
    let trained = run_parallel(k * LesionClass::COUNT, jobs, |item| {
        let (fold, class) = (item / LesionClass::COUNT, LesionClass::ALL[item % LesionClass::COUNT]);
        let images: Vec<Vec<f32>> = base[fold].iter().filter(|r| r.class == class).map(|r| r.pixels.clone()).collect();
        let cfg = TrainConfig { seed: rng::child_seed(config.seed, "dcgan", &[fold as u64, class.code() as u64]), ..config.gan.clone() };
        let outcome = DcganTrainer::new(&gen_spec, &disc_spec, &cfg)?.train(&images, |_, _| Ok(()))?;
        let record = GeneratorRecord { fold, class, training_images: images.len(), digest: outcome.generator.digest() };
        progress(Progress::Generator(&record));
        let samples = if per_class == 0 {
            Vec::new()
        } else {
            let model_id = format!("dcgan-f{fold}-{}", class.name());
            let seed = rng::child_seed(config.seed, "synthesize", &[fold as u64, class.code() as u64]);
            synthesize(&outcome.generator, &model_id, class, false, per_class, seed, config.gan.noise)?
        };
        Ok((record, samples))
    })?;
    let mut generators = Vec::with_capacity(trained.len());
    let mut synthetic: Vec<Vec<Vec<RoiImage>>> = vec![Vec::new(); k];
    for (record, samples) in trained {
        synthetic[record.fold].push(samples);
        generators.push(record);
    }
    let mut synth_groups = Vec::with_capacity(k);
    for fold in 0..k {
        let seed = rng::child_seed(config.seed, "synth-groups", &[fold as u64]);
        synth_groups.push(build_synth_groups([per_class; 3], &config.synthetic_sizes, seed)?);
    }
    let synth_schedule = SyntheticSchedule { base, synthetic, groups: synth_groups, pool: &pool };
    let synth_recipe = ClassifierRecipe {
        config: TrainConfig { seed: rng::child_seed(config.seed, "synthetic-arm", &[]), ..config.classifier.clone() },
        ..recipe
    };
    let synth_results = crossval_evaluate(rois, folds, &synth_schedule, &synth_recipe, jobs, &|group, fold, result| {
        progress(Progress::Cell { arm: "synthetic", group, fold, result })
    })?;

    let points = |results: Vec<GroupResult>| {
        results
            .into_iter()
            .enumerate()
            .map(|(group_index, result)| CurvePoint { group_index, per_fold_added: result.per_fold_added, result })
            .collect()
    };
    Ok(Curve {
        seed: config.seed,
        folds: k,
        config: config.clone(),
        arms: vec![
            Arm { name: "classic".into(), base_added: 0, points: points(classic_results) },
            Arm { name: "synthetic".into(), base_added: optimal.per_fold_added, points: points(synth_results) },
        ],
        optimal,
        generators,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn optimal_is_smallest_within_tolerance() {
        assert_eq!(select_optimal(&[0.70, 0.80, 0.853, 0.857, 0.85], 0.5).unwrap(), 2);
        assert_eq!(select_optimal(&[0.70, 0.80, 0.853, 0.857, 0.85], 0.0).unwrap(), 3);
        assert_eq!(select_optimal(&[0.9, 0.9], 0.5).unwrap(), 0);
        assert!(select_optimal(&[], 0.5).is_err());
    }

    #[test]
    fn paper_schedule_sizes() {
        let c = ExperimentConfig::paper_scale();
        assert_eq!(c.classic_sizes, [0, 500, 1000, 2000, 3000, 5000, 7500, 10000, 15000]);
        let added: Vec<usize> = c.synthetic_sizes.iter().map(|s| s * 3).collect();
        assert_eq!(added, [300, 1500, 3000, 6000, 9000, 12000]);
        assert_eq!(c.plan.total_per_roi(), 480);
        c.validate().unwrap();
        ExperimentConfig::desk_scale().validate().unwrap();
    }

    #[test]
    fn invalid_schedules() {
        let mut c = ExperimentConfig::desk_scale();
        c.classic_sizes = vec![10, 5];
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::desk_scale();
        c.optimal_tolerance_pp = f64::NAN;
        assert!(c.validate().is_err());
    }
}
