//! K-fold evaluation over nested training groups.
//!
//! Every (group, fold) cell trains on whatever the schedule materializes for
//! that fold and is tested on the held-out fold's real ROIs only. Before any
//! training the cell is checked for test-set leakage; predictions from the
//! folds are pooled into one confusion matrix per group.

use std::collections::HashSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::metrics::{confusion, ConfusionMatrix, MetricsReport};
use crate::dataset::{FoldSplit, LesionClass, Provenance, RoiImage};
use crate::error::{param, Error, Result};
use crate::models::{build_classifier, ClassifierArch};
use crate::rng;
use crate::training::{predict, ClassifierTrainer, TrainConfig};

/// Rejects a train/test pair that shares ROIs, patients or augmentation
/// ancestry, or whose test side holds anything but real ROIs.
pub fn check_leakage(train: &[RoiImage], test: &[RoiImage]) -> Result<()> {
    if let Some(r) = test.iter().find(|r| !r.provenance.is_real()) {
        return Err(Error::Leakage(format!("test ROI {} is {}, not real", r.id, r.provenance.label())));
    }
    let ids: HashSet<&str> = test.iter().map(|r| r.id.as_str()).collect();
    let patients: HashSet<&str> = test.iter().map(|r| r.patient_id.as_str()).collect();
    for r in train {
        if ids.contains(r.id.as_str()) {
            return Err(Error::Leakage(format!("ROI {} is in both training and test sets", r.id)));
        }
        if let Provenance::Augmented { parent } = &r.provenance {
            if ids.contains(parent.as_str()) {
                return Err(Error::Leakage(format!("training ROI {} is an augmentation of test ROI {parent}", r.id)));
            }
        }
        let synthetic = matches!(r.provenance, Provenance::Synthetic { .. });
        if !synthetic && patients.contains(r.patient_id.as_str()) {
            return Err(Error::Leakage(format!("patient {} has ROIs in training ({}) and test", r.patient_id, r.id)));
        }
    }
    Ok(())
}

/// Supplies the training set of every (fold, group) cell.
pub trait GroupSchedule: Sync {
    fn groups(&self) -> usize;
    /// Samples added per fold on top of the base training set.
    fn added(&self, group: usize) -> usize;
    fn training_set(&self, fold: usize, group: usize) -> Result<Vec<RoiImage>>;
}

/// What a recipe reports for one trained cell.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldOutcome {
    pub predictions: Vec<LesionClass>,
    /// Digest of the trained model.
    pub checkpoint: String,
}

/// Trains on one cell's training set and predicts its test set.
pub trait TrainRecipe: Sync {
    fn run(&self, fold: usize, group: usize, train: &[RoiImage], test: &[RoiImage]) -> Result<FoldOutcome>;
}

/// The lesion classifier trained from scratch in every cell, seeded per
/// (fold, group).
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierRecipe {
    pub arch: ClassifierArch,
    pub config: TrainConfig,
}

impl TrainRecipe for ClassifierRecipe {
    fn run(&self, fold: usize, group: usize, train: &[RoiImage], test: &[RoiImage]) -> Result<FoldOutcome> {
        let spec = build_classifier(&self.arch)?;
        let cfg = TrainConfig {
            seed: rng::child_seed(self.config.seed, "classifier", &[fold as u64, group as u64]),
            ..self.config.clone()
        };
        let trained = ClassifierTrainer::new(&spec, train, &cfg)?.train(train, None, |_, _| Ok(()))?;
        let probs = predict(&trained.model, &trained.mean, test)?;
        let predictions = probs
            .iter()
            .map(|p| {
                // Lowest class code wins ties.
                let best = (0..3).fold(0, |b, i| if p[i] > p[b] { i } else { b });
                LesionClass::ALL[best]
            })
            .collect();
        Ok(FoldOutcome { predictions, checkpoint: trained.digest() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub train_size: usize,
    pub checkpoint: String,
    pub confusion: ConfusionMatrix,
}

/// Pooled metrics of one group plus its per-fold details.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupResult {
    pub per_fold_added: usize,
    pub report: MetricsReport,
    pub folds: Vec<FoldResult>,
}

/// The real ROIs of fold `fold`: the only images ever tested.
pub fn test_set(rois: &[RoiImage], folds: &FoldSplit, fold: usize) -> Vec<RoiImage> {
    rois.iter().filter(|r| r.provenance.is_real() && folds.fold_of(&r.id) == Some(fold)).cloned().collect()
}

/// Runs `items` on up to `jobs` threads, keeping results in item order.
pub(crate) fn run_parallel<T: Send>(items: usize, jobs: usize, work: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    let slots: Mutex<Vec<Option<Result<T>>>> = Mutex::new((0..items).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let failed = std::sync::atomic::AtomicBool::new(false);
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, items.max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items || failed.load(Ordering::SeqCst) {
                    break;
                }
                let r = work(i);
                if r.is_err() {
                    failed.store(true, Ordering::SeqCst);
                }
                slots.lock().expect("result slots")[i] = Some(r);
            });
        }
    });
    let slots = slots.into_inner().expect("result slots");
    // The first error in item order wins, so failures are reported
    // deterministically regardless of thread scheduling.
    let mut out = Vec::with_capacity(items);
    for slot in slots {
        match slot {
            Some(r) => out.push(r?),
            None => return Err(Error::Training("evaluation aborted after an earlier failure".into())),
        }
    }
    Ok(out)
}

/// Evaluates every group of `schedule` with `folds.k`-fold testing.
/// `progress` is called after each finished cell with `(group, fold)`.
pub fn crossval_evaluate(
    rois: &[RoiImage],
    folds: &FoldSplit,
    schedule: &dyn GroupSchedule,
    recipe: &dyn TrainRecipe,
    jobs: usize,
    progress: &(dyn Fn(usize, usize, &FoldResult) + Sync),
) -> Result<Vec<GroupResult>> {
    if let Some(r) = rois.iter().find(|r| !r.provenance.is_real()) {
        return Err(param(format!("evaluation pool must hold real ROIs only, found {} ROI {}", r.provenance.label(), r.id)));
    }
    folds.validate(rois)?;
    let k = folds.k;
    let tests: Vec<Vec<RoiImage>> = (0..k).map(|f| test_set(rois, folds, f)).collect();
    let cells = schedule.groups() * k;
    let results = run_parallel(cells, jobs, |cell| {
        let (group, fold) = (cell / k, cell % k);
        let train = schedule.training_set(fold, group)?;
        let test = &tests[fold];
        check_leakage(&train, test)?;
        let outcome = recipe.run(fold, group, &train, test)?;
        let truth: Vec<LesionClass> = test.iter().map(|r| r.class).collect();
        let res = FoldResult {
            fold,
            train_size: train.len(),
            checkpoint: outcome.checkpoint,
            confusion: confusion(&outcome.predictions, &truth)?,
        };
        progress(group, fold, &res);
        Ok(res)
    })?;
    let mut out = Vec::with_capacity(schedule.groups());
    for (group, cells) in results.chunks(k).enumerate() {
        let mut pooled = ConfusionMatrix::default();
        for c in cells {
            pooled.merge(&c.confusion);
        }
        out.push(GroupResult {
            per_fold_added: schedule.added(group),
            report: MetricsReport::from_confusion(pooled, group, (0..k).collect())?,
            folds: cells.to_vec(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_runner_keeps_order_and_reports_first_error() {
        let out = run_parallel(7, 3, |i| Ok(i * i)).unwrap();
        assert_eq!(out, vec![0, 1, 4, 9, 16, 25, 36]);
        let err = run_parallel(5, 1, |i| if i >= 2 { Err(param(format!("item {i}"))) } else { Ok(i) }).unwrap_err();
        assert!(err.to_string().contains("item 2"));
        assert!(run_parallel(0, 4, Ok).unwrap().is_empty());
    }
}
