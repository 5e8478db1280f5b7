//! Patient-level k-fold partitioning.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::RoiImage;
use crate::error::{Error, Result};
use crate::rng;

/// ROI id → fold index, never separating a patient's lesions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub k: usize,
    pub assignment: BTreeMap<String, usize>,
}

impl FoldSplit {
    pub fn fold_of(&self, id: &str) -> Option<usize> {
        self.assignment.get(id).copied()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &f in self.assignment.values() {
            s[f] += 1;
        }
        s
    }

    /// Ids held out when `fold` is the test fold.
    pub fn test_ids(&self, fold: usize) -> Vec<&str> {
        self.assignment.iter().filter(|(_, &f)| f == fold).map(|(id, _)| id.as_str()).collect()
    }

    /// Ids trained on when `fold` is the test fold.
    pub fn train_ids(&self, fold: usize) -> Vec<&str> {
        self.assignment.iter().filter(|(_, &f)| f != fold).map(|(id, _)| id.as_str()).collect()
    }

    /// Re-checks the patient constraint against `rois`.
    pub fn validate(&self, rois: &[RoiImage]) -> Result<()> {
        let mut patient_fold: BTreeMap<&str, usize> = BTreeMap::new();
        for r in rois {
            let f = self.fold_of(&r.id).ok_or_else(|| Error::Split(format!("ROI {} has no fold", r.id)))?;
            if f >= self.k {
                return Err(Error::Split(format!("ROI {} in fold {f} ≥ k = {}", r.id, self.k)));
            }
            if let Some(prev) = patient_fold.insert(&r.patient_id, f) {
                if prev != f {
                    return Err(Error::Split(format!("patient {} spans folds {prev} and {f}", r.patient_id)));
                }
            }
        }
        if self.assignment.len() != rois.len() {
            return Err(Error::Split(format!("{} assignments for {} ROIs", self.assignment.len(), rois.len())));
        }
        Ok(())
    }
}

/// Greedy balanced split: patients are placed largest lesion count first
/// (ties in seeded order) into the fold holding the fewest lesions of the
/// patient's class, then the fewest lesions overall, then the lowest index.
pub fn make_folds(rois: &[RoiImage], k: usize, seed: u64) -> Result<FoldSplit> {
    if k < 2 {
        return Err(Error::Split(format!("k = {k} must be at least 2")));
    }
    let mut patients: BTreeMap<&str, Vec<&RoiImage>> = BTreeMap::new();
    for r in rois {
        patients.entry(&r.patient_id).or_default().push(r);
    }
    for class in super::LesionClass::ALL {
        let n = patients.values().filter(|l| l.iter().any(|r| r.class == class)).count();
        if n < k {
            return Err(Error::Split(format!("class {class} has {n} patients, fewer than k = {k}")));
        }
    }
    let capacity = rois.len().div_ceil(k);
    let mut order: Vec<(&str, Vec<&RoiImage>)> = patients.into_iter().collect();
    order.shuffle(&mut rng::stream(seed, "folds", &[]));
    order.sort_by_key(|(_, lesions)| std::cmp::Reverse(lesions.len()));

    let mut per_class = vec![[0usize; 3]; k];
    let mut totals = vec![0usize; k];
    let mut assignment = BTreeMap::new();
    for (patient, lesions) in order {
        if lesions.len() > capacity {
            return Err(Error::Split(format!(
                "patient {patient} has {} lesions, more than fold capacity {capacity}",
                lesions.len()
            )));
        }
        // Dominant class of the patient (lowest code on ties).
        let counts = super::class_counts(lesions.iter().copied());
        let dom = (0..3).max_by_key(|&c| (counts[c], std::cmp::Reverse(c))).expect("3 classes");
        let fold = (0..k)
            .filter(|&f| totals[f] + lesions.len() <= capacity)
            .min_by_key(|&f| (per_class[f][dom], totals[f], f))
            .ok_or_else(|| Error::Split(format!("no fold can take patient {patient}")))?;
        for l in &lesions {
            per_class[fold][l.class.index()] += 1;
            assignment.insert(l.id.clone(), fold);
        }
        totals[fold] += lesions.len();
    }
    Ok(FoldSplit { k, assignment })
}
