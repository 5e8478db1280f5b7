use serde::{Deserialize, Serialize};

use crate::dataset::LesionClass;
use crate::error::{param, Error, Result};

/// 3×3 counts; rows are the true class, columns the predicted class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 3]; 3],
}

impl ConfusionMatrix {
    pub fn from_counts(counts: [[u64; 3]; 3]) -> Self {
        ConfusionMatrix { counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Ground-truth count per class.
    pub fn row_sums(&self) -> [u64; 3] {
        self.counts.map(|r| r.iter().sum())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn true_positives(&self, class: LesionClass) -> u64 {
        let c = class.index();
        self.counts[c][c]
    }

    pub fn false_negatives(&self, class: LesionClass) -> u64 {
        self.row_sums()[class.index()] - self.true_positives(class)
    }

    pub fn false_positives(&self, class: LesionClass) -> u64 {
        let c = class.index();
        (0..3).map(|r| self.counts[r][c]).sum::<u64>() - self.true_positives(class)
    }

    pub fn true_negatives(&self, class: LesionClass) -> u64 {
        self.total() - self.true_positives(class) - self.false_negatives(class) - self.false_positives(class)
    }

    /// `TP / (TP + FN)`, one class against the other two.
    pub fn sensitivity(&self, class: LesionClass) -> Result<f64> {
        rate(self.true_positives(class), self.false_negatives(class), || format!("sensitivity of {class}: no positives"))
    }

    /// `TN / (TN + FP)`, one class against the other two.
    pub fn specificity(&self, class: LesionClass) -> Result<f64> {
        rate(self.true_negatives(class), self.false_positives(class), || format!("specificity of {class}: no negatives"))
    }

    /// Trace over total.
    pub fn total_accuracy(&self) -> Result<f64> {
        let trace: u64 = (0..3).map(|c| self.counts[c][c]).sum();
        rate(trace, self.total() - trace, || "total accuracy of an empty matrix".into())
    }
}

fn rate(hits: u64, misses: u64, what: impl FnOnce() -> String) -> Result<f64> {
    match hits + misses {
        0 => Err(Error::UndefinedRate(what())),
        n => Ok(hits as f64 / n as f64),
    }
}

/// Tallies aligned prediction/ground-truth lists.
pub fn confusion(predictions: &[LesionClass], truth: &[LesionClass]) -> Result<ConfusionMatrix> {
    if predictions.len() != truth.len() {
        return Err(param(format!("{} predictions for {} ground-truth labels", predictions.len(), truth.len())));
    }
    let mut cm = ConfusionMatrix::default();
    for (p, t) in predictions.iter().zip(truth) {
        cm.counts[t.index()][p.index()] += 1;
    }
    Ok(cm)
}

/// Prevalence-weighted mean of per-class rates.
pub fn weighted_average(rates: &[f64], counts: &[u64]) -> Result<f64> {
    if rates.len() != counts.len() {
        return Err(param(format!("{} rates for {} counts", rates.len(), counts.len())));
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(param("weights sum to zero"));
    }
    Ok(rates.iter().zip(counts).map(|(r, &c)| r * c as f64).sum::<f64>() / total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassRates {
    pub class: LesionClass,
    pub sensitivity: f64,
    pub specificity: f64,
}

/// Rates derived from one (pooled) confusion matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub group_index: usize,
    /// Folds whose test predictions were pooled into `confusion`.
    pub folds: Vec<usize>,
    pub confusion: ConfusionMatrix,
    pub per_class: Vec<ClassRates>,
    pub total_accuracy: f64,
    pub weighted_sensitivity: f64,
    pub weighted_specificity: f64,
}

impl MetricsReport {
    /// Fails with an undefined-rate error unless every class occurs.
    pub fn from_confusion(confusion: ConfusionMatrix, group_index: usize, folds: Vec<usize>) -> Result<Self> {
        let per_class = LesionClass::ALL
            .iter()
            .map(|&class| {
                Ok(ClassRates { class, sensitivity: confusion.sensitivity(class)?, specificity: confusion.specificity(class)? })
            })
            .collect::<Result<Vec<_>>>()?;
        let counts = confusion.row_sums();
        let sens: Vec<f64> = per_class.iter().map(|r| r.sensitivity).collect();
        let spec: Vec<f64> = per_class.iter().map(|r| r.specificity).collect();
        Ok(MetricsReport {
            group_index,
            folds,
            confusion,
            total_accuracy: confusion.total_accuracy()?,
            weighted_sensitivity: weighted_average(&sens, &counts)?,
            weighted_specificity: weighted_average(&spec, &counts)?,
            per_class,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use LesionClass::*;

    #[test]
    fn all_correct_is_diagonal() {
        let t = [Cyst, Metastasis, Hemangioma, Cyst];
        let cm = confusion(&t, &t).unwrap();
        assert_eq!(cm.counts, [[2, 0, 0], [0, 1, 0], [0, 0, 1]]);
        assert_eq!(cm.total_accuracy().unwrap(), 1.0);
    }

    #[test]
    fn empty_input_gives_zero_matrix_and_undefined_rates() {
        let cm = confusion(&[], &[]).unwrap();
        assert_eq!(cm, ConfusionMatrix::default());
        assert!(matches!(cm.total_accuracy(), Err(Error::UndefinedRate(_))));
        assert!(matches!(cm.sensitivity(Cyst), Err(Error::UndefinedRate(_))));
    }

    #[test]
    fn length_mismatch() {
        assert!(confusion(&[Cyst], &[]).is_err());
        assert!(weighted_average(&[0.5], &[1, 2]).is_err());
    }

    #[test]
    fn one_vs_rest_counts_partition_the_total() {
        let cm = ConfusionMatrix::from_counts([[5, 1, 2], [0, 7, 3], [4, 0, 9]]);
        for c in LesionClass::ALL {
            let sum = cm.true_positives(c) + cm.false_negatives(c) + cm.false_positives(c) + cm.true_negatives(c);
            assert_eq!(sum, cm.total());
        }
        assert_eq!(cm.false_positives(Cyst), 4);
        assert_eq!(cm.true_negatives(Cyst), 19);
    }

    #[test]
    fn equal_rates_average_to_that_rate() {
        assert!((weighted_average(&[0.7; 3], &[1, 50, 9]).unwrap() - 0.7).abs() < 1e-15);
    }
}
