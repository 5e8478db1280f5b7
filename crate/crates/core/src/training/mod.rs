//! Training loops for the lesion classifier and the two GAN families, and
//! sampling from trained generators.
//!
//! Every random draw (shuffles, dropout masks, noise) comes from a stream
//! keyed by the run seed and the iteration, so a run is a pure function of
//! its data, config and seed.

mod classifier;
mod gan;

use agf_tensor::{OptimizerKind, Tensor};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::rng;

pub use classifier::{predict, extract_features, ClassifierTrainer, TrainedClassifier, MEAN_RECORD};
pub use gan::{generate, synthesize, AcganTrainer, DStats, DcganTrainer, GanOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preprocessing {
    /// Subtract the training-set mean image.
    MeanSubtract,
    /// Map `[0, 1]` to `[−1, 1]`.
    TanhRange,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseDist {
    /// Uniform on `[−1, 1]`.
    Uniform,
    /// Standard normal.
    Normal,
}

impl NoiseDist {
    pub fn sample(self, r: &mut rng::Rng, n: usize, dim: usize) -> Tensor<f32> {
        match self {
            NoiseDist::Uniform => Tensor::from_fn(&[n, dim], |_| r.random_range(-1.0f32..=1.0)),
            NoiseDist::Normal => {
                let d = rand_distr::StandardNormal;
                Tensor::from_fn(&[n, dim], |_| rand_distr::Distribution::<f32>::sample(&d, r))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub preprocessing: Preprocessing,
    /// Stop after this many optimizer iterations even mid-epoch.
    pub max_iterations: Option<u64>,
    pub noise: NoiseDist,
    /// Emit a checkpoint every this many epochs (0 = only at the end).
    pub checkpoint_every: usize,
}

impl TrainConfig {
    /// Batch 64, 150 epochs, SGD with Nesterov momentum at lr 0.001.
    pub fn classifier() -> Self {
        TrainConfig {
            batch_size: 64,
            epochs: 150,
            optimizer: OptimizerKind::nesterov(0.001),
            seed: 0,
            preprocessing: Preprocessing::MeanSubtract,
            max_iterations: None,
            noise: NoiseDist::Uniform,
            checkpoint_every: 0,
        }
    }

    /// Batch 64, 70 epochs, Adam at lr 2e-4.
    pub fn dcgan() -> Self {
        TrainConfig {
            epochs: 70,
            optimizer: OptimizerKind::adam(2e-4),
            preprocessing: Preprocessing::TanhRange,
            ..Self::classifier()
        }
    }

    /// Batch 64, 50 epochs, Adam at lr 1e-4.
    pub fn acgan() -> Self {
        TrainConfig { epochs: 50, optimizer: OptimizerKind::adam(1e-4), ..Self::dcgan() }
    }

    pub fn validate(&self, needs_batch_stats: bool) -> Result<()> {
        if self.epochs == 0 {
            return Err(param("epochs must be at least 1"));
        }
        if self.batch_size == 0 || (needs_batch_stats && self.batch_size < 2) {
            return Err(param(format!("batch size {} too small", self.batch_size)));
        }
        Ok(())
    }

    /// Mini-batch size for a pool of `n` samples: the configured size, or
    /// the whole pool when it is smaller.
    pub fn effective_batch(&self, n: usize) -> usize {
        self.batch_size.min(n)
    }
}

/// One line of a training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub iterations: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validation_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_real_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_fake_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub class_accuracy: Option<f64>,
    /// Optimizer steps skipped because a gradient was non-finite.
    pub skipped_steps: u64,
    pub wall_ms: u64,
    /// Digest of the run's RNG position at the end of the epoch.
    pub rng_digest: String,
}

impl EpochRecord {
    fn new(epoch: usize, seed: u64, iterations: u64, started: std::time::Instant) -> Self {
        let digest = rng::child_seed(seed, "digest", &[epoch as u64, iterations]);
        EpochRecord {
            epoch,
            iterations,
            loss: None,
            train_accuracy: None,
            validation_accuracy: None,
            d_loss: None,
            g_loss: None,
            d_real_accuracy: None,
            d_fake_accuracy: None,
            class_accuracy: None,
            skipped_steps: 0,
            wall_ms: started.elapsed().as_millis() as u64,
            rng_digest: format!("{digest:016x}"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn to_jsonl(&self) -> String {
        self.records.iter().map(|r| serde_json::to_string(r).expect("record serializes") + "\n").collect()
    }
}

/// Seeded visiting order of `n` samples for `epoch`.
pub(crate) fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, "shuffle", &[epoch as u64]));
    order
}

/// Stacks images (each `side×side`) into an `N×1×side×side` tensor after
/// applying `f` to every pixel.
pub(crate) fn batch_tensor(images: &[&[f32]], side: usize, f: impl Fn(usize, f32) -> f32) -> Result<Tensor<f32>> {
    let mut data = Vec::with_capacity(images.len() * side * side);
    for img in images {
        if img.len() != side * side {
            return Err(param(format!("image of {} pixels, expected {side}×{side}", img.len())));
        }
        data.extend(img.iter().enumerate().map(|(i, &v)| f(i, v)));
    }
    Ok(Tensor::new(&[images.len(), 1, side, side], data)?)
}

pub(crate) fn all_finite(ts: &[Tensor<f32>]) -> bool {
    ts.iter().all(Tensor::is_finite)
}
