use std::time::Instant;

use agf_tensor::{Graph, NamedTensor, OptimizerState, Tensor};

use super::{all_finite, batch_tensor, epoch_order, EpochRecord, Preprocessing, TrainConfig, TrainLog};
use crate::dataset::{class_counts, LesionClass, RoiImage};
use crate::error::{param, Error, Result};
use crate::models::{InputSpec, Mode, Model, ModelSpec, NetInput};
use crate::rng;

/// Checkpoint record holding the training mean image.
pub const MEAN_RECORD: &str = "preprocess.mean";

/// A trained classifier with the mean image subtracted from its inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedClassifier {
    pub model: Model<f32>,
    pub mean: Vec<f32>,
    pub log: TrainLog,
}

impl TrainedClassifier {
    pub fn mean_record(&self) -> NamedTensor {
        let side = (self.mean.len() as f64).sqrt() as usize;
        NamedTensor::new(MEAN_RECORD, Tensor::new(&[1, side, side], self.mean.clone()).expect("square mean"))
    }

    /// Restores the mean image from checkpoint records.
    pub fn from_records(model: Model<f32>, records: &[NamedTensor]) -> Result<Self> {
        let mean = records
            .iter()
            .find(|r| r.name == MEAN_RECORD)
            .ok_or_else(|| param(format!("checkpoint lacks {MEAN_RECORD}")))?
            .tensor
            .data()
            .to_vec();
        Ok(TrainedClassifier { model, mean, log: TrainLog::default() })
    }

    pub fn digest(&self) -> String {
        let mut records = self.model.to_records();
        records.push(self.mean_record());
        rng::sha256_hex(&agf_tensor::checkpoint::encode(&records))
    }
}

fn image_side(spec: &ModelSpec) -> Result<usize> {
    match spec.input {
        InputSpec::Image { channels: 1, height, width } if height == width => Ok(height),
        _ => Err(param(format!("{} is not a single-channel square-image network", spec.name))),
    }
}

/// Step-level access to classifier training.
pub struct ClassifierTrainer {
    pub model: Model<f32>,
    pub mean: Vec<f32>,
    opt: OptimizerState<f32>,
    cfg: TrainConfig,
    side: usize,
    iteration: u64,
    skipped: u64,
}

impl ClassifierTrainer {
    /// Initializes the network and computes the mean image of `train`.
    pub fn new(spec: &ModelSpec, train: &[RoiImage], cfg: &TrainConfig) -> Result<Self> {
        cfg.validate(spec.has_batchnorm())?;
        let side = image_side(spec)?;
        if train.is_empty() {
            return Err(Error::Training("empty training set".into()));
        }
        let counts = class_counts(train);
        if let Some(c) = LesionClass::ALL.iter().find(|c| counts[c.index()] == 0) {
            return Err(Error::Training(format!("class {c} missing from the training set")));
        }
        let mut mean = vec![0f64; side * side];
        for r in train {
            if r.pixels.len() != side * side {
                return Err(param(format!("ROI {} does not match the {side}×{side} input", r.id)));
            }
            for (m, &p) in mean.iter_mut().zip(&r.pixels) {
                *m += p as f64;
            }
        }
        let mean = match cfg.preprocessing {
            Preprocessing::MeanSubtract => mean.iter().map(|&m| (m / train.len() as f64) as f32).collect(),
            Preprocessing::TanhRange => return Err(param("the classifier uses mean subtraction")),
        };
        Ok(ClassifierTrainer {
            model: Model::init(spec, rng::child_seed(cfg.seed, "classifier-init", &[]))?,
            mean,
            opt: OptimizerState::new(cfg.optimizer),
            cfg: cfg.clone(),
            side,
            iteration: 0,
            skipped: 0,
        })
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    fn inputs(&self, batch: &[&RoiImage]) -> Result<Tensor<f32>> {
        let px: Vec<&[f32]> = batch.iter().map(|r| r.pixels.as_slice()).collect();
        batch_tensor(&px, self.side, |i, v| v - self.mean[i])
    }

    /// One optimizer step on `batch`; returns the batch loss and the number
    /// of correct predictions.
    pub fn step(&mut self, batch: &[&RoiImage]) -> Result<(f64, usize)> {
        let labels: Vec<usize> = batch.iter().map(|r| r.class.index()).collect();
        let x = self.inputs(batch)?;
        let mut g = Graph::new();
        let vars = self.model.bind(&mut g, true);
        let xi = g.input(x);
        let mut drop_rng = rng::stream(self.cfg.seed, "dropout", &[self.iteration]);
        let f = self.model.forward(&mut g, &vars, NetInput::Image(xi), Mode::TRAIN, &mut drop_rng)?;
        let loss = g.softmax_cross_entropy(f.logits[0], &labels)?;
        let lv = g.value(loss).item() as f64;
        let correct = argmax_rows(g.value(f.outputs[0]).data(), 3).iter().zip(&labels).filter(|(p, y)| p == y).count();
        if !lv.is_finite() {
            return Err(Error::Divergence {
                iteration: self.iteration,
                detail: format!("classifier loss is {lv}"),
                last_good: Box::new(self.model.to_records()),
            });
        }
        self.iteration += 1;
        let grads = match g.backward(loss) {
            Ok(()) => vars.iter().map(|&v| g.take_grad(v).expect("param grad")).collect::<Vec<_>>(),
            Err(agf_tensor::TensorError::Numeric(_)) => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        if grads.is_empty() || !all_finite(&grads) {
            self.skipped += 1;
        } else {
            self.opt.step(self.model.params_mut(), &grads)?;
        }
        Ok((lv, correct))
    }

    /// Mean loss on `batch` in inference mode (no dropout, no update).
    pub fn eval_loss(&mut self, batch: &[&RoiImage]) -> Result<f64> {
        let labels: Vec<usize> = batch.iter().map(|r| r.class.index()).collect();
        let x = self.inputs(batch)?;
        let mut g = Graph::new();
        let vars = self.model.bind(&mut g, false);
        let xi = g.input(x);
        let f = self.model.forward(&mut g, &vars, NetInput::Image(xi), Mode::INFER, &mut rng::stream(0, "unused", &[]))?;
        let loss = g.softmax_cross_entropy(f.logits[0], &labels)?;
        Ok(g.value(loss).item() as f64)
    }

    /// Full schedule. With `validation`, the checkpoint with the best
    /// validation accuracy (earliest on ties) is kept; otherwise the last.
    pub fn train(
        mut self,
        train: &[RoiImage],
        validation: Option<&[RoiImage]>,
        mut on_epoch: impl FnMut(&EpochRecord, &TrainedClassifier) -> Result<()>,
    ) -> Result<TrainedClassifier> {
        let n = train.len();
        let b = self.cfg.effective_batch(n);
        let mut log = TrainLog::default();
        let mut best: Option<(f64, Model<f32>)> = None;
        'epochs: for epoch in 0..self.cfg.epochs {
            let started = Instant::now();
            let order = epoch_order(self.cfg.seed, epoch, n);
            let (mut loss_sum, mut correct, mut seen, mut steps) = (0.0, 0usize, 0usize, 0usize);
            let skipped_before = self.skipped;
            let mut stop = false;
            for chunk in order.chunks_exact(b) {
                if self.cfg.max_iterations.is_some_and(|m| self.iteration >= m) {
                    stop = true;
                    break;
                }
                let batch: Vec<&RoiImage> = chunk.iter().map(|&i| &train[i]).collect();
                let (l, c) = self.step(&batch)?;
                loss_sum += l;
                correct += c;
                seen += batch.len();
                steps += 1;
            }
            let mut rec = EpochRecord::new(epoch, self.cfg.seed, self.iteration, started);
            rec.loss = (steps > 0).then(|| loss_sum / steps as f64);
            rec.train_accuracy = (seen > 0).then(|| correct as f64 / seen as f64);
            rec.skipped_steps = self.skipped - skipped_before;
            if let Some(val) = validation {
                let acc = accuracy(&self.model, &self.mean, val)?;
                rec.validation_accuracy = Some(acc);
                if best.as_ref().is_none_or(|(b, _)| acc > *b) {
                    best = Some((acc, self.model.clone()));
                }
            }
            if steps > 0 {
                log.records.push(rec.clone());
                let snapshot = TrainedClassifier { model: self.model.clone(), mean: self.mean.clone(), log: TrainLog::default() };
                on_epoch(&rec, &snapshot)?;
            }
            if stop {
                break 'epochs;
            }
        }
        let model = match best {
            Some((_, m)) => m,
            None => self.model,
        };
        Ok(TrainedClassifier { model, mean: self.mean, log })
    }
}

pub(crate) fn argmax_rows(data: &[f32], width: usize) -> Vec<usize> {
    // Lowest index wins ties.
    data.chunks(width)
        .map(|row| row.iter().enumerate().fold(0, |best, (i, &v)| if v > row[best] { i } else { best }))
        .collect()
}

fn infer_batches<F>(model: &Model<f32>, mean: &[f32], rois: &[RoiImage], mut take: F) -> Result<()>
where
    F: FnMut(&Graph<f32>, &crate::models::Forward),
{
    let side = image_side(&model.spec)?;
    let mut m = model.clone();
    for chunk in rois.chunks(64) {
        let px: Vec<&[f32]> = chunk.iter().map(|r| r.pixels.as_slice()).collect();
        let x = batch_tensor(&px, side, |i, v| v - mean[i])?;
        let mut g = Graph::new();
        let vars = m.bind(&mut g, false);
        let xi = g.input(x);
        let f = m.forward(&mut g, &vars, NetInput::Image(xi), Mode::INFER, &mut rng::stream(0, "unused", &[]))?;
        take(&g, &f);
    }
    Ok(())
}

/// Class probabilities per ROI, in inference mode.
pub fn predict(model: &Model<f32>, mean: &[f32], rois: &[RoiImage]) -> Result<Vec<[f32; 3]>> {
    let mut out = Vec::with_capacity(rois.len());
    infer_batches(model, mean, rois, |g, f| {
        out.extend(g.value(f.outputs[0]).data().chunks(3).map(|c| [c[0], c[1], c[2]]));
    })?;
    Ok(out)
}

/// Activations of the last hidden layer (the input of the softmax layer).
pub fn extract_features(model: &Model<f32>, mean: &[f32], rois: &[RoiImage]) -> Result<Vec<Vec<f32>>> {
    let mut out = Vec::with_capacity(rois.len());
    infer_batches(model, mean, rois, |g, f| {
        let v = g.value(f.features);
        let w = v.shape()[1];
        out.extend(v.data().chunks(w).map(<[f32]>::to_vec));
    })?;
    Ok(out)
}

fn accuracy(model: &Model<f32>, mean: &[f32], rois: &[RoiImage]) -> Result<f64> {
    if rois.is_empty() {
        return Ok(0.0);
    }
    let probs = predict(model, mean, rois)?;
    let flat: Vec<f32> = probs.iter().flatten().copied().collect();
    let correct = argmax_rows(&flat, 3).iter().zip(rois).filter(|(p, r)| **p == r.class.index()).count();
    Ok(correct as f64 / rois.len() as f64)
}
