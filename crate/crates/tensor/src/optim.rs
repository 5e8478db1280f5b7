//! Parameter update rules.

use serde::{Deserialize, Serialize};

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Optimizer family and its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "kebab-case")]
pub enum OptimizerKind {
    SgdNesterov { lr: f64, momentum: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, epsilon: f64 },
}

impl OptimizerKind {
    pub fn nesterov(lr: f64) -> Self {
        OptimizerKind::SgdNesterov { lr, momentum: 0.9 }
    }

    pub fn adam(lr: f64) -> Self {
        OptimizerKind::Adam { lr, beta1: 0.5, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Optimizer hyperparameters plus per-parameter auxiliary buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    kind: OptimizerKind,
    /// Nesterov velocity, or Adam first moment.
    first: Vec<Vec<T>>,
    /// Adam second moment.
    second: Vec<Vec<T>>,
    step: u64,
}

impl<T: Element> OptimizerState<T> {
    pub fn new(kind: OptimizerKind) -> Self {
        OptimizerState { kind, first: Vec::new(), second: Vec::new(), step: 0 }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    /// Number of updates applied so far.
    pub fn steps(&self) -> u64 {
        self.step
    }

    fn ensure_buffers(&mut self, params: &[Tensor<T>]) -> Result<()> {
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
            if matches!(self.kind, OptimizerKind::Adam { .. }) {
                self.second = self.first.clone();
            }
        }
        if self.first.len() != params.len() || self.first.iter().zip(params).any(|(b, p)| b.len() != p.len()) {
            return Err(TensorError::dim("optimizer", "parameter set changed shape since the first step"));
        }
        Ok(())
    }

    /// Applies one update in place.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(TensorError::dim("optimizer", format!("{} params but {} grads", params.len(), grads.len())));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(TensorError::dim(
                    "optimizer",
                    format!("param {i} has shape {:?} but grad {:?}", p.shape(), g.shape()),
                ));
            }
        }
        self.ensure_buffers(params)?;
        self.step += 1;
        let f = T::from_f64_lossy;
        match self.kind {
            OptimizerKind::SgdNesterov { lr, momentum } => {
                // v ← μv − η∇f(p);  p ← p + μv − η∇f(p)
                // (look-ahead form with the gradient taken at the shifted point)
                let (lr, mu) = (f(lr), f(momentum));
                for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.first) {
                    for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.iter_mut()) {
                        *vv = mu * *vv - lr * gv;
                        *pv = *pv + mu * *vv - lr * gv;
                    }
                }
            }
            OptimizerKind::Adam { lr, beta1, beta2, epsilon } => {
                let t = self.step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                let (lr, b1, b2, eps) = (f(lr), f(beta1), f(beta2), f(epsilon));
                let (c1, c2) = (f(c1), f(c2));
                for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.first).zip(&mut self.second) {
                    for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *mv = b1 * *mv + (T::one() - b1) * gv;
                        *vv = b2 * *vv + (T::one() - b2) * gv * gv;
                        let mhat = *mv / c1;
                        let vhat = *vv / c2;
                        *pv = *pv - lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
