use rand::Rng;

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::graph::{Graph, Op, Var};
use crate::tensor::{Nchw, Tensor};

/// Per-channel running mean and variance of a batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Element> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        RunningStats { mean: vec![T::zero(); channels], var: vec![T::one(); channels] }
    }
}

/// How a batch-norm layer obtains its statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    /// Batch statistics; running stats are updated.
    Train,
    /// Batch statistics; running stats are left untouched.
    TrainFrozen,
    /// Running statistics.
    Infer,
}

#[derive(Debug, Clone, Copy)]
pub struct BatchNormConfig<T> {
    /// Weight of the previous running value in the exponential average.
    pub momentum: T,
    pub epsilon: T,
}

pub(crate) struct BatchNormSaved<T> {
    input: Var,
    gamma: Var,
    beta: Var,
    xhat: Vec<T>,
    inv_std: Vec<T>,
    batch_stats: bool,
}

pub(crate) struct DropoutSaved<T> {
    input: Var,
    mask: Vec<T>,
}

impl<T: Element> Graph<T> {
    /// Per-channel batch normalization of an NCHW tensor.
    pub fn batchnorm2d(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        running: &mut RunningStats<T>,
        mode: NormMode,
        cfg: BatchNormConfig<T>,
    ) -> Result<Var> {
        const OP: &str = "batchnorm2d";
        let x = Nchw::of(OP, self.value(input))?;
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(v) != [x.c] {
                return Err(TensorError::dim(OP, format!("{name} must be [{}], got {:?}", x.c, self.shape(v))));
            }
        }
        if running.mean.len() != x.c || running.var.len() != x.c {
            return Err(TensorError::dim(OP, format!("running stats sized for {} channels, input has {}", running.mean.len(), x.c)));
        }
        let m = x.n * x.plane();
        let batch_stats = mode != NormMode::Infer;
        if batch_stats && m < 2 {
            return Err(TensorError::DegenerateBatch { op: OP, got: m });
        }
        let xv = self.value(input).data();
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mf = T::from_usize(m).expect("count");
        let mut xhat = vec![T::zero(); xv.len()];
        let mut out = vec![T::zero(); xv.len()];
        let mut inv_std = vec![T::zero(); x.c];
        for c in 0..x.c {
            let planes = (0..x.n).map(|n| (n * x.c + c) * x.plane());
            let (mean, var) = if batch_stats {
                let mut sum = T::zero();
                for s in planes.clone() {
                    sum = sum + xv[s..s + x.plane()].iter().copied().sum::<T>();
                }
                let mean = sum / mf;
                let mut sq = T::zero();
                for s in planes.clone() {
                    sq = sq + xv[s..s + x.plane()].iter().map(|&v| (v - mean) * (v - mean)).sum::<T>();
                }
                let var = sq / mf;
                if mode == NormMode::Train {
                    let unbiased = sq / (mf - T::one());
                    let keep = cfg.momentum;
                    running.mean[c] = keep * running.mean[c] + (T::one() - keep) * mean;
                    running.var[c] = keep * running.var[c] + (T::one() - keep) * unbiased;
                }
                (mean, var)
            } else {
                (running.mean[c], running.var[c])
            };
            let is = T::one() / (var + cfg.epsilon).sqrt();
            inv_std[c] = is;
            for s in planes {
                for i in s..s + x.plane() {
                    let h = (xv[i] - mean) * is;
                    xhat[i] = h;
                    out[i] = gv[c] * h + bv[c];
                }
            }
        }
        let value = Tensor::new(self.shape(input), out)?;
        Ok(self.push_op(
            value,
            &[input, gamma, beta],
            Op::BatchNorm(BatchNormSaved { input, gamma, beta, xhat, inv_std, batch_stats }),
        ))
    }

    /// Inverted dropout: in training each element is zeroed with probability
    /// `p` and survivors are scaled by `1/(1−p)`; otherwise the identity.
    pub fn dropout<R: Rng + ?Sized>(&mut self, input: Var, p: f64, train: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::param("dropout", format!("probability {p} must be in [0, 1)")));
        }
        if !train || p == 0.0 {
            let v = self.value(input).clone();
            let mask = vec![T::one(); v.len()];
            return Ok(self.push_op(v, &[input], Op::Dropout(DropoutSaved { input, mask })));
        }
        let keep = T::from_f64_lossy(1.0 / (1.0 - p));
        let x = self.value(input);
        let mask: Vec<T> = (0..x.len())
            .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
            .collect();
        let data = x.data().iter().zip(&mask).map(|(&a, &m)| a * m).collect();
        let v = Tensor::new(x.shape(), data)?;
        Ok(self.push_op(v, &[input], Op::Dropout(DropoutSaved { input, mask })))
    }
}

pub(crate) fn batchnorm_backward<T: Element>(
    graph: &Graph<T>,
    s: &BatchNormSaved<T>,
    g: &Tensor<T>,
    res: &mut Vec<(Var, Tensor<T>)>,
) {
    let x = Nchw::of("batchnorm2d", graph.value(s.input)).expect("checked in forward");
    let gamma = graph.value(s.gamma).data();
    let gd = g.data();
    let m = T::from_usize(x.n * x.plane()).expect("count");
    let mut dgamma = vec![T::zero(); x.c];
    let mut dbeta = vec![T::zero(); x.c];
    let mut dx = vec![T::zero(); gd.len()];
    for c in 0..x.c {
        let starts: Vec<usize> = (0..x.n).map(|n| (n * x.c + c) * x.plane()).collect();
        let (mut sg, mut sgx) = (T::zero(), T::zero());
        for &st in &starts {
            for i in st..st + x.plane() {
                sg = sg + gd[i];
                sgx = sgx + gd[i] * s.xhat[i];
            }
        }
        dgamma[c] = sgx;
        dbeta[c] = sg;
        let k = gamma[c] * s.inv_std[c];
        for &st in &starts {
            for i in st..st + x.plane() {
                dx[i] = if s.batch_stats {
                    k * (gd[i] - sg / m - s.xhat[i] * sgx / m)
                } else {
                    k * gd[i]
                };
            }
        }
    }
    if graph.requires_grad(s.input) {
        res.push((s.input, Tensor::new(graph.shape(s.input), dx).expect("shape")));
    }
    if graph.requires_grad(s.gamma) {
        res.push((s.gamma, Tensor::new(&[x.c], dgamma).expect("shape")));
    }
    if graph.requires_grad(s.beta) {
        res.push((s.beta, Tensor::new(&[x.c], dbeta).expect("shape")));
    }
}

pub(crate) fn dropout_backward<T: Element>(s: &DropoutSaved<T>, g: &Tensor<T>, res: &mut Vec<(Var, Tensor<T>)>) {
    let data = g.data().iter().zip(&s.mask).map(|(&a, &m)| a * m).collect();
    res.push((s.input, Tensor::new(g.shape(), data).expect("shape")));
}
