//! Classification and adversarial losses.
//!
//! Probability inputs are clamped to `[PROB_EPS, 1 − PROB_EPS]` before the
//! logarithm; the clamp has zero derivative outside that band.

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::graph::{softmax_in_place, Graph, Op, Var};
use crate::tensor::Tensor;

pub const PROB_EPS: f64 = 1e-7;

/// Which event a probability tensor should be scored against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    /// `−mean(log p)`
    One,
    /// `−mean(log(1 − p))`
    Zero,
}

pub(crate) enum LossSaved<T> {
    SoftmaxCe { logits: Var, labels: Vec<usize>, probs: Vec<T> },
    Binary { input: Var, target: Target },
    Nll { input: Var, labels: Vec<usize> },
}

fn clamp_prob<T: Element>(p: T) -> (T, bool) {
    let eps = T::from_f64_lossy(PROB_EPS);
    if p < eps {
        (eps, true)
    } else if p > T::one() - eps {
        (T::one() - eps, true)
    } else {
        (p, false)
    }
}

fn check_labels(op: &'static str, shape: &[usize], labels: &[usize]) -> Result<(usize, usize)> {
    let (n, c) = match shape[..] {
        [n, c] => (n, c),
        _ => return Err(TensorError::dim(op, format!("expected N×C, got {shape:?}"))),
    };
    if labels.len() != n {
        return Err(TensorError::dim(op, format!("{} labels for batch of {n} (axis 0)", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(TensorError::Label { label: bad, classes: c });
    }
    Ok((n, c))
}

impl<T: Element> Graph<T> {
    /// Mean negative log-likelihood of `labels` under `softmax(logits)`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (n, c) = check_labels("softmax_cross_entropy", self.shape(logits), labels)?;
        let mut probs = self.value(logits).data().to_vec();
        let mut total = T::zero();
        for (row, (&y, raw)) in probs
            .chunks_exact_mut(c)
            .zip(labels.iter().zip(self.value(logits).data().chunks_exact(c)))
        {
            let m = raw.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = m + raw.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
            total = total + lse - raw[y];
            softmax_in_place(row);
        }
        let loss = total / T::from_usize(n).expect("count");
        Ok(self.push_op(
            Tensor::scalar(loss),
            &[logits],
            Op::Loss(LossSaved::SoftmaxCe { logits, labels: labels.to_vec(), probs }),
        ))
    }

    /// Binary log-loss of a probability tensor against a constant target.
    pub fn binary_log_loss(&mut self, input: Var, target: Target) -> Var {
        let x = self.value(input);
        let n = T::from_usize(x.len()).expect("count");
        let total: T = x
            .data()
            .iter()
            .map(|&p| {
                let (p, _) = clamp_prob(p);
                match target {
                    Target::One => -p.ln(),
                    Target::Zero => -(T::one() - p).ln(),
                }
            })
            .sum();
        self.push_op(Tensor::scalar(total / n), &[input], Op::Loss(LossSaved::Binary { input, target }))
    }

    /// `−mean(log probs[i, labels[i]])` for row-normalized `probs`.
    pub fn nll_prob(&mut self, probs: Var, labels: &[usize]) -> Result<Var> {
        let (n, c) = check_labels("nll_prob", self.shape(probs), labels)?;
        let d = self.value(probs).data();
        let total: T = labels.iter().enumerate().map(|(i, &y)| -clamp_prob(d[i * c + y]).0.ln()).sum();
        let loss = total / T::from_usize(n).expect("count");
        Ok(self.push_op(
            Tensor::scalar(loss),
            &[probs],
            Op::Loss(LossSaved::Nll { input: probs, labels: labels.to_vec() }),
        ))
    }

    /// Discriminator and non-saturating generator losses:
    /// `d = −mean log D(x) − mean log(1 − D(G(z)))`, `g = −mean log D(G(z))`.
    pub fn gan_losses(&mut self, d_real: Var, d_fake: Var) -> Result<(Var, Var)> {
        let real = self.binary_log_loss(d_real, Target::One);
        let fake = self.binary_log_loss(d_fake, Target::Zero);
        let d_loss = self.add(real, fake)?;
        let g_loss = self.binary_log_loss(d_fake, Target::One);
        Ok((d_loss, g_loss))
    }

    /// Auxiliary-classifier losses in minimized form: `d = −(Ls + Lc)` and
    /// `g = −(Lc − Ls)`, where `Ls` scores the source head and `Lc` the class
    /// head on both real and generated samples.
    pub fn acgan_losses(&mut self, heads: AcganHeads<'_>) -> Result<(Var, Var)> {
        // −Ls = bce(real→1) + bce(fake→0)
        let src_real = self.binary_log_loss(heads.source_real, Target::One);
        let src_fake = self.binary_log_loss(heads.source_fake, Target::Zero);
        let neg_ls = self.add(src_real, src_fake)?;
        let cls_real = self.nll_prob(heads.class_real, heads.real_labels)?;
        let cls_fake = self.nll_prob(heads.class_fake, heads.fake_labels)?;
        let neg_lc = self.add(cls_real, cls_fake)?;
        let d_loss = self.add(neg_ls, neg_lc)?;
        let ls = self.scale(neg_ls, -T::one());
        let g_loss = self.add(neg_lc, ls)?;
        Ok((d_loss, g_loss))
    }
}

/// Inputs of [`Graph::acgan_losses`].
#[derive(Debug, Clone, Copy)]
pub struct AcganHeads<'a> {
    pub source_real: Var,
    pub source_fake: Var,
    pub class_real: Var,
    pub class_fake: Var,
    pub real_labels: &'a [usize],
    pub fake_labels: &'a [usize],
}

pub(crate) fn loss_backward<T: Element>(
    graph: &Graph<T>,
    s: &LossSaved<T>,
    g: &Tensor<T>,
    res: &mut Vec<(Var, Tensor<T>)>,
) {
    let gv = g.item();
    match s {
        LossSaved::SoftmaxCe { logits, labels, probs } => {
            let shape = graph.shape(*logits);
            let (n, c) = (shape[0], shape[1]);
            let k = gv / T::from_usize(n).expect("count");
            let mut d: Vec<T> = probs.iter().map(|&p| p * k).collect();
            for (i, &y) in labels.iter().enumerate() {
                d[i * c + y] = d[i * c + y] - k;
            }
            res.push((*logits, Tensor::new(shape, d).expect("shape")));
        }
        LossSaved::Binary { input, target } => {
            let x = graph.value(*input);
            let k = gv / T::from_usize(x.len()).expect("count");
            let d = x.map(|p| {
                let (pc, clamped) = clamp_prob(p);
                if clamped {
                    return T::zero();
                }
                match target {
                    Target::One => -k / pc,
                    Target::Zero => k / (T::one() - pc),
                }
            });
            res.push((*input, d));
        }
        LossSaved::Nll { input, labels } => {
            let x = graph.value(*input);
            let c = x.shape()[1];
            let k = gv / T::from_usize(labels.len()).expect("count");
            let mut d = vec![T::zero(); x.len()];
            for (i, &y) in labels.iter().enumerate() {
                let (p, clamped) = clamp_prob(x.data()[i * c + y]);
                if !clamped {
                    d[i * c + y] = -k / p;
                }
            }
            res.push((*input, Tensor::new(x.shape(), d).expect("shape")));
        }
    }
}

/// Value-only `(d_loss, g_loss)` for the plain adversarial game.
pub fn gan_bce_losses<T: Element>(d_real: &Tensor<T>, d_fake: &Tensor<T>) -> (T, T) {
    let mut g = Graph::new();
    let r = g.input(d_real.clone());
    let f = g.input(d_fake.clone());
    let (dl, gl) = g.gan_losses(r, f).expect("no shape constraints");
    (g.value(dl).item(), g.value(gl).item())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_discriminator_losses() {
        let half = Tensor::<f64>::full(&[4, 1], 0.5);
        let (d, g) = gan_bce_losses(&half, &half);
        assert!((d - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!((g - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn perfect_discriminator_has_vanishing_loss() {
        let real = Tensor::<f64>::full(&[3, 1], 1.0);
        let fake = Tensor::<f64>::full(&[3, 1], 0.0);
        let (d, g) = gan_bce_losses(&real, &fake);
        assert!(d < 1e-6, "{d}");
        // Generator side saturates at −ln(eps).
        assert!((g + PROB_EPS.ln()).abs() < 1e-6);
    }

    #[test]
    fn cross_entropy_uniform_logits_is_ln_c() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::zeros(&[5, 3]));
        let l = g.softmax_cross_entropy(x, &[0, 1, 2, 0, 1]).unwrap();
        assert!((g.value(l).item() - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_confident_correct_tends_to_zero() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::new(&[1, 3], vec![60.0, 0.0, 0.0]).unwrap());
        let l = g.softmax_cross_entropy(x, &[0]).unwrap();
        assert!(g.value(l).item() < 1e-20);
    }

    #[test]
    fn label_out_of_range_is_rejected() {
        let mut g = Graph::<f32>::new();
        let x = g.input(Tensor::zeros(&[2, 3]));
        assert_eq!(
            g.softmax_cross_entropy(x, &[0, 3]).unwrap_err(),
            TensorError::Label { label: 3, classes: 3 }
        );
    }

    #[test]
    fn cross_entropy_gradient_is_softmax_minus_onehot_over_n() {
        let mut g = Graph::<f64>::new();
        let logits = vec![0.3, -1.2, 2.0, 0.5, 0.5, -0.1];
        let x = g.param(Tensor::new(&[2, 3], logits.clone()).unwrap());
        let labels = [2usize, 0];
        let l = g.softmax_cross_entropy(x, &labels).unwrap();
        g.backward(l).unwrap();
        let grad = g.grad(x).unwrap().data().to_vec();
        for (i, row) in logits.chunks(3).enumerate() {
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            for j in 0..3 {
                let onehot = if labels[i] == j { 1.0 } else { 0.0 };
                let want = (row[j].exp() / z - onehot) / 2.0;
                assert!((grad[i * 3 + j] - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn acgan_uniform_class_head_contributes_ln3() {
        let mut g = Graph::<f64>::new();
        let half = Tensor::full(&[2, 1], 0.5);
        let uniform = Tensor::full(&[2, 3], 1.0 / 3.0);
        let sr = g.input(half.clone());
        let sf = g.input(half);
        let cr = g.input(uniform.clone());
        let cf = g.input(uniform);
        let labels = [0usize, 2];
        let (d, _) = g
            .acgan_losses(AcganHeads {
                source_real: sr,
                source_fake: sf,
                class_real: cr,
                class_fake: cf,
                real_labels: &labels,
                fake_labels: &labels,
            })
            .unwrap();
        // −Ls = 2 ln 2, −Lc = ln 3 (real) + ln 3 (fake)
        let want = 2.0 * 2f64.ln() + 2.0 * 3f64.ln();
        assert!((g.value(d).item() - want).abs() < 1e-12);
    }

    #[test]
    fn acgan_perfect_predictions_minimize_discriminator_loss() {
        let mut g = Graph::<f64>::new();
        let sr = g.input(Tensor::full(&[2, 1], 1.0));
        let sf = g.input(Tensor::full(&[2, 1], 0.0));
        let onehot = Tensor::new(&[2, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        let cr = g.input(onehot.clone());
        let cf = g.input(onehot);
        let labels = [0usize, 1];
        let (d, _) = g
            .acgan_losses(AcganHeads {
                source_real: sr,
                source_fake: sf,
                class_real: cr,
                class_fake: cf,
                real_labels: &labels,
                fake_labels: &labels,
            })
            .unwrap();
        assert!(g.value(d).item() < 1e-6);
    }
}
