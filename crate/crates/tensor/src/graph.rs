//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation as it is applied. Nodes are appended
//! in evaluation order, so the tape is already topologically sorted and the
//! backward pass is a single reverse sweep. Gradients reaching a node through
//! several consumers are summed.

use crate::conv::{ConvSaved, PoolSaved};
use crate::element::{gemm, Element, MatRef};
use crate::error::{Result, TensorError};
use crate::loss::LossSaved;
use crate::norm::{BatchNormSaved, DropoutSaved};
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) struct Node<T> {
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
    pub requires_grad: bool,
    pub op: Op<T>,
}

pub(crate) enum Op<T> {
    Leaf,
    Conv2d(ConvSaved<T>),
    ConvTranspose2d(ConvSaved<T>),
    MaxPool(PoolSaved),
    Dense { input: Var, weight: Var, bias: Var },
    BatchNorm(BatchNormSaved<T>),
    Dropout(DropoutSaved<T>),
    Relu(Var),
    LeakyRelu { input: Var, alpha: T },
    Tanh(Var),
    Sigmoid(Var),
    Softmax(Var),
    Reshape(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale { input: Var, factor: T },
    Embedding { table: Var, indices: Vec<usize> },
    Concat { a: Var, b: Var },
    WeightedSum { input: Var, weights: Vec<T> },
    Loss(LossSaved<T>),
}

/// Recording of one forward computation.
///
/// A graph is confined to the thread that builds it and is consumed by a
/// single [`Graph::backward`] call.
pub struct Graph<T: Element> {
    pub(crate) nodes: Vec<Node<T>>,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input; no gradient is tracked for it.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, false, Op::Leaf)
    }

    /// Learnable leaf; its gradient is available after [`Graph::backward`].
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, true, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.nodes[v.0].grad.take()
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, requires_grad: bool, op: Op<T>) -> Var {
        self.nodes.push(Node { value, grad: None, requires_grad, op });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push_op(&mut self, value: Tensor<T>, inputs: &[Var], op: Op<T>) -> Var {
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(value, rg, op)
    }

    /// Back-propagates from a one-element `loss` node.
    ///
    /// Leaves that require gradients receive them in [`Graph::grad`]; any
    /// non-finite gradient reaching a leaf is reported as a numeric error.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(TensorError::dim(
                "backward",
                format!("loss must be a scalar, got shape {:?}", self.shape(loss)),
            ));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let seed_shape = self.nodes[loss.0].value.shape().to_vec();
        self.nodes[loss.0].grad = Some(Tensor::full(&seed_shape, T::one()));

        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(out_grad) = self.nodes[id].grad.take() else {
                continue;
            };
            let op = std::mem::replace(&mut self.nodes[id].op, Op::Leaf);
            if matches!(op, Op::Leaf) {
                if !out_grad.is_finite() {
                    return Err(TensorError::Numeric(format!("non-finite gradient at leaf {id}")));
                }
                self.nodes[id].grad = Some(out_grad);
                continue;
            }
            let contributions = self.backward_op(&op, id, &out_grad)?;
            for (target, g) in contributions {
                if !self.nodes[target.0].requires_grad {
                    continue;
                }
                match &mut self.nodes[target.0].grad {
                    Some(acc) => acc.add_assign(&g)?,
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }

    fn backward_op(&self, op: &Op<T>, id: usize, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let out = &self.nodes[id].value;
        let val = |v: Var| &self.nodes[v.0].value;
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let mut res = Vec::new();
        match op {
            Op::Leaf => {}
            Op::Conv2d(s) => crate::conv::conv2d_backward(self, s, g, &mut res),
            Op::ConvTranspose2d(s) => crate::conv::conv_transpose2d_backward(self, s, g, &mut res),
            Op::MaxPool(s) => crate::conv::maxpool_backward(self, s, g, &mut res),
            Op::BatchNorm(s) => crate::norm::batchnorm_backward(self, s, g, &mut res),
            Op::Dropout(s) => crate::norm::dropout_backward(s, g, &mut res),
            Op::Loss(s) => crate::loss::loss_backward(self, s, g, &mut res),
            &Op::Dense { input, weight, bias } => {
                let x = val(input);
                let w = val(weight);
                let (n, f) = (x.shape()[0], x.shape()[1]);
                let gcols = w.shape()[1];
                if needs(input) {
                    let mut dx = vec![T::zero(); n * f];
                    gemm(T::one(), MatRef::new(g.data(), n, gcols), MatRef::new(w.data(), f, gcols).t(), T::zero(), &mut dx);
                    res.push((input, Tensor::new(x.shape(), dx)?));
                }
                if needs(weight) {
                    let mut dw = vec![T::zero(); f * gcols];
                    gemm(T::one(), MatRef::new(x.data(), n, f).t(), MatRef::new(g.data(), n, gcols), T::zero(), &mut dw);
                    res.push((weight, Tensor::new(w.shape(), dw)?));
                }
                if needs(bias) {
                    let mut db = vec![T::zero(); gcols];
                    for row in g.data().chunks_exact(gcols) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d = *d + v;
                        }
                    }
                    res.push((bias, Tensor::new(&[gcols], db)?));
                }
            }
            &Op::Relu(input) => {
                let x = val(input);
                let dx = zip_map(x, g, |xv, gv| if xv > T::zero() { gv } else { T::zero() });
                res.push((input, dx));
            }
            &Op::LeakyRelu { input, alpha } => {
                let x = val(input);
                let dx = zip_map(x, g, |xv, gv| if xv > T::zero() { gv } else { alpha * gv });
                res.push((input, dx));
            }
            &Op::Tanh(input) => {
                res.push((input, zip_map(out, g, |y, gv| gv * (T::one() - y * y))));
            }
            &Op::Sigmoid(input) => {
                res.push((input, zip_map(out, g, |y, gv| gv * y * (T::one() - y))));
            }
            &Op::Softmax(input) => {
                let c = *out.shape().last().expect("rank >= 1");
                let mut dx = vec![T::zero(); out.len()];
                for ((y, gr), d) in out
                    .data()
                    .chunks_exact(c)
                    .zip(g.data().chunks_exact(c))
                    .zip(dx.chunks_exact_mut(c))
                {
                    let dot: T = y.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for j in 0..c {
                        d[j] = y[j] * (gr[j] - dot);
                    }
                }
                res.push((input, Tensor::new(out.shape(), dx)?));
            }
            &Op::Reshape(input) => {
                res.push((input, g.clone().reshape(val(input).shape())?));
            }
            &Op::Add(a, b) => {
                res.push((a, g.clone()));
                res.push((b, g.clone()));
            }
            &Op::Mul(a, b) => {
                if needs(a) {
                    res.push((a, zip_map(val(b), g, |bv, gv| bv * gv)));
                }
                if needs(b) {
                    res.push((b, zip_map(val(a), g, |av, gv| av * gv)));
                }
            }
            &Op::Scale { input, factor } => {
                res.push((input, g.map(|v| v * factor)));
            }
            Op::Embedding { table, indices } => {
                let t = val(*table);
                let d = t.shape()[1];
                let mut dt = vec![T::zero(); t.len()];
                for (row, &ix) in g.data().chunks_exact(d).zip(indices) {
                    for (acc, &v) in dt[ix * d..(ix + 1) * d].iter_mut().zip(row) {
                        *acc = *acc + v;
                    }
                }
                res.push((*table, Tensor::new(t.shape(), dt)?));
            }
            &Op::Concat { a, b } => {
                let (n, fa) = (val(a).shape()[0], val(a).shape()[1]);
                let fb = val(b).shape()[1];
                let mut da = Vec::with_capacity(n * fa);
                let mut db = Vec::with_capacity(n * fb);
                for row in g.data().chunks_exact(fa + fb) {
                    da.extend_from_slice(&row[..fa]);
                    db.extend_from_slice(&row[fa..]);
                }
                res.push((a, Tensor::new(&[n, fa], da)?));
                res.push((b, Tensor::new(&[n, fb], db)?));
            }
            Op::WeightedSum { input, weights } => {
                let gv = g.item();
                let x = val(*input);
                res.push((*input, Tensor::new(x.shape(), weights.iter().map(|&w| w * gv).collect())?));
            }
        }
        Ok(res)
    }

    // ---- elementary operations ------------------------------------------

    /// Affine map `x·W + b` for `x: N×F`, `W: F×G`, `b: G`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let ws = self.shape(weight).to_vec();
        let bs = self.shape(bias).to_vec();
        let (n, f) = match xs[..] {
            [n, f] => (n, f),
            _ => return Err(TensorError::dim("dense", format!("input must be N×F, got {xs:?}"))),
        };
        let gcols = match ws[..] {
            [wf, g] if wf == f => g,
            [wf, _] => {
                return Err(TensorError::dim(
                    "dense",
                    format!("input features (axis 1) = {f} but weight rows (axis 0) = {wf}"),
                ))
            }
            _ => return Err(TensorError::dim("dense", format!("weight must be F×G, got {ws:?}"))),
        };
        if bs != [gcols] {
            return Err(TensorError::dim("dense", format!("bias must be [{gcols}], got {bs:?}")));
        }
        let mut out = Vec::with_capacity(n * gcols);
        let b = self.value(bias).data();
        for _ in 0..n {
            out.extend_from_slice(b);
        }
        gemm(
            T::one(),
            MatRef::new(self.value(input).data(), n, f),
            MatRef::new(self.value(weight).data(), f, gcols),
            T::one(),
            &mut out,
        );
        let value = Tensor::new(&[n, gcols], out)?;
        Ok(self.push_op(value, &[input, weight, bias], Op::Dense { input, weight, bias }))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let v = self.value(input).map(|x| if x > T::zero() { x } else { T::zero() });
        self.push_op(v, &[input], Op::Relu(input))
    }

    /// `max(x, alpha·x)` for `0 ≤ alpha < 1`.
    pub fn leaky_relu(&mut self, input: Var, alpha: T) -> Var {
        let v = self.value(input).map(|x| if x > T::zero() { x } else { alpha * x });
        self.push_op(v, &[input], Op::LeakyRelu { input, alpha })
    }

    pub fn tanh(&mut self, input: Var) -> Var {
        let v = self.value(input).map(|x| x.tanh());
        self.push_op(v, &[input], Op::Tanh(input))
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let v = self.value(input).map(sigmoid);
        self.push_op(v, &[input], Op::Sigmoid(input))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let c = *x.shape().last().expect("rank >= 1");
        let mut data = x.data().to_vec();
        for row in data.chunks_exact_mut(c) {
            softmax_in_place(row);
        }
        let v = Tensor::new(x.shape(), data).expect("same shape");
        self.push_op(v, &[input], Op::Softmax(input))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(input).clone().reshape(shape)?;
        Ok(self.push_op(v, &[input], Op::Reshape(input)))
    }

    /// Collapses every axis after the first.
    pub fn flatten(&mut self, input: Var) -> Result<Var> {
        let s = self.shape(input);
        let n = s[0];
        let rest = s[1..].iter().product::<usize>().max(1);
        self.reshape(input, &[n, rest])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b)).map_err(|_| {
            TensorError::dim("add", format!("{:?} vs {:?}", self.shape(a), self.shape(b)))
        })?;
        Ok(self.push_op(v, &[a, b], Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::dim("mul", format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let v = zip_map(self.value(a), self.value(b), |x, y| x * y);
        Ok(self.push_op(v, &[a, b], Op::Mul(a, b)))
    }

    pub fn scale(&mut self, input: Var, factor: T) -> Var {
        let v = self.value(input).map(|x| x * factor);
        self.push_op(v, &[input], Op::Scale { input, factor })
    }

    /// Row lookup `table[indices[i]]` giving an `N×D` tensor.
    pub fn embedding(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (rows, d) = match t.shape()[..] {
            [r, d] => (r, d),
            _ => return Err(TensorError::dim("embedding", format!("table must be V×D, got {:?}", t.shape()))),
        };
        if indices.is_empty() {
            return Err(TensorError::dim("embedding", "empty index list"));
        }
        let mut out = Vec::with_capacity(indices.len() * d);
        for &ix in indices {
            if ix >= rows {
                return Err(TensorError::Label { label: ix, classes: rows });
            }
            out.extend_from_slice(&t.data()[ix * d..(ix + 1) * d]);
        }
        let v = Tensor::new(&[indices.len(), d], out)?;
        Ok(self.push_op(v, &[table], Op::Embedding { table, indices: indices.to_vec() }))
    }

    /// Concatenates two `N×F` tensors along axis 1.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[0] != sb[0] {
            return Err(TensorError::dim("concat", format!("{sa:?} vs {sb:?} (axis 0 must agree)")));
        }
        let (n, fa, fb) = (sa[0], sa[1], sb[1]);
        let mut out = Vec::with_capacity(n * (fa + fb));
        for i in 0..n {
            out.extend_from_slice(&self.value(a).data()[i * fa..(i + 1) * fa]);
            out.extend_from_slice(&self.value(b).data()[i * fb..(i + 1) * fb]);
        }
        let v = Tensor::new(&[n, fa + fb], out)?;
        Ok(self.push_op(v, &[a, b], Op::Concat { a, b }))
    }

    /// Scalar `Σ wᵢ·xᵢ` with constant weights; used to reduce any tensor to a
    /// loss when probing gradients.
    pub fn weighted_sum(&mut self, input: Var, weights: &[T]) -> Result<Var> {
        if weights.len() != self.value(input).len() {
            return Err(TensorError::dim(
                "weighted_sum",
                format!("{} weights for {} values", weights.len(), self.value(input).len()),
            ));
        }
        let s: T = self.value(input).data().iter().zip(weights).map(|(&x, &w)| x * w).sum();
        Ok(self.push_op(Tensor::scalar(s), &[input], Op::WeightedSum { input, weights: weights.to_vec() }))
    }
}

pub(crate) fn zip_map<T: Element>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    debug_assert_eq!(a.len(), b.len());
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape(), data).expect("same shape")
}

pub(crate) fn sigmoid<T: Element>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softmax_in_place<T: Element>(row: &mut [T]) {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut z = T::zero();
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        z = z + *v;
    }
    for v in row.iter_mut() {
        *v = *v / z;
    }
}
