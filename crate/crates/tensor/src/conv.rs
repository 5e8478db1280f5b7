//! Convolution, transposed convolution and max pooling.
//!
//! Both convolution directions are lowered to per-sample GEMMs over an
//! im2col buffer. For a kernel `K`, stride `s` and padding `p`, column
//! `(oy, ox)` of the buffer reads image pixel `(oy·s + ki − p, ox·s + kj − p)`.
//! The transposed convolution scatters through the same mapping, which makes
//! it the exact adjoint of [`Graph::conv2d`] for a shared weight array.

use crate::element::{gemm, Element, MatRef};
use crate::error::{Result, TensorError};
use crate::graph::{Graph, Op, Var};
use crate::tensor::{Nchw, Tensor};

#[derive(Debug, Clone, Copy)]
pub(crate) struct ColGeom {
    /// Image side (channels, height, width) of the im2col mapping.
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    /// Column grid.
    pub oh: usize,
    pub ow: usize,
}

impl ColGeom {
    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }
}

pub(crate) fn im2col<T: Element>(img: &[T], g: &ColGeom, cols: &mut [T]) {
    let ncols = g.cols();
    let mut row = 0;
    for c in 0..g.c {
        let plane = &img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize { T::zero() } else { src[ix as usize] };
                    }
                }
                row += 1;
            }
        }
    }
}

pub(crate) fn col2im<T: Element>(cols: &[T], g: &ColGeom, img: &mut [T]) {
    let ncols = g.cols();
    let mut row = 0;
    for c in 0..g.c {
        let plane = &mut img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let src = &cols[row * ncols..(row + 1) * ncols];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, &v) in src[oy * g.ow..(oy + 1) * g.ow].iter().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] = dst[ix as usize] + v;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

pub(crate) struct ConvSaved<T> {
    pub input: Var,
    pub weight: Var,
    pub bias: Var,
    pub geom: ColGeom,
    /// im2col buffers of every sample (conv2d only).
    pub cols: Vec<T>,
}

pub(crate) struct PoolSaved {
    pub input: Var,
    pub argmax: Vec<usize>,
}

fn check_square_kernel(op: &'static str, ws: &[usize]) -> Result<(usize, usize, usize)> {
    match ws[..] {
        [a, b, kh, kw] if kh == kw => Ok((a, b, kh)),
        [_, _, kh, kw] => Err(TensorError::dim(op, format!("kernel must be square, got {kh}×{kw} (axes 2, 3)"))),
        _ => Err(TensorError::dim(op, format!("weight must be rank 4, got {ws:?}"))),
    }
}

fn check_bias(op: &'static str, bs: &[usize], channels: usize) -> Result<()> {
    if bs != [channels] {
        return Err(TensorError::dim(op, format!("bias must be [{channels}], got {bs:?}")));
    }
    Ok(())
}

impl<T: Element> Graph<T> {
    /// 2-D convolution of an NCHW input with an `O×C×K×K` weight.
    ///
    /// Output side is `⌊(H + 2·padding − K)/stride⌋ + 1`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        const OP: &str = "conv2d";
        let x = Nchw::of(OP, self.value(input))?;
        let (o, c, k) = check_square_kernel(OP, self.shape(weight))?;
        if c != x.c {
            return Err(TensorError::dim(
                OP,
                format!("input channels (axis 1) = {} but weight expects {c} (axis 1)", x.c),
            ));
        }
        check_bias(OP, self.shape(bias), o)?;
        if stride == 0 {
            return Err(TensorError::param(OP, "stride must be >= 1"));
        }
        if x.h + 2 * padding < k {
            return Err(TensorError::dim(OP, format!("kernel {k} exceeds padded height (axis 2) {}", x.h + 2 * padding)));
        }
        if x.w + 2 * padding < k {
            return Err(TensorError::dim(OP, format!("kernel {k} exceeds padded width (axis 3) {}", x.w + 2 * padding)));
        }
        let geom = ColGeom {
            c,
            h: x.h,
            w: x.w,
            k,
            stride,
            pad: padding,
            oh: (x.h + 2 * padding - k) / stride + 1,
            ow: (x.w + 2 * padding - k) / stride + 1,
        };
        let (rows, ncols) = (geom.rows(), geom.cols());
        let mut cols = vec![T::zero(); x.n * rows * ncols];
        let mut out = vec![T::zero(); x.n * o * ncols];
        let xv = self.value(input).data();
        let wv = self.value(weight).data();
        let bv = self.value(bias).data();
        for n in 0..x.n {
            let col = &mut cols[n * rows * ncols..(n + 1) * rows * ncols];
            im2col(&xv[n * x.sample()..(n + 1) * x.sample()], &geom, col);
            let dst = &mut out[n * o * ncols..(n + 1) * o * ncols];
            for (oc, plane) in dst.chunks_exact_mut(ncols).enumerate() {
                plane.fill(bv[oc]);
            }
            gemm(T::one(), MatRef::new(wv, o, rows), MatRef::new(col, rows, ncols), T::one(), dst);
        }
        let value = Tensor::new(&[x.n, o, geom.oh, geom.ow], out)?;
        Ok(self.push_op(
            value,
            &[input, weight, bias],
            Op::Conv2d(ConvSaved { input, weight, bias, geom, cols }),
        ))
    }

    /// Fractionally-strided convolution with a `Cin×Cout×K×K` weight.
    ///
    /// Output side is `(H − 1)·stride − 2·padding + K + output_padding`.
    pub fn conv_transpose2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        padding: usize,
        output_padding: usize,
    ) -> Result<Var> {
        const OP: &str = "conv_transpose2d";
        let x = Nchw::of(OP, self.value(input))?;
        let (cin, cout, k) = check_square_kernel(OP, self.shape(weight))?;
        if cin != x.c {
            return Err(TensorError::dim(
                OP,
                format!("input channels (axis 1) = {} but weight expects {cin} (axis 0)", x.c),
            ));
        }
        check_bias(OP, self.shape(bias), cout)?;
        if stride == 0 {
            return Err(TensorError::param(OP, "stride must be >= 1"));
        }
        if output_padding >= stride {
            return Err(TensorError::param(OP, format!("output_padding {output_padding} must be < stride {stride}")));
        }
        let side = |s: usize| ((s - 1) * stride + k + output_padding) as isize - 2 * padding as isize;
        let (oh, ow) = (side(x.h), side(x.w));
        if oh <= 0 || ow <= 0 {
            return Err(TensorError::dim(OP, format!("non-positive output size {oh}×{ow}")));
        }
        let geom = ColGeom { c: cout, h: oh as usize, w: ow as usize, k, stride, pad: padding, oh: x.h, ow: x.w };
        let (rows, ncols) = (geom.rows(), geom.cols());
        let osample = cout * geom.h * geom.w;
        let mut out = vec![T::zero(); x.n * osample];
        let mut col = vec![T::zero(); rows * ncols];
        let xv = self.value(input).data();
        let wv = self.value(weight).data();
        let bv = self.value(bias).data();
        for n in 0..x.n {
            gemm(
                T::one(),
                MatRef::new(wv, cin, rows).t(),
                MatRef::new(&xv[n * x.sample()..(n + 1) * x.sample()], cin, ncols),
                T::zero(),
                &mut col,
            );
            let dst = &mut out[n * osample..(n + 1) * osample];
            for (oc, plane) in dst.chunks_exact_mut(geom.h * geom.w).enumerate() {
                plane.fill(bv[oc]);
            }
            col2im(&col, &geom, dst);
        }
        let value = Tensor::new(&[x.n, cout, geom.h, geom.w], out)?;
        Ok(self.push_op(
            value,
            &[input, weight, bias],
            Op::ConvTranspose2d(ConvSaved { input, weight, bias, geom, cols: Vec::new() }),
        ))
    }

    /// 2×2 max pooling with stride 2. Ties go to the first position in
    /// row-major order.
    pub fn maxpool2d(&mut self, input: Var) -> Result<Var> {
        const OP: &str = "maxpool2d";
        let x = Nchw::of(OP, self.value(input))?;
        if x.h % 2 != 0 {
            return Err(TensorError::dim(OP, format!("height (axis 2) = {} is odd", x.h)));
        }
        if x.w % 2 != 0 {
            return Err(TensorError::dim(OP, format!("width (axis 3) = {} is odd", x.w)));
        }
        let (oh, ow) = (x.h / 2, x.w / 2);
        let xv = self.value(input).data();
        let mut out = Vec::with_capacity(x.n * x.c * oh * ow);
        let mut argmax = Vec::with_capacity(out.capacity());
        for plane in 0..x.n * x.c {
            let base = plane * x.plane();
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + 2 * oy * x.w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * oy + dy) * x.w + 2 * ox + dx;
                        if xv[idx] > xv[best] {
                            best = idx;
                        }
                    }
                    out.push(xv[best]);
                    argmax.push(best);
                }
            }
        }
        let value = Tensor::new(&[x.n, x.c, oh, ow], out)?;
        Ok(self.push_op(value, &[input], Op::MaxPool(PoolSaved { input, argmax })))
    }
}

pub(crate) fn conv2d_backward<T: Element>(
    graph: &Graph<T>,
    s: &ConvSaved<T>,
    g: &Tensor<T>,
    res: &mut Vec<(Var, Tensor<T>)>,
) {
    let x = graph.value(s.input);
    let w = graph.value(s.weight);
    let n = x.shape()[0];
    let o = w.shape()[0];
    let (rows, ncols) = (s.geom.rows(), s.geom.cols());
    let sample = x.len() / n;
    let gd = g.data();

    if graph.requires_grad(s.weight) {
        let mut dw = vec![T::zero(); o * rows];
        for i in 0..n {
            gemm(
                T::one(),
                MatRef::new(&gd[i * o * ncols..(i + 1) * o * ncols], o, ncols),
                MatRef::new(&s.cols[i * rows * ncols..(i + 1) * rows * ncols], rows, ncols).t(),
                T::one(),
                &mut dw,
            );
        }
        res.push((s.weight, Tensor::new(w.shape(), dw).expect("weight shape")));
    }
    if graph.requires_grad(s.bias) {
        res.push((s.bias, channel_sums(gd, n, o, ncols)));
    }
    if graph.requires_grad(s.input) {
        let mut dx = vec![T::zero(); x.len()];
        let mut dcol = vec![T::zero(); rows * ncols];
        for i in 0..n {
            gemm(
                T::one(),
                MatRef::new(w.data(), o, rows).t(),
                MatRef::new(&gd[i * o * ncols..(i + 1) * o * ncols], o, ncols),
                T::zero(),
                &mut dcol,
            );
            col2im(&dcol, &s.geom, &mut dx[i * sample..(i + 1) * sample]);
        }
        res.push((s.input, Tensor::new(x.shape(), dx).expect("input shape")));
    }
}

pub(crate) fn conv_transpose2d_backward<T: Element>(
    graph: &Graph<T>,
    s: &ConvSaved<T>,
    g: &Tensor<T>,
    res: &mut Vec<(Var, Tensor<T>)>,
) {
    let x = graph.value(s.input);
    let w = graph.value(s.weight);
    let (n, cin) = (x.shape()[0], x.shape()[1]);
    let cout = w.shape()[1];
    let (rows, ncols) = (s.geom.rows(), s.geom.cols());
    let osample = cout * s.geom.h * s.geom.w;
    let gd = g.data();
    let need_w = graph.requires_grad(s.weight);
    let need_x = graph.requires_grad(s.input);

    let mut dw = vec![T::zero(); if need_w { cin * rows } else { 0 }];
    let mut dx = vec![T::zero(); if need_x { x.len() } else { 0 }];
    if need_w || need_x {
        let mut dcol = vec![T::zero(); rows * ncols];
        for i in 0..n {
            im2col(&gd[i * osample..(i + 1) * osample], &s.geom, &mut dcol);
            let xs = &x.data()[i * cin * ncols..(i + 1) * cin * ncols];
            if need_w {
                gemm(T::one(), MatRef::new(xs, cin, ncols), MatRef::new(&dcol, rows, ncols).t(), T::one(), &mut dw);
            }
            if need_x {
                gemm(
                    T::one(),
                    MatRef::new(w.data(), cin, rows),
                    MatRef::new(&dcol, rows, ncols),
                    T::zero(),
                    &mut dx[i * cin * ncols..(i + 1) * cin * ncols],
                );
            }
        }
    }
    if need_w {
        res.push((s.weight, Tensor::new(w.shape(), dw).expect("weight shape")));
    }
    if graph.requires_grad(s.bias) {
        res.push((s.bias, channel_sums(gd, n, cout, s.geom.h * s.geom.w)));
    }
    if need_x {
        res.push((s.input, Tensor::new(x.shape(), dx).expect("input shape")));
    }
}

pub(crate) fn maxpool_backward<T: Element>(
    graph: &Graph<T>,
    s: &PoolSaved,
    g: &Tensor<T>,
    res: &mut Vec<(Var, Tensor<T>)>,
) {
    let x = graph.value(s.input);
    let mut dx = vec![T::zero(); x.len()];
    for (&idx, &gv) in s.argmax.iter().zip(g.data()) {
        dx[idx] = dx[idx] + gv;
    }
    res.push((s.input, Tensor::new(x.shape(), dx).expect("input shape")));
}

fn channel_sums<T: Element>(g: &[T], n: usize, c: usize, plane: usize) -> Tensor<T> {
    let mut db = vec![T::zero(); c];
    for i in 0..n {
        for (ch, d) in db.iter_mut().enumerate() {
            let start = (i * c + ch) * plane;
            *d = *d + g[start..start + plane].iter().copied().sum::<T>();
        }
    }
    Tensor::new(&[c], db).expect("channel count")
}
