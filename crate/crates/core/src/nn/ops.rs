//! Single-sample layer kernels and their reverse-mode counterparts.
//!
//! Images are height x width x channels, convolution kernels are
//! kh x kw x in_channels x filters, dense weights are out x in.

use rand::Rng;

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Output keeps the input size; the odd extra row/column of padding
    /// goes at the bottom/right.
    Same,
    Valid,
}

impl Padding {
    /// Leading pad and output extent along one axis.
    fn geometry(self, input: usize, kernel: usize) -> (usize, usize) {
        match self {
            Padding::Same => ((kernel - 1) / 2, input),
            Padding::Valid => (0, (input + 1).saturating_sub(kernel)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropoutMode {
    Train,
    Infer,
}

/// Validated geometry of one convolution layer.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    h: usize,
    w: usize,
    c: usize,
    kh: usize,
    kw: usize,
    f: usize,
    pt: usize,
    pl: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    pub(crate) fn new(input: &[usize], kernel: &[usize], padding: Padding) -> Result<Self> {
        let [h, w, c] = input[..] else {
            return Err(Error::Shape(format!("expected an h x w x c image, got {input:?}")));
        };
        let [kh, kw, kc, f] = kernel[..] else {
            return Err(Error::Shape(format!("conv kernel must be rank 4, got {kernel:?}")));
        };
        if kc != c {
            return Err(Error::Shape(format!(
                "conv kernel expects {kc} input channels, input has {c}"
            )));
        }
        if kh == 0 || kw == 0 {
            return Err(Error::Shape("conv kernel has a zero extent".into()));
        }
        let (pt, oh) = padding.geometry(h, kh);
        let (pl, ow) = padding.geometry(w, kw);
        if oh == 0 || ow == 0 {
            return Err(Error::Shape(format!("{kh}x{kw} kernel does not fit a {h}x{w} input")));
        }
        Ok(Self { h, w, c, kh, kw, f, pt, pl, oh, ow })
    }

    /// Input pixel under kernel tap `(i, j)` for output `(oy, ox)`, if inside.
    #[inline]
    fn tap(&self, oy: usize, ox: usize, i: usize, j: usize) -> Option<usize> {
        let iy = (oy + i).checked_sub(self.pt).filter(|&y| y < self.h)?;
        let ix = (ox + j).checked_sub(self.pl).filter(|&x| x < self.w)?;
        Some(iy * self.w + ix)
    }
}

/// Row-major matrix view, optionally read transposed.
#[derive(Clone, Copy)]
pub(crate) struct Mat<'a, T> {
    data: &'a [T],
    rows: usize,
    cols: usize,
    transposed: bool,
}

impl<'a, T: Scalar> Mat<'a, T> {
    pub(crate) fn new(data: &'a [T], rows: usize, cols: usize) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix storage does not match its extent");
        Self {
            data,
            rows,
            cols,
            transposed: false,
        }
    }

    pub(crate) fn t(self) -> Self {
        Self {
            transposed: !self.transposed,
            ..self
        }
    }

    /// Logical extent and (row, column) strides.
    fn layout(&self) -> (usize, usize, (isize, isize)) {
        let c = self.cols as isize;
        if self.transposed {
            (self.cols, self.rows, (1, c))
        } else {
            (self.rows, self.cols, (c, 1))
        }
    }
}

/// `c <- a b + beta c`, with `c` row-major.
pub(crate) fn gemm<T: Scalar>(a: Mat<'_, T>, b: Mat<'_, T>, beta: T, c: &mut [T]) {
    let (m, k, sa) = a.layout();
    let (kb, n, sb) = b.layout();
    assert_eq!(k, kb, "inner dimensions differ");
    assert_eq!(c.len(), m * n, "output storage does not match");
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: extents and strides were checked against the slice lengths
    // above, and `c` is a unique borrow distinct from `a` and `b`.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.data.as_ptr(),
            sa,
            b.data.as_ptr(),
            sb,
            beta,
            c.as_mut_ptr(),
            (n as isize, 1),
        );
    }
}

/// Unrolls every output position's receptive field into one row
/// (`batch * positions` x `kh * kw * c`), zero where padding is read.
fn im2col<T: Scalar>(g: &ConvGeom, xs: &[T]) -> Vec<T> {
    let taps = g.kh * g.kw * g.c;
    let in_len = g.h * g.w * g.c;
    let npos = g.oh * g.ow;
    let batch = xs.len() / in_len;
    let mut cols = vec![T::zero(); batch * npos * taps];
    for (x, rows) in xs.chunks_exact(in_len).zip(cols.chunks_exact_mut(npos * taps)) {
        for (pos, row) in rows.chunks_exact_mut(taps).enumerate() {
            let (oy, ox) = (pos / g.ow, pos % g.ow);
            for i in 0..g.kh {
                for j in 0..g.kw {
                    if let Some(px) = g.tap(oy, ox, i, j) {
                        let t = (i * g.kw + j) * g.c;
                        row[t..t + g.c].copy_from_slice(&x[px * g.c..(px + 1) * g.c]);
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-adds unrolled rows back onto the images.
fn col2im<T: Scalar>(g: &ConvGeom, cols: &[T], batch: usize) -> Vec<T> {
    let taps = g.kh * g.kw * g.c;
    let in_len = g.h * g.w * g.c;
    let npos = g.oh * g.ow;
    let mut xs = vec![T::zero(); batch * in_len];
    for (x, rows) in xs.chunks_exact_mut(in_len).zip(cols.chunks_exact(npos * taps)) {
        for (pos, row) in rows.chunks_exact(taps).enumerate() {
            let (oy, ox) = (pos / g.ow, pos % g.ow);
            for i in 0..g.kh {
                for j in 0..g.kw {
                    if let Some(px) = g.tap(oy, ox, i, j) {
                        let t = (i * g.kw + j) * g.c;
                        for (d, &v) in x[px * g.c..(px + 1) * g.c].iter_mut().zip(&row[t..t + g.c]) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }
    xs
}

/// Convolution of a batch of images stored back to back.
pub(crate) fn conv_batch<T: Scalar>(g: &ConvGeom, xs: &[T], kernel: &[T], bias: &[T]) -> Vec<T> {
    let taps = g.kh * g.kw * g.c;
    let cols = im2col(g, xs);
    let rows = cols.len() / taps;
    let mut out = Vec::with_capacity(rows * g.f);
    for _ in 0..rows {
        out.extend_from_slice(bias);
    }
    gemm(Mat::new(&cols, rows, taps), Mat::new(kernel, taps, g.f), T::one(), &mut out);
    out
}

/// Accumulates kernel and bias gradients over the batch and returns the
/// input gradients.
pub(crate) fn conv_batch_backward<T: Scalar>(
    g: &ConvGeom,
    xs: &[T],
    kernel: &[T],
    grad_out: &[T],
    grad_kernel: &mut [T],
    grad_bias: &mut [T],
) -> Vec<T> {
    let taps = g.kh * g.kw * g.c;
    let cols = im2col(g, xs);
    let rows = cols.len() / taps;
    for go in grad_out.chunks_exact(g.f) {
        for (b, &v) in grad_bias.iter_mut().zip(go) {
            *b += v;
        }
    }
    let gy = Mat::new(grad_out, rows, g.f);
    gemm(Mat::new(&cols, rows, taps).t(), gy, T::one(), grad_kernel);
    let mut grad_cols = vec![T::zero(); rows * taps];
    gemm(gy, Mat::new(kernel, taps, g.f).t(), T::zero(), &mut grad_cols);
    col2im(g, &grad_cols, xs.len() / (g.h * g.w * g.c))
}

/// Stride-1 cross-correlation plus bias.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    padding: Padding,
) -> Result<Tensor<T>> {
    let g = ConvGeom::new(input.shape(), kernel.shape(), padding)?;
    if bias.shape() != [g.f] {
        return Err(Error::Shape(format!("conv bias must have shape [{}], got {:?}", g.f, bias.shape())));
    }
    Tensor::new(
        vec![g.oh, g.ow, g.f],
        conv_batch(&g, input.data(), kernel.data(), bias.data()),
    )
}

/// Accumulates kernel and bias gradients and returns the input gradient.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    padding: Padding,
    grad_out: &Tensor<T>,
    grad_kernel: &mut Tensor<T>,
    grad_bias: &mut Tensor<T>,
) -> Result<Tensor<T>> {
    let g = ConvGeom::new(input.shape(), kernel.shape(), padding)?;
    if grad_out.shape() != [g.oh, g.ow, g.f] {
        return Err(Error::Shape(format!(
            "conv output gradient has shape {:?}, expected {:?}",
            grad_out.shape(),
            [g.oh, g.ow, g.f]
        )));
    }
    if grad_kernel.shape() != kernel.shape() || grad_bias.shape() != [g.f] {
        return Err(Error::Shape("conv gradient buffers do not match the layer".into()));
    }
    let gx = conv_batch_backward(
        &g,
        input.data(),
        kernel.data(),
        grad_out.data(),
        grad_kernel.data_mut(),
        grad_bias.data_mut(),
    );
    Tensor::new(input.shape().to_vec(), gx)
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut out = x.clone();
    relu_in_place(out.data_mut());
    out
}

pub(crate) fn relu_in_place<T: Scalar>(x: &mut [T]) {
    for v in x {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Masks an upstream gradient by a rectified output (`out > 0`).
pub(crate) fn relu_backward<T: Scalar>(out: &[T], grad: &mut [T]) {
    for (g, &o) in grad.iter_mut().zip(out) {
        if o <= T::zero() {
            *g = T::zero();
        }
    }
}

/// Output extent of a pooling window over an `h x w` image.
pub(crate) fn pool_geometry(input: &[usize], pool_h: usize, pool_w: usize) -> Result<(usize, usize, usize)> {
    let [h, w, c] = input[..] else {
        return Err(Error::Shape(format!("expected an h x w x c image, got {input:?}")));
    };
    if pool_h == 0 || pool_w == 0 || pool_h > h || pool_w > w {
        return Err(Error::Shape(format!(
            "{pool_h}x{pool_w} pooling window does not fit a {h}x{w} input"
        )));
    }
    Ok((h / pool_h, w / pool_w, c))
}

/// Writes pooled values and the winning flat input index of each output.
pub(crate) fn maxpool_raw<T: Scalar>(
    x: &[T],
    w: usize,
    (oh, ow, c): (usize, usize, usize),
    (pool_h, pool_w): (usize, usize),
    out: &mut [T],
    argmax: &mut [usize],
) {
    let mut o = 0;
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let mut best = ((oy * pool_h) * w + ox * pool_w) * c + ch;
                for i in 0..pool_h {
                    for j in 0..pool_w {
                        let idx = ((oy * pool_h + i) * w + ox * pool_w + j) * c + ch;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                }
                out[o] = x[best];
                argmax[o] = best;
                o += 1;
            }
        }
    }
}

/// Non-overlapping max pooling (stride = window). Trailing rows/columns that
/// do not fill a window are dropped. Returns the output and, per output
/// element, the flat input index that won.
pub fn maxpool<T: Scalar>(x: &Tensor<T>, pool_h: usize, pool_w: usize) -> Result<(Tensor<T>, Vec<usize>)> {
    let geom = pool_geometry(x.shape(), pool_h, pool_w)?;
    let n = geom.0 * geom.1 * geom.2;
    let mut out = vec![T::zero(); n];
    let mut argmax = vec![0; n];
    maxpool_raw(x.data(), x.shape()[1], geom, (pool_h, pool_w), &mut out, &mut argmax);
    Ok((Tensor::new(vec![geom.0, geom.1, geom.2], out)?, argmax))
}

pub fn maxpool_backward<T: Scalar>(input_shape: &[usize], argmax: &[usize], grad: &Tensor<T>) -> Tensor<T> {
    let mut gx = Tensor::zeros(input_shape.to_vec());
    let d = gx.data_mut();
    for (&idx, &g) in argmax.iter().zip(grad.data()) {
        d[idx] += g;
    }
    gx
}

pub fn flatten<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    Tensor::from_vec(x.data().to_vec())
}

/// `W x + b` for every row of `xs` (batch x in), weight stored out x in.
pub(crate) fn dense_batch<T: Scalar>(xs: &[T], weight: &[T], bias: &[T]) -> Vec<T> {
    let out = bias.len();
    let inp = weight.len() / out;
    let batch = xs.len() / inp;
    let mut y = Vec::with_capacity(batch * out);
    for _ in 0..batch {
        y.extend_from_slice(bias);
    }
    gemm(Mat::new(xs, batch, inp), Mat::new(weight, out, inp).t(), T::one(), &mut y);
    y
}

/// Accumulates weight and bias gradients over the batch and returns the
/// input gradients (batch x in).
pub(crate) fn dense_batch_backward<T: Scalar>(
    xs: &[T],
    weight: &[T],
    grad_out: &[T],
    grad_weight: &mut [T],
    grad_bias: &mut [T],
) -> Vec<T> {
    let out = grad_bias.len();
    let inp = weight.len() / out;
    let batch = xs.len() / inp;
    for go in grad_out.chunks_exact(out) {
        for (b, &v) in grad_bias.iter_mut().zip(go) {
            *b += v;
        }
    }
    let gy = Mat::new(grad_out, batch, out);
    gemm(gy.t(), Mat::new(xs, batch, inp), T::one(), grad_weight);
    let mut gx = vec![T::zero(); batch * inp];
    gemm(gy, Mat::new(weight, out, inp), T::zero(), &mut gx);
    gx
}

fn dense_check<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<()> {
    let [out, inp] = weight.shape()[..] else {
        return Err(Error::Shape(format!("dense weight must be rank 2, got {:?}", weight.shape())));
    };
    if x.shape() != [inp] {
        return Err(Error::Shape(format!(
            "dense layer expects a vector of {inp}, got {:?}",
            x.shape()
        )));
    }
    if bias.shape() != [out] {
        return Err(Error::Shape(format!("dense bias must have shape [{out}], got {:?}", bias.shape())));
    }
    Ok(())
}

/// `W x + b` with `W` stored out x in.
pub fn dense<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    dense_check(x, weight, bias)?;
    Ok(Tensor::from_vec(dense_batch(x.data(), weight.data(), bias.data())))
}

/// Single-sample form of the dense backward pass.
pub fn dense_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    grad_weight: &mut Tensor<T>,
    grad_bias: &mut Tensor<T>,
) -> Result<Tensor<T>> {
    dense_check(x, weight, grad_bias)?;
    if grad_out.len() != grad_bias.len() || grad_weight.shape() != weight.shape() {
        return Err(Error::Shape("dense gradient buffers do not match the layer".into()));
    }
    Ok(Tensor::from_vec(dense_batch_backward(
        x.data(),
        weight.data(),
        grad_out.data(),
        grad_weight.data_mut(),
        grad_bias.data_mut(),
    )))
}

/// Inverted dropout. In training mode each element is zeroed with
/// probability `rate` and survivors are scaled by `1 / (1 - rate)`; the
/// returned mask holds the per-element multiplier. Inference is identity.
pub fn dropout<T: Scalar, R: Rng + ?Sized>(
    x: &Tensor<T>,
    rate: f64,
    mode: DropoutMode,
    rng: &mut R,
) -> Result<(Tensor<T>, Option<Vec<T>>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Argument(format!("dropout rate must lie in [0, 1), got {rate}")));
    }
    if mode == DropoutMode::Infer || rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let keep = T::of(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..x.len())
        .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
        .collect();
    let mut out = x.clone();
    for (v, &m) in out.data_mut().iter_mut().zip(&mask) {
        *v *= m;
    }
    Ok((out, Some(mask)))
}

/// Stabilized softmax and cross-entropy against one class.
pub fn softmax_xent<T: Scalar>(logits: &[T], label: usize) -> Result<(T, Vec<T>)> {
    if logits.len() < 2 {
        return Err(Error::Argument(format!("softmax needs at least 2 classes, got {}", logits.len())));
    }
    if label >= logits.len() {
        return Err(Error::Argument(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let probs = softmax(logits);
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let log_sum = logits.iter().map(|&z| (z - max).exp()).sum::<T>().ln();
    Ok((log_sum - (logits[label] - max), probs))
}

pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total = exps.iter().copied().sum::<T>();
    exps.into_iter().map(|e| e / total).collect()
}
