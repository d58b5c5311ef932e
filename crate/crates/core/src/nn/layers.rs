//! Batched kernels. Activations are `batch x channels x height x width`, row-major.

use super::real::Real;
use super::spec::Shape;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub input: Shape,
    pub output: Shape,
    pub kh: usize,
    pub kw: usize,
    pub ph: usize,
    pub pw: usize,
}

impl ConvGeom {
    pub fn new(input: Shape, filters: usize, kh: usize, kw: usize, ph: usize, pw: usize) -> Self {
        let output = Shape::new(filters, input.height + 2 * ph + 1 - kh, input.width + 2 * pw + 1 - kw);
        ConvGeom {
            input,
            output,
            kh,
            kw,
            ph,
            pw,
        }
    }

    /// Rows of the unrolled patch matrix (= weights per filter).
    pub fn patch_len(&self) -> usize {
        self.input.channels * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.output.height * self.output.width
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Layer {
    Conv {
        geom: ConvGeom,
        weight: usize,
        bias: usize,
    },
    Relu,
    MaxPool {
        input: Shape,
        output: Shape,
        ph: usize,
        pw: usize,
    },
    Flatten,
    Dense {
        inputs: usize,
        outputs: usize,
        weight: usize,
        bias: usize,
    },
    LogSoftmax,
    Sigmoid,
}

impl Layer {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Conv { .. } => "conv",
            Layer::Relu => "relu",
            Layer::MaxPool { .. } => "maxpool",
            Layer::Flatten => "flatten",
            Layer::Dense { .. } => "dense",
            Layer::LogSoftmax => "logsoftmax",
            Layer::Sigmoid => "sigmoid",
        }
    }
}

/// Output columns `ow` whose input column `ow + kj - pw` lies inside `0..in_w`.
fn valid_cols(out_w: usize, in_w: usize, kj: usize, pw: usize) -> (usize, usize) {
    let lo = pw.saturating_sub(kj);
    let hi = (in_w + pw).saturating_sub(kj).min(out_w);
    (lo, hi.max(lo))
}

fn im2col<T: Real>(g: &ConvGeom, x: &[T], cols: &mut [T]) {
    let (in_h, in_w) = (g.input.height, g.input.width);
    let (out_h, out_w) = (g.output.height, g.output.width);
    let n = g.positions();
    for c in 0..g.input.channels {
        let plane = &x[c * in_h * in_w..(c + 1) * in_h * in_w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * n..(row + 1) * n];
                let (lo, hi) = valid_cols(out_w, in_w, kj, g.pw);
                for oh in 0..out_h {
                    let drow = &mut dst[oh * out_w..(oh + 1) * out_w];
                    let ih = (oh + ki) as isize - g.ph as isize;
                    if ih < 0 || ih >= in_h as isize {
                        drow.fill(T::zero());
                        continue;
                    }
                    let src = &plane[ih as usize * in_w..(ih as usize + 1) * in_w];
                    drow[..lo].fill(T::zero());
                    drow[hi..].fill(T::zero());
                    let off = lo + kj - g.pw;
                    drow[lo..hi].copy_from_slice(&src[off..off + hi - lo]);
                }
            }
        }
    }
}

fn col2im<T: Real>(g: &ConvGeom, cols: &[T], dx: &mut [T]) {
    let (in_h, in_w) = (g.input.height, g.input.width);
    let (out_h, out_w) = (g.output.height, g.output.width);
    let n = g.positions();
    for c in 0..g.input.channels {
        let plane = &mut dx[c * in_h * in_w..(c + 1) * in_h * in_w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * n..(row + 1) * n];
                let (lo, hi) = valid_cols(out_w, in_w, kj, g.pw);
                for oh in 0..out_h {
                    let ih = (oh + ki) as isize - g.ph as isize;
                    if ih < 0 || ih >= in_h as isize {
                        continue;
                    }
                    let off = lo + kj - g.pw;
                    let drow = &mut plane[ih as usize * in_w + off..ih as usize * in_w + off + hi - lo];
                    for (d, &v) in drow.iter_mut().zip(&src[oh * out_w + lo..oh * out_w + hi]) {
                        *d = *d + v;
                    }
                }
            }
        }
    }
}

pub(crate) fn conv_forward<T: Real>(g: &ConvGeom, weight: &[T], bias: &[T], x: &[T], batch: usize, out: &mut [T]) {
    let (in_len, out_len) = (g.input.len(), g.output.len());
    let (f, k, n) = (g.output.channels, g.patch_len(), g.positions());
    let mut cols = vec![T::zero(); k * n];
    for s in 0..batch {
        im2col(g, &x[s * in_len..(s + 1) * in_len], &mut cols);
        let y = &mut out[s * out_len..(s + 1) * out_len];
        T::gemm(f, k, n, weight, false, &cols, false, y, false);
        for (row, &b) in y.chunks_exact_mut(n).zip(bias) {
            row.iter_mut().for_each(|v| *v = *v + b);
        }
    }
}

/// Accumulates weight/bias gradients; writes the input gradient when `dx` is given.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward<T: Real>(
    g: &ConvGeom,
    weight: &[T],
    x: &[T],
    dy: &[T],
    batch: usize,
    dw: &mut [T],
    db: &mut [T],
    mut dx: Option<&mut [T]>,
) {
    let (in_len, out_len) = (g.input.len(), g.output.len());
    let (f, k, n) = (g.output.channels, g.patch_len(), g.positions());
    let mut cols = vec![T::zero(); k * n];
    let mut dcols = vec![T::zero(); k * n];
    for s in 0..batch {
        let dys = &dy[s * out_len..(s + 1) * out_len];
        im2col(g, &x[s * in_len..(s + 1) * in_len], &mut cols);
        // dW (f x k) += dY (f x n) * cols^T
        T::gemm(f, n, k, dys, false, &cols, true, dw, true);
        for (b, row) in db.iter_mut().zip(dys.chunks_exact(n)) {
            *b = *b + row.iter().copied().sum::<T>();
        }
        if let Some(dx) = dx.as_deref_mut() {
            // dcols (k x n) = W^T * dY
            T::gemm(k, f, n, weight, true, dys, false, &mut dcols, false);
            let dxs = &mut dx[s * in_len..(s + 1) * in_len];
            dxs.fill(T::zero());
            col2im(g, &dcols, dxs);
        }
    }
}

/// Non-overlapping max pooling; records the first (row-major) maximum of each window.
pub(crate) fn maxpool_forward<T: Real>(
    input: Shape,
    output: Shape,
    ph: usize,
    pw: usize,
    x: &[T],
    batch: usize,
    out: &mut [T],
    argmax: &mut [usize],
) {
    let (ih, iw) = (input.height, input.width);
    let (oh, ow) = (output.height, output.width);
    for s in 0..batch {
        for c in 0..input.channels {
            let base_in = (s * input.channels + c) * ih * iw;
            let base_out = (s * output.channels + c) * oh * ow;
            for r in 0..oh {
                for col in 0..ow {
                    let mut best = base_in + r * ph * iw + col * pw;
                    for dr in 0..ph {
                        for dc in 0..pw {
                            let i = base_in + (r * ph + dr) * iw + col * pw + dc;
                            if x[i] > x[best] {
                                best = i;
                            }
                        }
                    }
                    out[base_out + r * ow + col] = x[best];
                    argmax[base_out + r * ow + col] = best;
                }
            }
        }
    }
}

pub(crate) fn dense_forward<T: Real>(
    inputs: usize,
    outputs: usize,
    weight: &[T],
    bias: &[T],
    x: &[T],
    batch: usize,
    out: &mut [T],
) {
    T::gemm(batch, inputs, outputs, x, false, weight, true, out, false);
    for row in out.chunks_exact_mut(outputs) {
        for (v, &b) in row.iter_mut().zip(bias) {
            *v = *v + b;
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn dense_backward<T: Real>(
    inputs: usize,
    outputs: usize,
    weight: &[T],
    x: &[T],
    dy: &[T],
    batch: usize,
    dw: &mut [T],
    db: &mut [T],
    dx: Option<&mut [T]>,
) {
    // dW (out x in) += dY^T (out x batch) * X (batch x in)
    T::gemm(outputs, batch, inputs, dy, true, x, false, dw, true);
    for row in dy.chunks_exact(outputs) {
        for (b, &g) in db.iter_mut().zip(row) {
            *b = *b + g;
        }
    }
    if let Some(dx) = dx {
        T::gemm(batch, outputs, inputs, dy, false, weight, false, dx, false);
    }
}

pub(crate) fn log_softmax_rows<T: Real>(x: &[T], width: usize, out: &mut [T]) {
    for (row, o) in x.chunks_exact(width).zip(out.chunks_exact_mut(width)) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        for (d, &v) in o.iter_mut().zip(row) {
            *d = v - lse;
        }
    }
}
