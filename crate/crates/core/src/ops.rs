//! Forward and backward kernels for the layer primitives.
//!
//! The kernels are plain functions over [`Tensor`] values; [`crate::autograd`]
//! records them on a tape. All reductions run in canonical row-major loop
//! order so results are bit-reproducible.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Output geometry of a 3-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv3dGeometry {
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
    pub output: [usize; 3],
    pub c_in: usize,
    pub c_out: usize,
}

impl Conv3dGeometry {
    pub fn new(
        input_shape: &[usize],
        kernel_shape: &[usize],
        stride: [usize; 3],
        pad: [usize; 3],
    ) -> Result<Self> {
        if input_shape.len() != 4 {
            return Err(Error::dim(format!(
                "conv3d input must be [T,H,W,Cin], got {input_shape:?}"
            )));
        }
        if kernel_shape.len() != 5 {
            return Err(Error::dim(format!(
                "conv3d kernel must be [kt,kh,kw,Cin,Cout], got {kernel_shape:?}"
            )));
        }
        if input_shape[3] != kernel_shape[3] {
            return Err(Error::dim(format!(
                "conv3d input has {} channels but kernel expects {}",
                input_shape[3], kernel_shape[3]
            )));
        }
        let mut output = [0; 3];
        for axis in 0..3 {
            if stride[axis] == 0 {
                return Err(Error::dim(format!("conv3d stride on axis {axis} is zero")));
            }
            let padded = input_shape[axis] + 2 * pad[axis];
            if kernel_shape[axis] > padded {
                return Err(Error::dim(format!(
                    "conv3d kernel extent {} exceeds padded input extent {padded} on axis {axis}",
                    kernel_shape[axis]
                )));
            }
            output[axis] = (padded - kernel_shape[axis]) / stride[axis] + 1;
        }
        Ok(Conv3dGeometry {
            input: [input_shape[0], input_shape[1], input_shape[2]],
            kernel: [kernel_shape[0], kernel_shape[1], kernel_shape[2]],
            stride,
            pad,
            output,
            c_in: kernel_shape[3],
            c_out: kernel_shape[4],
        })
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [self.output[0], self.output[1], self.output[2], self.c_out]
    }

    /// Visits, in canonical order, every run of kernel taps along the
    /// width axis that lands inside the unpadded input. Such a run touches
    /// consecutive input cells: `f(out_cell, first_tap, first_in_cell, len)`.
    #[inline]
    fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize, usize)) {
        let [it, ih, iw] = self.input;
        let [kt, kh, kw] = self.kernel;
        let [ot, oh, ow] = self.output;
        let mut out_cell = 0;
        for t in 0..ot {
            let t0 = (t * self.stride[0]) as isize - self.pad[0] as isize;
            for h in 0..oh {
                let h0 = (h * self.stride[1]) as isize - self.pad[1] as isize;
                for w in 0..ow {
                    let w0 = (w * self.stride[2]) as isize - self.pad[2] as isize;
                    let c_lo = (-w0).max(0) as usize;
                    let c_hi = (iw as isize - w0).clamp(0, kw as isize) as usize;
                    if c_lo < c_hi {
                        for a in 0..kt {
                            let ti = t0 + a as isize;
                            if ti < 0 || ti >= it as isize {
                                continue;
                            }
                            for b in 0..kh {
                                let hi = h0 + b as isize;
                                if hi < 0 || hi >= ih as isize {
                                    continue;
                                }
                                let in_cell = (ti as usize * ih + hi as usize) * iw
                                    + (w0 + c_lo as isize) as usize;
                                let tap = (a * kh + b) * kw + c_lo;
                                f(out_cell, tap, in_cell, c_hi - c_lo);
                            }
                        }
                    }
                    out_cell += 1;
                }
            }
        }
    }
}

/// 3-D convolution with zero padding over a `[T,H,W,Cin]` input.
pub fn conv3d(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: [usize; 3],
    pad: [usize; 3],
) -> Result<Tensor> {
    let g = Conv3dGeometry::new(input.shape(), kernel.shape(), stride, pad)?;
    if bias.shape() != [g.c_out] {
        return Err(Error::dim(format!(
            "conv3d bias must be [{}], got {:?}",
            g.c_out,
            bias.shape()
        )));
    }
    Ok(conv3d_forward(&g, input.data(), kernel.data(), bias.data()))
}

/// Row-major `c = a · b + beta · c` with explicit element strides for `a`
/// and `b`; `c` is `[m, n]` contiguous.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() == m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the callers size `a` as m×k, `b` as k×n and `c` as m×n under
    // the given strides, so every index dgemm touches is in bounds.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Conv3dGeometry {
    fn patch_len(&self) -> usize {
        self.kernel.iter().product::<usize>() * self.c_in
    }

    fn out_cells(&self) -> usize {
        self.output.iter().product()
    }

    /// Gathers the receptive field of every output cell into a
    /// `[cells, kt·kh·kw·Cin]` matrix; taps in the padding stay zero.
    pub(crate) fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let p = self.patch_len();
        let cin = self.c_in;
        let mut cols = vec![0.0; self.out_cells() * p];
        self.for_each_run(|oc, tap, ic, len| {
            let dst = oc * p + tap * cin;
            let n = len * cin;
            cols[dst..dst + n].copy_from_slice(&x[ic * cin..ic * cin + n]);
        });
        cols
    }

    /// Adjoint of [`Self::im2col`]: sums patch entries back onto input cells.
    fn col2im(&self, cols: &[f64], input_len: usize) -> Vec<f64> {
        let p = self.patch_len();
        let cin = self.c_in;
        let mut x = vec![0.0; input_len];
        self.for_each_run(|oc, tap, ic, len| {
            let src = oc * p + tap * cin;
            let n = len * cin;
            for (d, &s) in x[ic * cin..ic * cin + n].iter_mut().zip(&cols[src..src + n]) {
                *d += s;
            }
        });
        x
    }
}

pub(crate) fn conv3d_forward(g: &Conv3dGeometry, x: &[f64], k: &[f64], bias: &[f64]) -> Tensor {
    conv3d_forward_cols(g, &g.im2col(x), k, bias)
}

/// Convolution of already gathered patches (see [`Conv3dGeometry::im2col`]).
pub(crate) fn conv3d_forward_cols(g: &Conv3dGeometry, cols: &[f64], k: &[f64], bias: &[f64]) -> Tensor {
    let cout = g.c_out;
    let cells = g.out_cells();
    let p = g.patch_len();
    let mut out = Vec::with_capacity(cells * cout);
    for _ in 0..cells {
        out.extend_from_slice(bias);
    }
    gemm(cells, p, cout, cols, (p, 1), k, (cout, 1), 1.0, &mut out);
    Tensor::from_parts(g.output_shape().to_vec(), out)
}

/// Gradients of a conv3d with respect to its input (optional), kernel and bias.
pub(crate) struct Conv3dGrads {
    pub input: Option<Vec<f64>>,
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
}

/// `cols` are the gathered patches of the forward input and `input_len`
/// its element count.
pub(crate) fn conv3d_backward(
    g: &Conv3dGeometry,
    cols: &[f64],
    input_len: usize,
    k: &[f64],
    grad_out: &[f64],
    need_input: bool,
) -> Conv3dGrads {
    let cout = g.c_out;
    let cells = g.out_cells();
    let p = g.patch_len();
    let mut gb = vec![0.0; cout];
    for cell in grad_out.chunks_exact(cout) {
        for (b, &v) in gb.iter_mut().zip(cell) {
            *b += v;
        }
    }
    // dK = colsᵀ · dY
    let mut gk = vec![0.0; k.len()];
    gemm(p, cells, cout, cols, (1, p), grad_out, (cout, 1), 0.0, &mut gk);
    let gx = need_input.then(|| {
        // dcols = dY · Kᵀ, then scatter back onto the input cells
        let mut dcols = vec![0.0; cells * p];
        gemm(cells, cout, p, grad_out, (cout, 1), k, (1, cout), 0.0, &mut dcols);
        g.col2im(&dcols, input_len)
    });
    Conv3dGrads {
        input: gx,
        kernel: gk,
        bias: gb,
    }
}

fn check_affine(input: &Tensor, weight: &Tensor, bias: &Tensor, what: &str) -> Result<(usize, usize)> {
    if weight.rank() != 2 {
        return Err(Error::dim(format!(
            "{what} weight must be [Cin,Cout], got {:?}",
            weight.shape()
        )));
    }
    let (cin, cout) = (weight.shape()[0], weight.shape()[1]);
    let last = *input.shape().last().expect("rank >= 1");
    if last != cin {
        return Err(Error::dim(format!(
            "{what} input has {last} channels but weight expects {cin}"
        )));
    }
    if bias.shape() != [cout] {
        return Err(Error::dim(format!(
            "{what} bias must be [{cout}], got {:?}",
            bias.shape()
        )));
    }
    Ok((cin, cout))
}

/// Per-cell affine map of the trailing channel axis (a 1x1x1 convolution).
pub fn pointwise_conv(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (cin, cout) = check_affine(input, weight, bias, "pointwise_conv")?;
    let cells = input.len() / cin;
    let mut out = Vec::with_capacity(cells * cout);
    for _ in 0..cells {
        out.extend_from_slice(bias.data());
    }
    gemm(cells, cin, cout, input.data(), (cin, 1), weight.data(), (cout, 1), 1.0, &mut out);
    let mut shape = input.shape().to_vec();
    *shape.last_mut().expect("rank >= 1") = cout;
    Ok(Tensor::from_parts(shape, out))
}

pub(crate) fn pointwise_backward(
    x: &[f64],
    w: &[f64],
    cin: usize,
    cout: usize,
    grad_out: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let cells = x.len() / cin;
    let mut gb = vec![0.0; cout];
    for go in grad_out.chunks_exact(cout) {
        for (b, &g) in gb.iter_mut().zip(go) {
            *b += g;
        }
    }
    let mut gw = vec![0.0; w.len()];
    gemm(cin, cells, cout, x, (1, cin), grad_out, (cout, 1), 0.0, &mut gw);
    let mut gx = vec![0.0; x.len()];
    gemm(cells, cout, cin, grad_out, (cout, 1), w, (1, cout), 0.0, &mut gx);
    (gx, gw, gb)
}

/// Fully connected layer on a rank-1 input.
pub fn dense(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    if input.rank() != 1 {
        return Err(Error::dim(format!(
            "dense input must be rank 1, got {:?}",
            input.shape()
        )));
    }
    pointwise_conv(input, weight, bias)
}

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| if v > 0.0 { v } else { 0.0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropoutMode {
    Train,
    Eval,
}

/// Inverted dropout. Returns the output and, in train mode, the per-element
/// multiplier (0 or 1/(1-p)) used to produce it.
pub fn dropout(
    input: &Tensor,
    p: f64,
    mode: DropoutMode,
    rng: Option<&mut Rng>,
) -> Result<(Tensor, Option<Vec<f64>>)> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidProbability(p));
    }
    if mode == DropoutMode::Eval || p == 0.0 {
        return Ok((input.clone(), None));
    }
    let rng = rng.ok_or_else(|| Error::Contract("train-mode dropout needs an rng".into()))?;
    let scale = 1.0 / (1.0 - p);
    let mask: Vec<f64> = (0..input.len())
        .map(|_| if rng.next_f64() >= p { scale } else { 0.0 })
        .collect();
    let out = input
        .data()
        .iter()
        .zip(&mask)
        .map(|(x, m)| x * m)
        .collect();
    Ok((Tensor::from_parts(input.shape().to_vec(), out), Some(mask)))
}

/// Mean over all cells of a `[T,H,W,C]` tensor.
pub fn global_avg_pool(input: &Tensor) -> Result<Tensor> {
    if input.rank() != 4 {
        return Err(Error::dim(format!(
            "global_avg_pool expects rank 4, got {:?}",
            input.shape()
        )));
    }
    Ok(mean_over_cells(input))
}

pub(crate) fn mean_over_cells(input: &Tensor) -> Tensor {
    let c = *input.shape().last().expect("rank >= 1");
    let cells = input.len() / c;
    let mut out = vec![0.0; c];
    for cell in input.data().chunks_exact(c) {
        for (o, &v) in out.iter_mut().zip(cell) {
            *o += v;
        }
    }
    let inv = 1.0 / cells as f64;
    for o in &mut out {
        *o *= inv;
    }
    Tensor::from_parts(vec![c], out)
}

/// Max-shifted softmax of a slice.
pub fn softmax_slice(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::dim("softmax of an empty vector"));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Softmax along the trailing axis (a rank-1 input is the plain case).
pub fn softmax(scores: &Tensor) -> Result<Tensor> {
    let k = *scores.shape().last().expect("rank >= 1");
    let mut out = Vec::with_capacity(scores.len());
    for row in scores.data().chunks_exact(k) {
        out.extend(softmax_slice(row)?);
    }
    Ok(Tensor::from_parts(scores.shape().to_vec(), out))
}

/// `Σ_k weights[k] · features[k]` for `features: [K, C]`, `weights: [K]`.
pub fn weighted_sum_rows(features: &Tensor, weights: &Tensor) -> Result<Tensor> {
    if features.rank() != 2 || weights.rank() != 1 {
        return Err(Error::dim(format!(
            "weighted_sum expects [K,C] features and [K] weights, got {:?} and {:?}",
            features.shape(),
            weights.shape()
        )));
    }
    let (k, c) = (features.shape()[0], features.shape()[1]);
    if weights.len() != k {
        return Err(Error::dim(format!(
            "{k} features but {} weights",
            weights.len()
        )));
    }
    let mut out = vec![0.0; c];
    for (row, &w) in features.data().chunks_exact(c).zip(weights.data()) {
        for (o, &f) in out.iter_mut().zip(row) {
            *o += w * f;
        }
    }
    Ok(Tensor::from_parts(vec![c], out))
}

/// `Σ_k weights[k] · features[k]` over a list of equally shaped vectors.
pub fn weighted_sum(features: &[Tensor], weights: &Tensor) -> Result<Tensor> {
    let stacked = stack(features)?;
    let c = features[0].len();
    weighted_sum_rows(&stacked.reshape(&[features.len(), c])?, weights)
}

/// Stacks equally shaped tensors along a new leading axis.
pub fn stack(items: &[Tensor]) -> Result<Tensor> {
    let first = items.first().ok_or_else(|| Error::dim("stack of zero tensors"))?;
    let mut data = Vec::with_capacity(first.len() * items.len());
    for (i, t) in items.iter().enumerate() {
        if t.shape() != first.shape() {
            return Err(Error::dim(format!(
                "stack item {i} has shape {:?}, expected {:?}",
                t.shape(),
                first.shape()
            )));
        }
        data.extend_from_slice(t.data());
    }
    let mut shape = vec![items.len()];
    shape.extend_from_slice(first.shape());
    Ok(Tensor::from_parts(shape, data))
}

/// `-log softmax(logits)[label]` for a two-logit output.
pub fn cross_entropy(logits: &Tensor, label: usize) -> Result<f64> {
    if label > 1 {
        return Err(Error::InvalidLabel(label));
    }
    if logits.shape() != [2] {
        return Err(Error::dim(format!(
            "cross_entropy expects 2 logits, got {:?}",
            logits.shape()
        )));
    }
    let z = logits.data();
    let max = z[0].max(z[1]);
    let lse = max + ((z[0] - max).exp() + (z[1] - max).exp()).ln();
    Ok(lse - z[label])
}
