//! Minimal dense numeric primitives shared by every pipeline stage.
//!
//! Tensors are row-major `Vec<Real>` buffers with an explicit shape. All
//! operations here are pure; nothing keeps global state except the
//! thread-local multiply-accumulate counter in [`macs`], which instruments
//! every matrix product for the FLOPs cross-checks.

mod partition;

pub use partition::{
    grid_partition, grid_reverse, window_partition, window_reverse, PartitionKind,
    PartitionedTokens, WindowGeometry,
};

use crate::{Error, Real, Result};

/// Thread-local multiply-accumulate counter fed by [`linear`] and the
/// attention kernels. One MAC is one `a * b + c`; the analytic FLOPs model
/// converts at 2 FLOPs per MAC.
pub mod macs {
    use std::cell::Cell;

    thread_local! {
        static COUNT: Cell<u64> = const { Cell::new(0) };
    }

    /// Reset the counter for the current thread.
    pub fn reset() {
        COUNT.with(|c| c.set(0));
    }

    /// MACs recorded on the current thread since the last reset.
    pub fn total() -> u64 {
        COUNT.with(|c| c.get())
    }

    pub(crate) fn add(n: u64) {
        COUNT.with(|c| c.set(c.get() + n));
    }
}

/// Dense row-major tensor of [`Real`] values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<Real>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<Real>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if data.len() != expect {
            return Err(Error::shape(format!(
                "data length {} does not fill shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Identity matrix `[n, n]`.
    pub fn eye(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn filled(shape: &[usize], value: Real) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[Real] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Real] {
        &mut self.data
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::from_vec(shape, self.data.clone())
    }

    fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        let mut off = 0;
        for (i, (&ix, &dim)) in index.iter().zip(&self.shape).enumerate() {
            debug_assert!(ix < dim, "index {ix} out of bounds for axis {i} ({dim})");
            off = off * dim + ix;
        }
        off
    }

    pub fn at(&self, index: &[usize]) -> Real {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: Real) {
        let off = self.offset(index);
        self.data[off] = value;
    }

    /// Length of the last axis.
    pub fn last_dim(&self) -> usize {
        *self.shape.last().expect("tensor has no axes")
    }

    /// Borrow one contiguous slice along the last axis. `row` indexes the
    /// flattened leading axes.
    pub fn row(&self, row: usize) -> &[Real] {
        let d = self.last_dim();
        &self.data[row * d..(row + 1) * d]
    }

    pub fn row_mut(&mut self, row: usize) -> &mut [Real] {
        let d = self.last_dim();
        &mut self.data[row * d..(row + 1) * d]
    }

    /// Number of slices along the last axis.
    pub fn n_rows(&self) -> usize {
        if self.data.is_empty() {
            0
        } else {
            self.data.len() / self.last_dim()
        }
    }

    pub fn map(&self, f: impl Fn(Real) -> Real) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(Real, Real) -> Real) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "zip_map on {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn scale(&self, k: Real) -> Tensor {
        self.map(|v| v * k)
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Real {
        debug_assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, Real::max)
    }
}

/// Affine map along the last axis: `y = W x + b` with `W: [d_out, d_in]`.
///
/// Feeds the MAC counter with `rows * d_out * d_in`.
pub fn linear(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    if w.shape().len() != 2 {
        return Err(Error::shape(format!("weight must be 2-d, got {:?}", w.shape())));
    }
    let (d_out, d_in) = (w.shape()[0], w.shape()[1]);
    if x.last_dim() != d_in {
        return Err(Error::shape(format!(
            "linear input dim {} vs weight columns {}",
            x.last_dim(),
            d_in
        )));
    }
    if b.shape() != [d_out] {
        return Err(Error::shape(format!(
            "bias shape {:?} vs d_out {}",
            b.shape(),
            d_out
        )));
    }
    let rows = x.n_rows();
    let mut out_shape = x.shape().to_vec();
    *out_shape.last_mut().unwrap() = d_out;
    let mut out = Tensor::zeros(&out_shape);
    for r in 0..rows {
        let xin = x.row(r);
        let yout = out.row_mut(r);
        for o in 0..d_out {
            let wrow = w.row(o);
            let mut acc = b.data()[o];
            for i in 0..d_in {
                acc += wrow[i] * xin[i];
            }
            yout[o] = acc;
        }
    }
    macs::add((rows * d_out * d_in) as u64);
    Ok(out)
}

/// Plain matrix product `[m, k] x [k, n] -> [m, n]`, also MAC-instrumented.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(Error::shape(format!(
            "matmul {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = Tensor::zeros(&[m, n]);
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for l in 0..k {
                acc += a.data()[i * k + l] * b.data()[l * n + j];
            }
            out.data_mut()[i * n + j] = acc;
        }
    }
    macs::add((m * n * k) as u64);
    Ok(out)
}

/// Numerically stable softmax over the last axis.
pub fn softmax_lastdim(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for r in 0..out.n_rows() {
        softmax_slice(out.row_mut(r));
    }
    out
}

/// In-place stable softmax of one slice.
pub fn softmax_slice(v: &mut [Real]) {
    if v.is_empty() {
        return;
    }
    let max = v.iter().cloned().fold(Real::NEG_INFINITY, Real::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// `p`-norm `(sum |x|^p)^(1/p)` reduced over `axes`; remaining axes keep
/// their order. `p = 1` is special-cased to an exact magnitude sum.
pub fn p_norm(x: &Tensor, p: Real, axes: &[usize]) -> Result<Tensor> {
    let nd = x.shape().len();
    if p < 1.0 {
        return Err(Error::config(format!("p-norm needs p >= 1, got {p}")));
    }
    let mut reduce = vec![false; nd];
    for &a in axes {
        if a >= nd {
            return Err(Error::shape(format!("axis {a} out of range for {nd}-d")));
        }
        reduce[a] = true;
    }
    let out_shape: Vec<usize> = x
        .shape()
        .iter()
        .zip(&reduce)
        .filter(|(_, &r)| !r)
        .map(|(&d, _)| d)
        .collect();
    let out_shape = if out_shape.is_empty() { vec![1] } else { out_shape };
    let mut out = Tensor::zeros(&out_shape);

    let mut index = vec![0usize; nd];
    for flat in 0..x.len() {
        // decompose flat into the multi-index
        let mut rem = flat;
        for i in (0..nd).rev() {
            index[i] = rem % x.shape()[i];
            rem /= x.shape()[i];
        }
        let mut out_off = 0;
        for i in 0..nd {
            if !reduce[i] {
                out_off = out_off * x.shape()[i] + index[i];
            }
        }
        let v = x.data()[flat].abs();
        out.data_mut()[out_off] += if p == 1.0 { v } else { v.powf(p) };
    }
    if p != 1.0 {
        for v in out.data_mut() {
            *v = v.powf(1.0 / p);
        }
    }
    Ok(out)
}

/// 2-d factorized sin/cos positional encoding, `[h, w, c]` with `c % 4 == 0`.
///
/// The first `c/2` channels encode the column index, the second half the row
/// index; each half is a standard 1-d sinusoidal code.
pub fn sinusoidal_pe(h: usize, w: usize, c: usize) -> Result<Tensor> {
    if c % 4 != 0 {
        return Err(Error::config(format!(
            "positional encoding needs channels divisible by 4, got {c}"
        )));
    }
    let half = c / 2;
    let mut out = Tensor::zeros(&[h, w, c]);
    for r in 0..h {
        for col in 0..w {
            let row_slice = out.row_mut(r * w + col);
            encode_1d(col as Real, &mut row_slice[..half]);
            encode_1d(r as Real, &mut row_slice[half..]);
        }
    }
    Ok(out)
}

/// 1-d sinusoidal code of `pos` into an even-length slice.
pub fn encode_1d(pos: Real, out: &mut [Real]) {
    let d = out.len();
    debug_assert!(d % 2 == 0);
    for i in 0..d / 2 {
        let freq = (10000.0 as Real).powf(-(2.0 * i as Real) / d as Real);
        out[2 * i] = (pos * freq).sin();
        out[2 * i + 1] = (pos * freq).cos();
    }
}

/// Non-overlapping `stride x stride` patches of a `[b, h, w]` voxel, each
/// flattened in `(dy, dx, bin)` order and mapped through [`linear`].
/// Equivalent to a strided convolution with kernel size = stride.
pub fn patch_embed(voxel: &Tensor, stride: usize, w_e: &Tensor, b_e: &Tensor) -> Result<Tensor> {
    if voxel.shape().len() != 3 {
        return Err(Error::shape(format!(
            "patch_embed expects [bins, h, w], got {:?}",
            voxel.shape()
        )));
    }
    let (bins, h, w) = (voxel.shape()[0], voxel.shape()[1], voxel.shape()[2]);
    if h % stride != 0 || w % stride != 0 {
        return Err(Error::shape(format!(
            "stride {stride} does not divide voxel {h}x{w}"
        )));
    }
    let (ht, wt) = (h / stride, w / stride);
    let patch_len = stride * stride * bins;
    let mut patches = Tensor::zeros(&[ht, wt, patch_len]);
    for pr in 0..ht {
        for pc in 0..wt {
            let slice = patches.row_mut(pr * wt + pc);
            for dy in 0..stride {
                for dx in 0..stride {
                    for b in 0..bins {
                        slice[(dy * stride + dx) * bins + b] =
                            voxel.at(&[b, pr * stride + dy, pc * stride + dx]);
                    }
                }
            }
        }
    }
    linear(&patches, w_e, b_e)
}

/// 2x2 neighborhood concat (4C channels, `(dy, dx)` order) through [`linear`],
/// halving spatial resolution.
pub fn patch_merge(tokens: &Tensor, w_m: &Tensor, b_m: &Tensor) -> Result<Tensor> {
    if tokens.shape().len() != 3 {
        return Err(Error::shape(format!(
            "patch_merge expects [h, w, c], got {:?}",
            tokens.shape()
        )));
    }
    let (h, w, c) = (tokens.shape()[0], tokens.shape()[1], tokens.shape()[2]);
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!("patch_merge needs even dims, got {h}x{w}")));
    }
    let (ho, wo) = (h / 2, w / 2);
    let mut gathered = Tensor::zeros(&[ho, wo, 4 * c]);
    for r in 0..ho {
        for col in 0..wo {
            let slice = gathered.row_mut(r * wo + col);
            for dy in 0..2 {
                for dx in 0..2 {
                    let src = tokens.row((2 * r + dy) * w + (2 * col + dx));
                    slice[(dy * 2 + dx) * c..(dy * 2 + dx + 1) * c].copy_from_slice(src);
                }
            }
        }
    }
    linear(&gathered, w_m, b_m)
}

/// Per-token layer normalization over the last axis, eps `1e-5`.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<Tensor> {
    let c = x.last_dim();
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::shape(format!(
            "layer_norm params {:?}/{:?} vs channels {c}",
            gamma.shape(),
            beta.shape()
        )));
    }
    let eps: Real = 1e-5;
    let mut out = x.clone();
    for r in 0..out.n_rows() {
        let row = out.row_mut(r);
        let mean = row.iter().sum::<Real>() / c as Real;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<Real>() / c as Real;
        let inv = 1.0 / (var + eps).sqrt();
        for (i, v) in row.iter_mut().enumerate() {
            *v = (*v - mean) * inv * gamma.data()[i] + beta.data()[i];
        }
    }
    Ok(out)
}

/// Weights of a per-token LSTM cell, gate order `i, f, g, o`.
#[derive(Debug, Clone)]
pub struct LstmWeights {
    /// `[4 * hidden, input]`
    pub w_ih: Tensor,
    /// `[4 * hidden, hidden]`
    pub w_hh: Tensor,
    /// `[4 * hidden]`
    pub bias: Tensor,
}

impl LstmWeights {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        LstmWeights {
            w_ih: Tensor::zeros(&[4 * hidden, input]),
            w_hh: Tensor::zeros(&[4 * hidden, hidden]),
            bias: Tensor::zeros(&[4 * hidden]),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.shape()[1]
    }
}

/// One LSTM step applied independently at every spatial position of
/// `x: [h, w, c]`, weights shared across positions. Returns `(y, (h', c'))`
/// with `y = h'`.
pub fn lstm_step(
    x: &Tensor,
    state: (&Tensor, &Tensor),
    weights: &LstmWeights,
) -> Result<(Tensor, (Tensor, Tensor))> {
    let hidden = weights.hidden();
    let (h_prev, c_prev) = state;
    if h_prev.shape() != c_prev.shape() || h_prev.last_dim() != hidden {
        return Err(Error::shape("lstm state shape"));
    }
    if h_prev.n_rows() != x.n_rows() {
        return Err(Error::shape("lstm state spatial dims"));
    }
    let zero_bias = Tensor::zeros(&[4 * hidden]);
    let gates_x = linear(x, &weights.w_ih, &weights.bias)?;
    let gates_h = linear(h_prev, &weights.w_hh, &zero_bias)?;
    let mut h_new = h_prev.clone();
    let mut c_new = c_prev.clone();
    for r in 0..x.n_rows() {
        let gx = gates_x.row(r);
        let gh = gates_h.row(r);
        let hc = h_new.row_mut(r);
        let cc = c_new.row_mut(r);
        for u in 0..hidden {
            let i = sigmoid(gx[u] + gh[u]);
            let f = sigmoid(gx[hidden + u] + gh[hidden + u]);
            let g = (gx[2 * hidden + u] + gh[2 * hidden + u]).tanh();
            let o = sigmoid(gx[3 * hidden + u] + gh[3 * hidden + u]);
            let c_next = f * cc[u] + i * g;
            cc[u] = c_next;
            hc[u] = o * c_next.tanh();
        }
    }
    Ok((h_new.clone(), (h_new, c_new)))
}

pub fn sigmoid(x: Real) -> Real {
    1.0 / (1.0 + (-x).exp())
}

/// Exact GELU via the error function.
pub fn gelu(x: Real) -> Real {
    0.5 * x * (1.0 + erf(x / (2.0 as Real).sqrt()))
}

fn erf(x: Real) -> Real {
    #[cfg(not(feature = "f32"))]
    {
        libm::erf(x)
    }
    #[cfg(feature = "f32")]
    {
        libm::erff(x)
    }
}
