//! Rank-3 tensors and the numeric primitives the network is built from.
//!
//! Everything here is a pure function of its arguments. Convolutions are
//! valid (no padding), stride 1, and use the correlation convention:
//! `out[o][r][c] = b[o] + sum_{i,u,v} in[i][r+u][c+v] * w[o][i][u][v]`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `maps x rows x cols`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub maps: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Shape {
    pub const fn new(maps: usize, rows: usize, cols: usize) -> Self {
        Shape { maps, rows, cols }
    }

    pub const fn len(&self) -> usize {
        self.maps * self.rows * self.cols
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.maps, self.rows, self.cols)
    }
}

/// Dense rank-3 array stored map-major, then row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: Shape) -> Self {
        assert!(
            shape.maps >= 1 && shape.rows >= 1 && shape.cols >= 1,
            "tensor dimensions must be positive, got {shape}"
        );
        Tensor {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        let mut t = Tensor::zeros(shape);
        t.data.fill(value);
        t
    }

    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if shape.maps == 0 || shape.rows == 0 || shape.cols == 0 {
            return Err(Error::dimension(
                "Tensor::from_vec",
                "positive dimensions",
                shape,
            ));
        }
        if data.len() != shape.len() {
            return Err(Error::dimension(
                "Tensor::from_vec",
                format!("{} elements for {shape}", shape.len()),
                data.len(),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn maps(&self) -> usize {
        self.shape.maps
    }

    pub fn rows(&self) -> usize {
        self.shape.rows
    }

    pub fn cols(&self) -> usize {
        self.shape.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, map: usize, row: usize, col: usize) -> usize {
        (map * self.shape.rows + row) * self.shape.cols + col
    }

    #[inline]
    pub fn get(&self, map: usize, row: usize, col: usize) -> f64 {
        self.data[self.index(map, row, col)]
    }

    #[inline]
    pub fn set(&mut self, map: usize, row: usize, col: usize, value: f64) {
        let i = self.index(map, row, col);
        self.data[i] = value;
    }

    /// One `rows x cols` plane.
    pub fn map(&self, map: usize) -> &[f64] {
        let n = self.shape.rows * self.shape.cols;
        &self.data[map * n..(map + 1) * n]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Convolution weights for one layer plus one scalar bias per output map.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelBank {
    pub out_maps: usize,
    pub in_maps: usize,
    pub k_rows: usize,
    pub k_cols: usize,
    /// out-major, then in-map, then row-major taps
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl KernelBank {
    pub fn zeros(out_maps: usize, in_maps: usize, k_rows: usize, k_cols: usize) -> Self {
        KernelBank {
            out_maps,
            in_maps,
            k_rows,
            k_cols,
            weights: vec![0.0; out_maps * in_maps * k_rows * k_cols],
            biases: vec![0.0; out_maps],
        }
    }

    pub fn new(
        out_maps: usize,
        in_maps: usize,
        k_rows: usize,
        k_cols: usize,
        weights: Vec<f64>,
        biases: Vec<f64>,
    ) -> Result<Self> {
        let expected = out_maps * in_maps * k_rows * k_cols;
        if weights.len() != expected {
            return Err(Error::dimension("KernelBank::new", expected, weights.len()));
        }
        if biases.len() != out_maps {
            return Err(Error::dimension("KernelBank::new", out_maps, biases.len()));
        }
        Ok(KernelBank {
            out_maps,
            in_maps,
            k_rows,
            k_cols,
            weights,
            biases,
        })
    }

    /// Same dimensions, all zeros.
    pub fn zeros_like(&self) -> Self {
        KernelBank::zeros(self.out_maps, self.in_maps, self.k_rows, self.k_cols)
    }

    pub fn kernel_len(&self) -> usize {
        self.k_rows * self.k_cols
    }

    pub fn num_params(&self) -> usize {
        self.weights.len() + self.biases.len()
    }

    #[inline]
    pub fn weight_index(&self, out: usize, inp: usize, row: usize, col: usize) -> usize {
        ((out * self.in_maps + inp) * self.k_rows + row) * self.k_cols + col
    }

    pub fn describe(&self) -> String {
        format!(
            "{}x{}x{}x{}",
            self.out_maps, self.in_maps, self.k_rows, self.k_cols
        )
    }

    fn output_shape(&self, input: Shape) -> Option<Shape> {
        if input.maps != self.in_maps || self.k_rows > input.rows || self.k_cols > input.cols {
            return None;
        }
        Some(Shape::new(
            self.out_maps,
            input.rows - self.k_rows + 1,
            input.cols - self.k_cols + 1,
        ))
    }
}

/// Transfer functions used by the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ActivationKind {
    /// `2 / (1 + exp(-2x)) - 1`, i.e. `tanh`.
    Tansig,
    /// Identity.
    Purelin,
}

impl ActivationKind {
    /// Code used in the model file config block.
    pub fn code(self) -> u32 {
        match self {
            ActivationKind::Purelin => 0,
            ActivationKind::Tansig => 1,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(ActivationKind::Purelin),
            1 => Some(ActivationKind::Tansig),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::Purelin => "purelin",
            ActivationKind::Tansig => "tansig",
        }
    }
}

/// Largest f64 strictly below 1.
const TANSIG_LIMIT: f64 = 1.0 - f64::EPSILON / 2.0;

/// `tanh` clamped so the result stays strictly inside (-1, 1); plain `tanh`
/// rounds to exactly +-1 once |x| exceeds about 19. Uses the pure-Rust libm
/// port so results do not depend on the platform math library.
#[inline]
pub fn tansig(x: f64) -> f64 {
    libm::tanh(x).clamp(-TANSIG_LIMIT, TANSIG_LIMIT)
}

/// Winning input positions of a 2x2/stride-2 max-pool, one per output cell.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolCache {
    input_shape: Shape,
    /// `(row, col)` in input coordinates, in output-cell order.
    argmax: Vec<(usize, usize)>,
}

impl PoolCache {
    pub fn input_shape(&self) -> Shape {
        self.input_shape
    }

    pub fn output_shape(&self) -> Shape {
        Shape::new(
            self.input_shape.maps,
            self.input_shape.rows / 2,
            self.input_shape.cols / 2,
        )
    }

    pub fn argmax_indices(&self) -> &[(usize, usize)] {
        &self.argmax
    }
}

/// Input patches laid out as a `(in_maps * k_rows * k_cols) x (out_rows * out_cols)`
/// matrix whose row order matches the kernel weight order.
fn im2col(input: &Tensor, kernels: &KernelBank, out_rows: usize, out_cols: usize) -> Vec<f64> {
    let in_cols = input.cols();
    let npix = out_rows * out_cols;
    let mut cols = vec![0.0; kernels.in_maps * kernels.kernel_len() * npix];
    let mut rows = cols.chunks_exact_mut(npix);
    for i in 0..kernels.in_maps {
        let src = input.map(i);
        for u in 0..kernels.k_rows {
            for v in 0..kernels.k_cols {
                let dst = rows.next().expect("patch row per tap");
                for r in 0..out_rows {
                    dst[r * out_cols..][..out_cols]
                        .copy_from_slice(&src[(r + u) * in_cols + v..][..out_cols]);
                }
            }
        }
    }
    cols
}

/// Fixed-order dot product with four partial sums.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(dst: &mut [f64], alpha: f64, src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += alpha * s;
    }
}

/// Four consecutive [`axpy`] calls fused into one pass; the additions happen in
/// the same order, so the result is bit-identical.
#[inline]
fn axpy4(dst: &mut [f64], alpha: [f64; 4], src: [&[f64]; 4]) {
    let n = dst.len();
    let (s0, s1, s2, s3) = (&src[0][..n], &src[1][..n], &src[2][..n], &src[3][..n]);
    for j in 0..n {
        let mut d = dst[j];
        d += alpha[0] * s0[j];
        d += alpha[1] * s1[j];
        d += alpha[2] * s2[j];
        d += alpha[3] * s3[j];
        dst[j] = d;
    }
}

/// `dst += sum_k alpha(k) * src(k)` for k in order.
#[inline]
fn axpy_seq<'a>(
    dst: &mut [f64],
    n: usize,
    alpha: impl Fn(usize) -> f64,
    src: impl Fn(usize) -> &'a [f64],
) {
    let mut k = 0;
    while k + 4 <= n {
        axpy4(
            dst,
            [alpha(k), alpha(k + 1), alpha(k + 2), alpha(k + 3)],
            [src(k), src(k + 1), src(k + 2), src(k + 3)],
        );
        k += 4;
    }
    for k in k..n {
        axpy(dst, alpha(k), src(k));
    }
}

/// Valid, stride-1 correlation plus per-map bias. Returns pre-activation values.
pub fn conv2d_valid(input: &Tensor, kernels: &KernelBank) -> Result<Tensor> {
    let out_shape = kernels.output_shape(input.shape()).ok_or_else(|| {
        Error::dimension(
            "conv2d_valid",
            format!("input compatible with kernels {}", kernels.describe()),
            input.shape(),
        )
    })?;
    let npix = out_shape.rows * out_shape.cols;
    let fan_in = kernels.in_maps * kernels.kernel_len();
    let patches = im2col(input, kernels, out_shape.rows, out_shape.cols);
    let mut out = Tensor::zeros(out_shape);

    if npix == 1 {
        for (o, v) in out.data.iter_mut().enumerate() {
            *v = kernels.biases[o] + dot(&kernels.weights[o * fan_in..(o + 1) * fan_in], &patches);
        }
        return Ok(out);
    }
    for (o, plane) in out.data.chunks_exact_mut(npix).enumerate() {
        plane.fill(kernels.biases[o]);
    }
    // blocks of patch rows outermost so each row is read once; every output
    // still sums in q order
    const BLOCK: usize = 32;
    for q0 in (0..fan_in).step_by(BLOCK) {
        let len = BLOCK.min(fan_in - q0);
        for (o, plane) in out.data.chunks_exact_mut(npix).enumerate() {
            let w = &kernels.weights[o * fan_in + q0..];
            axpy_seq(
                plane,
                len,
                |k| w[k],
                |k| &patches[(q0 + k) * npix..][..npix],
            );
        }
    }
    Ok(out)
}

/// Gradients of a downstream scalar with respect to the input and the kernel bank
/// of a [`conv2d_valid`] call.
pub fn conv2d_backward(
    input: &Tensor,
    kernels: &KernelBank,
    grad_out: &Tensor,
) -> Result<(Tensor, KernelBank)> {
    let grad_kernels = conv2d_param_grads(input, kernels, grad_out)?;
    let grad_input = conv2d_input_grad(input.shape(), kernels, grad_out)?;
    Ok((grad_input, grad_kernels))
}

fn check_conv_grad_shape(
    op: &'static str,
    input: Shape,
    kernels: &KernelBank,
    grad_out: &Tensor,
) -> Result<()> {
    match kernels.output_shape(input) {
        Some(s) if s == grad_out.shape() => Ok(()),
        Some(s) => Err(Error::dimension(op, s, grad_out.shape())),
        None => Err(Error::dimension(
            op,
            format!("input compatible with kernels {}", kernels.describe()),
            input,
        )),
    }
}

/// Weight and bias gradients only; the first layer has no use for an input gradient.
pub(crate) fn conv2d_param_grads(
    input: &Tensor,
    kernels: &KernelBank,
    grad_out: &Tensor,
) -> Result<KernelBank> {
    check_conv_grad_shape("conv2d_backward", input.shape(), kernels, grad_out)?;
    let npix = grad_out.rows() * grad_out.cols();
    let fan_in = kernels.in_maps * kernels.kernel_len();
    let patches = im2col(input, kernels, grad_out.rows(), grad_out.cols());
    let mut grads = kernels.zeros_like();

    for o in 0..kernels.out_maps {
        grads.biases[o] = grad_out.map(o).iter().sum();
    }
    for (q, row) in patches.chunks_exact(npix).enumerate() {
        for o in 0..kernels.out_maps {
            grads.weights[o * fan_in + q] = dot(grad_out.map(o), row);
        }
    }
    Ok(grads)
}

pub(crate) fn conv2d_input_grad(
    input_shape: Shape,
    kernels: &KernelBank,
    grad_out: &Tensor,
) -> Result<Tensor> {
    check_conv_grad_shape("conv2d_backward", input_shape, kernels, grad_out)?;
    let in_cols = input_shape.cols;
    let (out_rows, out_cols) = (grad_out.rows(), grad_out.cols());
    let npix = out_rows * out_cols;
    let fan_in = kernels.in_maps * kernels.kernel_len();

    // patch-space gradient, then scatter back onto the input grid
    let mut dpatch = vec![0.0; fan_in * npix];
    for (q, row) in dpatch.chunks_exact_mut(npix).enumerate() {
        axpy_seq(
            row,
            kernels.out_maps,
            |o| kernels.weights[o * fan_in + q],
            |o| grad_out.map(o),
        );
    }
    let mut grad_in = Tensor::zeros(input_shape);
    let in_plane = input_shape.rows * input_shape.cols;
    let mut rows = dpatch.chunks_exact(npix);
    for i in 0..kernels.in_maps {
        let dst = &mut grad_in.data[i * in_plane..(i + 1) * in_plane];
        for u in 0..kernels.k_rows {
            for v in 0..kernels.k_cols {
                let src = rows.next().expect("patch row per tap");
                for r in 0..out_rows {
                    let d = &mut dst[(r + u) * in_cols + v..][..out_cols];
                    for (a, b) in d.iter_mut().zip(&src[r * out_cols..][..out_cols]) {
                        *a += b;
                    }
                }
            }
        }
    }
    Ok(grad_in)
}

/// Disjoint 2x2 max-pool. Ties go to the first cell of the window in row-major order.
pub fn maxpool2x2(input: &Tensor) -> Result<(Tensor, PoolCache)> {
    let s = input.shape();
    if !s.rows.is_multiple_of(2) || !s.cols.is_multiple_of(2) {
        return Err(Error::dimension("maxpool2x2", "even rows and cols", s));
    }
    let out_shape = Shape::new(s.maps, s.rows / 2, s.cols / 2);
    let mut out = Tensor::zeros(out_shape);
    let mut argmax = Vec::with_capacity(out_shape.len());

    for m in 0..s.maps {
        for r in 0..out_shape.rows {
            for c in 0..out_shape.cols {
                let (mut best, mut at) = (f64::NEG_INFINITY, (2 * r, 2 * c));
                let mut first = true;
                for (dr, dc) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let (ir, ic) = (2 * r + dr, 2 * c + dc);
                    let v = input.get(m, ir, ic);
                    if first || v > best {
                        best = v;
                        at = (ir, ic);
                        first = false;
                    }
                }
                out.set(m, r, c, best);
                argmax.push(at);
            }
        }
    }
    Ok((
        out,
        PoolCache {
            input_shape: s,
            argmax,
        },
    ))
}

/// Routes each upstream gradient value to the input cell that won its window.
pub fn maxpool2x2_backward(
    cache: &PoolCache,
    grad_out: &Tensor,
    input_shape: Shape,
) -> Result<Tensor> {
    if cache.input_shape != input_shape {
        return Err(Error::dimension(
            "maxpool2x2_backward",
            cache.input_shape,
            input_shape,
        ));
    }
    if grad_out.shape() != cache.output_shape() {
        return Err(Error::dimension(
            "maxpool2x2_backward",
            cache.output_shape(),
            grad_out.shape(),
        ));
    }
    let out_plane = grad_out.rows() * grad_out.cols();
    let mut grad_in = Tensor::zeros(input_shape);
    for (k, (&g, &(r, c))) in grad_out.data.iter().zip(&cache.argmax).enumerate() {
        let m = k / out_plane;
        let i = grad_in.index(m, r, c);
        grad_in.data[i] += g;
    }
    Ok(grad_in)
}

pub fn activate(input: &Tensor, kind: ActivationKind) -> Tensor {
    match kind {
        ActivationKind::Purelin => input.clone(),
        ActivationKind::Tansig => Tensor {
            shape: input.shape,
            data: input.data.iter().map(|&x| tansig(x)).collect(),
        },
    }
}

/// Backward pass of [`activate`], expressed in terms of the activated output `y`.
pub fn activate_backward(
    output: &Tensor,
    grad_out: &Tensor,
    kind: ActivationKind,
) -> Result<Tensor> {
    if output.shape() != grad_out.shape() {
        return Err(Error::dimension(
            "activate_backward",
            output.shape(),
            grad_out.shape(),
        ));
    }
    Ok(match kind {
        ActivationKind::Purelin => grad_out.clone(),
        ActivationKind::Tansig => Tensor {
            shape: output.shape,
            data: output
                .data
                .iter()
                .zip(&grad_out.data)
                .map(|(&y, &g)| g * (1.0 - y * y))
                .collect(),
        },
    })
}
