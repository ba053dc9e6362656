//! Forward and backward kernels for the U-Net building blocks.
//!
//! Convolutions are stride 1 with zero "same" padding and use the
//! cross-correlation convention (no kernel flip). They lower to GEMMs over
//! im2col buffers built a few images at a time.

use super::tensor::{feature_dims, shape_like, Scalar, Tensor};
use crate::error::{Error, Result};

fn check_conv<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<((usize, usize, usize, usize), usize, usize)> {
    let (c_in, n, h, w) = feature_dims(input.shape(), "conv2d input")?;
    let [c_out, kc, kh, kw] = *kernel.shape() else {
        return Err(Error::arg(format!("conv2d kernel must be [C_out,C_in,k,k], got {:?}", kernel.shape())));
    };
    if kh != kw || kh % 2 == 0 {
        return Err(Error::arg(format!("conv2d kernel must be square with odd size, got {kh}x{kw}")));
    }
    if kc != c_in {
        return Err(Error::arg(format!("conv2d kernel expects {kc} input channels, input has {c_in}")));
    }
    if let Some(b) = bias {
        if b.shape() != [c_out] {
            return Err(Error::arg(format!("conv2d bias must be [{c_out}], got {:?}", b.shape())));
        }
    }
    Ok(((c_in, n, h, w), c_out, kh))
}

/// Patch-matrix entries per batch chunk; keeps the im2col buffer cache-sized.
const CHUNK_ELEMS: usize = 1 << 17;

/// Images per chunk for a `ckk`-row patch matrix over `hw` pixels each.
fn chunk_images(ckk: usize, hw: usize) -> usize {
    (CHUNK_ELEMS / (ckk * hw).max(1)).max(1)
}

/// Unfolds images `b0..b0+nb` of `[C, N, H, W]` into a `[C·k·k, nb·H·W]`
/// patch matrix.
fn im2col<T: Scalar>(x: &[T], (c, n, h, w): (usize, usize, usize, usize), k: usize, b0: usize, nb: usize, out: &mut Vec<T>) {
    let p = (k / 2) as isize;
    let cols = nb * h * w;
    out.clear();
    out.resize(c * k * k * cols, T::zero());
    for ci in 0..c {
        for i in 0..k {
            for j in 0..k {
                let row = &mut out[((ci * k + i) * k + j) * cols..][..cols];
                let (di, dj) = (i as isize - p, j as isize - p);
                for b in 0..nb {
                    let plane = &x[(ci * n + b0 + b) * h * w..][..h * w];
                    for y in 0..h {
                        let sy = y as isize + di;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let src = &plane[sy as usize * w..][..w];
                        let dst = &mut row[(b * h + y) * w..][..w];
                        let x0 = (-dj).max(0) as usize;
                        let x1 = (w as isize - dj).min(w as isize).max(0) as usize;
                        if x0 < x1 {
                            let s0 = (x0 as isize + dj) as usize;
                            dst[x0..x1].copy_from_slice(&src[s0..s0 + (x1 - x0)]);
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch-matrix gradients for images
/// `b0..b0+nb` back onto the full `[C, N, H, W]` buffer.
fn col2im<T: Scalar>(cols_buf: &[T], (c, n, h, w): (usize, usize, usize, usize), k: usize, b0: usize, nb: usize, out: &mut [T]) {
    let p = (k / 2) as isize;
    let cols = nb * h * w;
    for ci in 0..c {
        for i in 0..k {
            for j in 0..k {
                let row = &cols_buf[((ci * k + i) * k + j) * cols..][..cols];
                let (di, dj) = (i as isize - p, j as isize - p);
                for b in 0..nb {
                    let plane = &mut out[(ci * n + b0 + b) * h * w..][..h * w];
                    for y in 0..h {
                        let sy = y as isize + di;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let src = &row[(b * h + y) * w..][..w];
                        let dst = &mut plane[sy as usize * w..][..w];
                        let x0 = (-dj).max(0) as usize;
                        let x1 = (w as isize - dj).min(w as isize).max(0) as usize;
                        if x0 < x1 {
                            let s0 = (x0 as isize + dj) as usize;
                            for (d, &v) in dst[s0..s0 + (x1 - x0)].iter_mut().zip(&src[x0..x1]) {
                                *d = *d + v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `out[o,y,x] = bias[o] + Σ input[c, y+i−p, x+j−p] · kernel[o,c,i,j]`.
pub fn conv2d_forward<T: Scalar>(input: &Tensor<T>, kernel: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (dims, c_out, k) = check_conv(input, kernel, Some(bias))?;
    let (c_in, n, h, w) = dims;
    let (hw, cols, ckk) = (h * w, n * h * w, c_in * k * k);
    let mut out = Vec::with_capacity(c_out * cols);
    for &b in bias.data() {
        out.extend(std::iter::repeat(b).take(cols));
    }
    if k == 1 {
        T::gemm(c_out, ckk, cols, T::one(), kernel.data(), (ckk as isize, 1), input.data(), (cols as isize, 1), T::one(), &mut out, cols as isize);
    } else {
        let step = chunk_images(ckk, hw);
        let mut patches = Vec::new();
        for b0 in (0..n).step_by(step) {
            let nb = step.min(n - b0);
            im2col(input.data(), dims, k, b0, nb, &mut patches);
            let cc = nb * hw;
            T::gemm(c_out, ckk, cc, T::one(), kernel.data(), (ckk as isize, 1), &patches, (cc as isize, 1), T::one(), &mut out[b0 * hw..], cols as isize);
        }
    }
    Tensor::from_vec(&shape_like(input.shape(), c_out, n, h, w), out)
}

pub struct ConvGrads<T: Scalar> {
    /// `None` when the caller did not ask for it.
    pub input: Option<Tensor<T>>,
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Gradients of [`conv2d_forward`] with respect to input, kernel and bias.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let g = conv2d_backward_opt(input, kernel, grad_out, true)?;
    Ok((g.input.expect("requested"), g.kernel, g.bias))
}

pub(crate) fn conv2d_backward_opt<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
    want_input: bool,
) -> Result<ConvGrads<T>> {
    let (dims, c_out, k) = check_conv(input, kernel, None)?;
    let (c_in, n, h, w) = dims;
    if grad_out.shape() != shape_like(input.shape(), c_out, n, h, w).as_slice() {
        return Err(Error::arg(format!(
            "conv2d grad_out shape {:?} does not match the forward output",
            grad_out.shape()
        )));
    }
    let (hw, cols, ckk) = (h * w, n * h * w, c_in * k * k);
    let go = grad_out.data();

    let bias: Vec<T> = go.chunks_exact(cols).map(|row| row.iter().copied().sum()).collect();

    let mut gk = vec![T::zero(); c_out * ckk];
    let mut gi = if want_input { vec![T::zero(); c_in * cols] } else { Vec::new() };
    let step = if k == 1 { n } else { chunk_images(ckk, hw) };
    let (mut patches, mut gp) = (Vec::new(), Vec::new());
    for b0 in (0..n).step_by(step) {
        let nb = step.min(n - b0);
        let cc = nb * hw;
        let go_chunk = &go[b0 * hw..];
        let b_mat: &[T] = if k == 1 {
            input.data()
        } else {
            im2col(input.data(), dims, k, b0, nb, &mut patches);
            &patches
        };
        let b_stride = if k == 1 { cols } else { cc } as isize;
        // grad_kernel[o, r] += Σ_col grad_out[o, col] · patches[r, col]
        T::gemm(c_out, cc, ckk, T::one(), go_chunk, (cols as isize, 1), b_mat, (1, b_stride), T::one(), &mut gk, ckk as isize);
        if want_input {
            // grad_patches = kernelᵀ · grad_out
            if k == 1 {
                T::gemm(ckk, c_out, cols, T::one(), kernel.data(), (1, ckk as isize), go, (cols as isize, 1), T::zero(), &mut gi, cols as isize);
            } else {
                gp.clear();
                gp.resize(ckk * cc, T::zero());
                T::gemm(ckk, c_out, cc, T::one(), kernel.data(), (1, ckk as isize), go_chunk, (cols as isize, 1), T::zero(), &mut gp, cc as isize);
                col2im(&gp, dims, k, b0, nb, &mut gi);
            }
        }
    }
    Ok(ConvGrads {
        input: if want_input { Some(Tensor::from_vec(input.shape(), gi)?) } else { None },
        kernel: Tensor::from_vec(kernel.shape(), gk)?,
        bias: Tensor::from_vec(&[c_out], bias)?,
    })
}

/// Winning flat input index for every pooled output, plus the shapes needed
/// to validate the backward call.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolIndices {
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    argmax: Vec<u32>,
}

impl PoolIndices {
    pub fn argmax(&self) -> &[u32] {
        &self.argmax
    }
}

/// 2×2 max pooling, stride 2. Ties go to the first element in row-major
/// order within the block.
pub fn maxpool2_forward<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, PoolIndices)> {
    let (c, n, h, w) = feature_dims(input.shape(), "maxpool input")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::arg(format!("maxpool needs even spatial dims, got {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(c * n * oh * ow);
    let mut argmax = Vec::with_capacity(c * n * oh * ow);
    for plane in 0..c * n {
        let base = plane * h * w;
        for y in 0..oh {
            for xo in 0..ow {
                let mut best = base + 2 * y * w + 2 * xo;
                for idx in [best + 1, best + w, best + w + 1] {
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                argmax.push(best as u32);
            }
        }
    }
    let output_shape = shape_like(input.shape(), c, n, oh, ow);
    let indices = PoolIndices { input_shape: input.shape().to_vec(), output_shape: output_shape.clone(), argmax };
    Ok((Tensor::from_vec(&output_shape, out)?, indices))
}

pub fn maxpool2_backward<T: Scalar>(indices: &PoolIndices, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if grad_out.shape() != indices.output_shape.as_slice() {
        return Err(Error::arg(format!(
            "maxpool grad_out shape {:?} does not match argmax shape {:?}",
            grad_out.shape(),
            indices.output_shape
        )));
    }
    let mut gi = Tensor::zeros(&indices.input_shape);
    let d = gi.data_mut();
    for (&idx, &g) in indices.argmax.iter().zip(grad_out.data()) {
        d[idx as usize] = d[idx as usize] + g;
    }
    Ok(gi)
}

/// Nearest-neighbour 2× upsampling.
pub fn upsample2_forward<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, n, h, w) = feature_dims(input.shape(), "upsample input")?;
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); c * n * oh * ow];
    for (plane, src) in input.data().chunks_exact(h * w).enumerate() {
        let dst = &mut out[plane * oh * ow..][..oh * ow];
        for y in 0..oh {
            let row = &src[(y / 2) * w..][..w];
            for (x, v) in dst[y * ow..][..ow].iter_mut().enumerate() {
                *v = row[x / 2];
            }
        }
    }
    Tensor::from_vec(&shape_like(input.shape(), c, n, oh, ow), out)
}

/// Sums each 2×2 block of the gradient.
pub fn upsample2_backward<T: Scalar>(grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, n, oh, ow) = feature_dims(grad_out.shape(), "upsample grad")?;
    if oh % 2 != 0 || ow % 2 != 0 {
        return Err(Error::arg("upsample grad must have even spatial dims"));
    }
    let (h, w) = (oh / 2, ow / 2);
    let mut out = vec![T::zero(); c * n * h * w];
    for (plane, src) in grad_out.data().chunks_exact(oh * ow).enumerate() {
        let dst = &mut out[plane * h * w..][..h * w];
        for y in 0..oh {
            for x in 0..ow {
                let d = &mut dst[(y / 2) * w + x / 2];
                *d = *d + src[y * ow + x];
            }
        }
    }
    Tensor::from_vec(&shape_like(grad_out.shape(), c, n, h, w), out)
}

/// Channels of `a` followed by channels of `b`.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (ca, na, ha, wa) = feature_dims(a.shape(), "concat lhs")?;
    let (cb, nb, hb, wb) = feature_dims(b.shape(), "concat rhs")?;
    if (na, ha, wa) != (nb, hb, wb) || a.shape().len() != b.shape().len() {
        return Err(Error::arg(format!("concat of {:?} and {:?}", a.shape(), b.shape())));
    }
    let mut data = Vec::with_capacity(a.len() + b.len());
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Tensor::from_vec(&shape_like(a.shape(), ca + cb, na, ha, wa), data)
}

/// Backward of [`concat_channels`]: the first `channels_a` channels and the rest.
pub fn split_channels<T: Scalar>(grad: &Tensor<T>, channels_a: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let (c, n, h, w) = feature_dims(grad.shape(), "split input")?;
    if channels_a > c {
        return Err(Error::arg(format!("cannot split {channels_a} channels from {c}")));
    }
    let at = channels_a * n * h * w;
    let (da, db) = grad.data().split_at(at);
    Ok((
        Tensor::from_vec(&shape_like(grad.shape(), channels_a, n, h, w), da.to_vec())?,
        Tensor::from_vec(&shape_like(grad.shape(), c - channels_a, n, h, w), db.to_vec())?,
    ))
}

pub fn relu_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient 1 where the forward input (equivalently output) was positive.
pub fn relu_backward<T: Scalar>(forward: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if forward.shape() != grad_out.shape() {
        return Err(Error::arg("relu grad shape mismatch"));
    }
    let data = forward
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&f, &g)| if f > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(forward.shape(), data)
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid)
}

/// Gradient from the forward *output* σ: `g · σ(1 − σ)`.
pub fn sigmoid_backward<T: Scalar>(output: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if output.shape() != grad_out.shape() {
        return Err(Error::arg("sigmoid grad shape mismatch"));
    }
    let data = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&s, &g)| g * s * (T::one() - s))
        .collect();
    Tensor::from_vec(output.shape(), data)
}
