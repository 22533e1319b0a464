//! 3×3 convolution and transposed convolution, stride 1, zero padding 1.
//!
//! Feature maps are `C×H×W`; convolution weights are `C_out×C_in×3×3`,
//! transposed-convolution weights `C_in×C_out×3×3` (so a transposed
//! convolution is the adjoint of a convolution sharing the same buffer).

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

const K: usize = 3;
const TAPS: usize = K * K;

#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

fn dims(input: &Tensor<impl Scalar>) -> Result<(usize, usize, usize)> {
    input.expect_rank(3, "feature map")?;
    let s = input.shape();
    Ok((s[0], s[1], s[2]))
}

fn check_weight<T: Scalar>(weight: &Tensor<T>, bias: Option<&Tensor<T>>, c_in: usize) -> Result<()> {
    weight.expect_rank(4, "kernel")?;
    let ws = weight.shape();
    if ws[1] != c_in || ws[2] != K || ws[3] != K {
        return Err(Error::ShapeMismatch(format!(
            "kernel {:?} does not fit {c_in} input channels with 3x3 taps",
            ws
        )));
    }
    if let Some(b) = bias {
        b.expect_shape(&[ws[0]], "bias")?;
    }
    Ok(())
}

/// Unfold `C×H×W` into a `(C·9)×(H·W)` patch matrix.
fn im2col<T: Scalar>(x: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let hw = h * w;
    let mut cols = vec![T::zero(); c * TAPS * hw];
    for ch in 0..c {
        let plane = &x[ch * hw..(ch + 1) * hw];
        for ky in 0..K {
            for kx in 0..K {
                let row = &mut cols[((ch * TAPS) + ky * K + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &plane[sy as usize * w..][..w];
                    let dst = &mut row[y * w..][..w];
                    // dst[x] = src[x + kx - 1]
                    match kx {
                        0 => dst[1..].copy_from_slice(&src[..w - 1]),
                        1 => dst.copy_from_slice(src),
                        _ => dst[..w - 1].copy_from_slice(&src[1..]),
                    }
                }
            }
        }
    }
    cols
}

/// Accumulate a patch matrix back onto a `C×H×W` map (adjoint of `im2col`).
fn col2im<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let hw = h * w;
    let mut x = vec![T::zero(); c * hw];
    for ch in 0..c {
        let plane = &mut x[ch * hw..(ch + 1) * hw];
        for ky in 0..K {
            for kx in 0..K {
                let row = &cols[((ch * TAPS) + ky * K + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * w..][..w];
                    let src = &row[y * w..][..w];
                    match kx {
                        0 => dst[..w - 1].iter_mut().zip(&src[1..]).for_each(|(d, &s)| *d += s),
                        1 => dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s),
                        _ => dst[1..].iter_mut().zip(&src[..w - 1]).for_each(|(d, &s)| *d += s),
                    }
                }
            }
        }
    }
    x
}

/// `out = W · cols (+ bias)` for a `C_out×(C_in·9)` weight matrix.
fn correlate<T: Scalar>(cols: &[T], weight: &[T], bias: Option<&[T]>, c_out: usize, c_in: usize, hw: usize) -> Vec<T> {
    let kk = c_in * TAPS;
    let mut out = vec![T::zero(); c_out * hw];
    if let Some(b) = bias {
        for (o, &bv) in b.iter().enumerate() {
            out[o * hw..(o + 1) * hw].iter_mut().for_each(|v| *v = bv);
        }
    }
    T::gemm(
        c_out,
        kk,
        hw,
        T::one(),
        (weight, kk, 1),
        (cols, hw, 1),
        T::one(),
        (&mut out, hw, 1),
    );
    out
}

fn row_sums<T: Scalar>(m: &[T], rows: usize, cols: usize) -> Vec<T> {
    (0..rows)
        .map(|r| m[r * cols..(r + 1) * cols].iter().copied().sum())
        .collect()
}

/// Cross-correlation with a 3×3 kernel. `input` is `C_in×H×W`, `weight`
/// `C_out×C_in×3×3`, `bias` `C_out`.
pub fn conv2d<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (c_in, h, w) = dims(input)?;
    check_weight(weight, Some(bias), c_in)?;
    let c_out = weight.shape()[0];
    let cols = im2col(input.data(), c_in, h, w);
    let out = correlate(&cols, weight.data(), Some(bias.data()), c_out, c_in, h * w);
    Tensor::from_vec(&[c_out, h, w], out)
}

/// Gradients of [`conv2d`] with respect to input, weight and bias.
pub fn conv2d_backward<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, grad_out: &Tensor<T>) -> Result<ConvGrads<T>> {
    let (c_in, h, w) = dims(input)?;
    check_weight(weight, None, c_in)?;
    let c_out = weight.shape()[0];
    grad_out.expect_shape(&[c_out, h, w], "conv2d grad_out")?;
    let hw = h * w;
    let kk = c_in * TAPS;
    let cols = im2col(input.data(), c_in, h, w);

    // dW = dY · colsᵀ
    let mut gw = vec![T::zero(); c_out * kk];
    T::gemm(
        c_out,
        hw,
        kk,
        T::one(),
        (grad_out.data(), hw, 1),
        (&cols, 1, hw),
        T::zero(),
        (&mut gw, kk, 1),
    );
    // dCols = Wᵀ · dY
    let mut gcols = vec![T::zero(); kk * hw];
    T::gemm(
        kk,
        c_out,
        hw,
        T::one(),
        (weight.data(), 1, kk),
        (grad_out.data(), hw, 1),
        T::zero(),
        (&mut gcols, hw, 1),
    );
    let gx = col2im(&gcols, c_in, h, w);
    Ok(ConvGrads {
        input: Tensor::from_vec(&[c_in, h, w], gx)?,
        weight: Tensor::from_vec(weight.shape(), gw)?,
        bias: Tensor::from_vec(&[c_out], row_sums(grad_out.data(), c_out, hw))?,
    })
}

/// Transposed convolution: correlation of the input with spatially flipped,
/// channel-transposed kernels. `weight` is `C_in×C_out×3×3`.
pub fn transposed_conv2d<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (c_in, h, w) = dims(input)?;
    weight.expect_rank(4, "kernel")?;
    let ws = weight.shape();
    if ws[0] != c_in || ws[2] != K || ws[3] != K {
        return Err(Error::ShapeMismatch(format!(
            "transposed kernel {:?} does not fit {c_in} input channels",
            ws
        )));
    }
    let c_out = ws[1];
    bias.expect_shape(&[c_out], "bias")?;
    let wd = weight.data();
    let mut flipped = vec![T::zero(); c_out * c_in * TAPS];
    for i in 0..c_in {
        for o in 0..c_out {
            for t in 0..TAPS {
                flipped[(o * c_in + i) * TAPS + t] = wd[(i * c_out + o) * TAPS + (TAPS - 1 - t)];
            }
        }
    }
    let cols = im2col(input.data(), c_in, h, w);
    let out = correlate(&cols, &flipped, Some(bias.data()), c_out, c_in, h * w);
    Tensor::from_vec(&[c_out, h, w], out)
}

/// Gradients of [`transposed_conv2d`].
pub fn transposed_conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let (c_in, h, w) = dims(input)?;
    weight.expect_rank(4, "kernel")?;
    let c_out = weight.shape()[1];
    if weight.shape()[0] != c_in {
        return Err(Error::ShapeMismatch("transposed kernel input channels".into()));
    }
    grad_out.expect_shape(&[c_out, h, w], "transposed grad_out")?;
    let hw = h * w;
    let kk = c_out * TAPS;

    // The adjoint of a transposed convolution is the plain convolution
    // sharing its weight buffer.
    let gcols = im2col(grad_out.data(), c_out, h, w);
    let gx = correlate(&gcols, weight.data(), None, c_in, c_out, hw);

    // dW[i, o, t] = Σ_p x[i, p] · unfold(dY)[o·9 + t, p]
    let mut gw = vec![T::zero(); c_in * kk];
    T::gemm(
        c_in,
        hw,
        kk,
        T::one(),
        (input.data(), hw, 1),
        (&gcols, 1, hw),
        T::zero(),
        (&mut gw, kk, 1),
    );
    Ok(ConvGrads {
        input: Tensor::from_vec(&[c_in, h, w], gx)?,
        weight: Tensor::from_vec(weight.shape(), gw)?,
        bias: Tensor::from_vec(&[c_out], row_sums(grad_out.data(), c_out, hw))?,
    })
}
