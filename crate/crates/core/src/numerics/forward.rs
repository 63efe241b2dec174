use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

use super::mac;
use super::{ConvParams, LinearParams};

/// `a (m x k) * b (k x n)`.
///
/// Each output element accumulates its `k` products in ascending `l` order
/// starting from zero, so results are bitwise identical to the textbook
/// triple loop.
pub fn matmul<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let [m, k] = a.dims2("matmul")?;
    let [k2, n] = b.dims2("matmul")?;
    if k != k2 {
        return Err(Error::mismatch("matmul", a.shape(), b.shape()));
    }
    let mut out = vec![T::zero(); m * n];
    matmul_into(a.data(), b.data(), &mut out, m, k, n);
    Ok(Tensor::from_parts(vec![m, n], out))
}

pub(crate) fn matmul_into<T: Element>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    let mut muls = 0u64;
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (l, &av) in a_row.iter().enumerate() {
            let b_row = &b[l * n..(l + 1) * n];
            for (o, &bv) in row.iter_mut().zip(b_row) {
                *o = *o + av * bv;
            }
            muls += n as u64;
        }
    }
    mac::record(muls);
}

/// In-place numerically stable softmax of one row.
pub(crate) fn softmax_in_place<T: Element>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

/// Row-wise softmax of a rank-2 tensor, with the row maximum subtracted
/// before exponentiation.
pub fn softmax_rows<T: Element>(m: &Tensor<T>) -> Result<Tensor<T>> {
    let [_, cols] = m.dims2("softmax_rows")?;
    let mut out = m.clone();
    for row in out.data_mut().chunks_mut(cols) {
        softmax_in_place(row);
    }
    Ok(out)
}

const GELU_COEF: f64 = 0.044_715;
// sqrt(2 / pi)
const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

/// GELU, tanh approximation:
/// `0.5 * x * (1 + tanh(sqrt(2/pi) * (x + 0.044715 * x^3)))`.
pub fn gelu<T: Element>(x: T) -> T {
    let half = T::from_f64(0.5);
    let inner = T::from_f64(SQRT_2_OVER_PI) * (x + T::from_f64(GELU_COEF) * x * x * x);
    half * x * (T::one() + inner.tanh())
}

/// Derivative of [`gelu`].
pub fn gelu_derivative<T: Element>(x: T) -> T {
    let half = T::from_f64(0.5);
    let c = T::from_f64(SQRT_2_OVER_PI);
    let a = T::from_f64(GELU_COEF);
    let t = (c * (x + a * x * x * x)).tanh();
    let dinner = c * (T::one() + T::from_f64(3.0) * a * x * x);
    half * (T::one() + t) + half * x * (T::one() - t * t) * dinner
}

/// Splits a tensor whose last dimension is the channel axis into
/// `(rows, channels)`.
pub(crate) fn rows_and_channels<T: Element>(x: &Tensor<T>) -> (usize, usize) {
    let c = *x.shape().last().expect("rank >= 1");
    (x.numel() / c, c)
}

/// `x W + b` applied over the last axis of `x`; leading axes are kept.
pub fn linear<T: Element>(x: &Tensor<T>, p: &LinearParams<T>) -> Result<Tensor<T>> {
    let (rows, c_in) = rows_and_channels(x);
    if c_in != p.c_in() {
        return Err(Error::mismatch("linear", x.shape(), p.weight.shape()));
    }
    let c_out = p.c_out();
    let mut out = vec![T::zero(); rows * c_out];
    matmul_into(x.data(), p.weight.data(), &mut out, rows, c_in, c_out);
    for row in out.chunks_mut(c_out) {
        for (o, &b) in row.iter_mut().zip(p.bias.data()) {
            *o = *o + b;
        }
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = c_out;
    Ok(Tensor::from_parts(shape, out))
}

/// Two-layer feed-forward block `linear -> GELU -> linear`, applied to
/// every token independently.
pub fn ffn_forward<T: Element>(x: &Tensor<T>, p1: &LinearParams<T>, p2: &LinearParams<T>) -> Result<Tensor<T>> {
    if p1.c_out() != p2.c_in() {
        return Err(Error::mismatch("ffn", p1.weight.shape(), p2.weight.shape()));
    }
    let hidden = linear(x, p1)?.map(gelu);
    linear(&hidden, p2)
}

/// Half-open source range `[floor(i*n/r), ceil((i+1)*n/r))` of output cell `i`.
pub(crate) fn pool_range(i: usize, n: usize, r: usize) -> (usize, usize) {
    let start = i * n / r;
    let end = ((i + 1) * n).div_ceil(r);
    (start, end)
}

/// Adaptive average pooling of a `C x H x W` tensor to `C x out_h x out_w`.
/// Output cell `(i, j)` averages rows `[floor(i*H/out_h), ceil((i+1)*H/out_h))`
/// and columns `[floor(j*W/out_w), ceil((j+1)*W/out_w))`.
pub fn adaptive_avg_pool2d<T: Element>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let [c, h, w] = x.dims3("adaptive_avg_pool2d")?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::argument("pooled grid must be at least 1x1"));
    }
    if out_h > h || out_w > w {
        return Err(Error::UnsupportedUpsample {
            from: (h, w),
            to: (out_h, out_w),
        });
    }
    let src = x.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for i in 0..out_h {
            let (r0, r1) = pool_range(i, h, out_h);
            for j in 0..out_w {
                let (c0, c1) = pool_range(j, w, out_w);
                let mut sum = T::zero();
                for r in r0..r1 {
                    for v in &plane[r * w + c0..r * w + c1] {
                        sum = sum + *v;
                    }
                }
                let count = ((r1 - r0) * (c1 - c0)) as f64;
                out.push(sum * T::from_f64(1.0 / count));
            }
        }
    }
    mac::record((c * out_h * out_w) as u64);
    Ok(Tensor::from_parts(vec![c, out_h, out_w], out))
}

/// Depthwise 3x3 cross-correlation, stride 1, zero padding 1, plus bias.
/// Taps are summed in row-major kernel order before the bias is added.
pub fn depthwise_conv3x3<T: Element>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>> {
    let [c, h, w] = x.dims3("depthwise_conv3x3")?;
    if c != p.channels() {
        return Err(Error::mismatch("depthwise_conv3x3", x.shape(), p.kernel.shape()));
    }
    let src = x.data();
    let kernel = p.kernel.data();
    let mut out = Vec::with_capacity(c * h * w);
    let mut muls = 0u64;
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        let k = &kernel[ch * 9..ch * 9 + 9];
        let bias = p.bias.data()[ch];
        for r in 0..h {
            for col in 0..w {
                let mut acc = T::zero();
                for (dy, kr) in k.chunks(3).enumerate() {
                    let Some(sr) = (r + dy).checked_sub(1).filter(|&sr| sr < h) else {
                        continue;
                    };
                    for (dx, &kv) in kr.iter().enumerate() {
                        let Some(sc) = (col + dx).checked_sub(1).filter(|&sc| sc < w) else {
                            continue;
                        };
                        acc = acc + kv * plane[sr * w + sc];
                        muls += 1;
                    }
                }
                out.push(acc + bias);
            }
        }
    }
    mac::record(muls);
    Ok(Tensor::from_parts(vec![c, h, w], out))
}
