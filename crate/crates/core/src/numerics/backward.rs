//! Analytic backward passes. Each function takes the forward inputs plus the
//! upstream gradient of a scalar loss and returns gradients for every input
//! and parameter.

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

use super::forward::{gelu, gelu_derivative, linear, pool_range, rows_and_channels};
use super::{matmul, ConvParams, LinearParams};

#[derive(Debug, Clone)]
pub struct MatmulGrad<T> {
    pub lhs: Tensor<T>,
    pub rhs: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct LinearGrad<T> {
    pub input: Tensor<T>,
    pub params: LinearParams<T>,
}

#[derive(Debug, Clone)]
pub struct FfnGrad<T> {
    pub input: Tensor<T>,
    pub first: LinearParams<T>,
    pub second: LinearParams<T>,
}

#[derive(Debug, Clone)]
pub struct ConvGrad<T> {
    pub input: Tensor<T>,
    pub params: ConvParams<T>,
}

fn check_upstream<T: Element>(op: &'static str, expected: &[usize], grad: &Tensor<T>) -> Result<()> {
    if grad.shape() != expected {
        return Err(Error::mismatch(op, expected, grad.shape()));
    }
    Ok(())
}

/// For `C = A B`: `dA = dC B^T`, `dB = A^T dC`.
pub fn matmul_grad<T: Element>(a: &Tensor<T>, b: &Tensor<T>, upstream: &Tensor<T>) -> Result<MatmulGrad<T>> {
    let [m, _] = a.dims2("matmul_grad")?;
    let [_, n] = b.dims2("matmul_grad")?;
    check_upstream("matmul_grad", &[m, n], upstream)?;
    Ok(MatmulGrad {
        lhs: matmul(upstream, &b.transpose2()?)?,
        rhs: matmul(&a.transpose2()?, upstream)?,
    })
}

pub fn linear_grad<T: Element>(x: &Tensor<T>, p: &LinearParams<T>, upstream: &Tensor<T>) -> Result<LinearGrad<T>> {
    let (rows, c_in) = rows_and_channels(x);
    if c_in != p.c_in() {
        return Err(Error::mismatch("linear_grad", x.shape(), p.weight.shape()));
    }
    let mut out_shape = x.shape().to_vec();
    *out_shape.last_mut().unwrap() = p.c_out();
    check_upstream("linear_grad", &out_shape, upstream)?;

    let x2 = x.clone().reshape([rows, c_in])?;
    let dy2 = upstream.clone().reshape([rows, p.c_out()])?;
    let input = matmul(&dy2, &p.weight.transpose2()?)?.reshape(x.shape())?;
    let weight = matmul(&x2.transpose2()?, &dy2)?;
    let mut bias = vec![T::zero(); p.c_out()];
    for row in dy2.data().chunks(p.c_out()) {
        for (b, &g) in bias.iter_mut().zip(row) {
            *b = *b + g;
        }
    }
    Ok(LinearGrad {
        input,
        params: LinearParams {
            weight,
            bias: Tensor::from_parts(vec![p.c_out()], bias),
        },
    })
}

pub fn ffn_grad<T: Element>(
    x: &Tensor<T>,
    p1: &LinearParams<T>,
    p2: &LinearParams<T>,
    upstream: &Tensor<T>,
) -> Result<FfnGrad<T>> {
    let pre = linear(x, p1)?;
    let hidden = pre.map(gelu);
    let second = linear_grad(&hidden, p2, upstream)?;
    let dpre = Tensor::from_parts(
        pre.shape().to_vec(),
        pre.data()
            .iter()
            .zip(second.input.data())
            .map(|(&z, &g)| g * gelu_derivative(z))
            .collect(),
    );
    let first = linear_grad(x, p1, &dpre)?;
    Ok(FfnGrad {
        input: first.input,
        first: first.params,
        second: second.params,
    })
}

/// Gradient of [`super::adaptive_avg_pool2d`] with respect to its input.
/// Overlapping regions accumulate.
pub fn pool_grad<T: Element>(input_shape: &[usize], upstream: &Tensor<T>) -> Result<Tensor<T>> {
    let &[c, h, w] = input_shape else {
        return Err(Error::InvalidShape {
            shape: input_shape.to_vec(),
            reason: "pool_grad expects a rank-3 input shape".into(),
        });
    };
    let [c2, out_h, out_w] = upstream.dims3("pool_grad")?;
    if c2 != c || out_h > h || out_w > w {
        return Err(Error::mismatch("pool_grad", input_shape, upstream.shape()));
    }
    let mut dx = vec![T::zero(); c * h * w];
    let g = upstream.data();
    for ch in 0..c {
        let plane = &mut dx[ch * h * w..(ch + 1) * h * w];
        for i in 0..out_h {
            let (r0, r1) = pool_range(i, h, out_h);
            for j in 0..out_w {
                let (c0, c1) = pool_range(j, w, out_w);
                let share = g[(ch * out_h + i) * out_w + j] * T::from_f64(1.0 / ((r1 - r0) * (c1 - c0)) as f64);
                for r in r0..r1 {
                    for v in &mut plane[r * w + c0..r * w + c1] {
                        *v = *v + share;
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![c, h, w], dx))
}

pub fn conv_grad<T: Element>(x: &Tensor<T>, p: &ConvParams<T>, upstream: &Tensor<T>) -> Result<ConvGrad<T>> {
    let [c, h, w] = x.dims3("conv_grad")?;
    if c != p.channels() {
        return Err(Error::mismatch("conv_grad", x.shape(), p.kernel.shape()));
    }
    check_upstream("conv_grad", x.shape(), upstream)?;
    let src = x.data();
    let g = upstream.data();
    let kernel = p.kernel.data();
    let mut dx = vec![T::zero(); c * h * w];
    let mut dk = vec![T::zero(); c * 9];
    let mut db = vec![T::zero(); c];
    for (ch, db_ch) in db.iter_mut().enumerate() {
        let base = ch * h * w;
        for r in 0..h {
            for col in 0..w {
                let go = g[base + r * w + col];
                *db_ch = *db_ch + go;
                for dy in 0..3 {
                    let Some(sr) = (r + dy).checked_sub(1).filter(|&sr| sr < h) else {
                        continue;
                    };
                    for dxo in 0..3 {
                        let Some(sc) = (col + dxo).checked_sub(1).filter(|&sc| sc < w) else {
                            continue;
                        };
                        let tap = ch * 9 + dy * 3 + dxo;
                        let src_idx = base + sr * w + sc;
                        dk[tap] = dk[tap] + go * src[src_idx];
                        dx[src_idx] = dx[src_idx] + go * kernel[tap];
                    }
                }
            }
        }
    }
    Ok(ConvGrad {
        input: Tensor::from_parts(vec![c, h, w], dx),
        params: ConvParams {
            kernel: Tensor::from_parts(vec![c, 3, 3], dk),
            bias: Tensor::from_parts(vec![c], db),
        },
    })
}
