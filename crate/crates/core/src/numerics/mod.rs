//! Deterministic dense kernels and their analytic gradients.
//!
//! All reductions run in a fixed left-to-right order, so every kernel is
//! bitwise reproducible. None of the kernels spawn threads; callers
//! parallelise across independent frames or rows.

mod backward;
mod forward;
pub mod mac;

pub use backward::{conv_grad, ffn_grad, linear_grad, matmul_grad, pool_grad};
pub use backward::{ConvGrad, FfnGrad, LinearGrad, MatmulGrad};
pub use forward::{
    adaptive_avg_pool2d, depthwise_conv3x3, ffn_forward, gelu, gelu_derivative, linear, matmul, softmax_rows,
};

pub(crate) use forward::{matmul_into, softmax_in_place};

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Weights of a dense layer: `weight` is `C_in x C_out`, `bias` is `C_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams<T = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Element> LinearParams<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let [_, c_out] = weight.dims2("LinearParams")?;
        if bias.shape() != [c_out] {
            return Err(Error::mismatch("LinearParams", weight.shape(), bias.shape()));
        }
        Ok(Self { weight, bias })
    }

    pub fn zeros(c_in: usize, c_out: usize) -> Result<Self> {
        Ok(Self {
            weight: Tensor::zeros([c_in, c_out])?,
            bias: Tensor::zeros([c_out])?,
        })
    }

    pub fn c_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn c_out(&self) -> usize {
        self.weight.shape()[1]
    }
}

/// Depthwise 3x3 filter bank: `kernel` is `C x 3 x 3`, `bias` is `C`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T = f32> {
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Element> ConvParams<T> {
    pub fn new(kernel: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let [c, kh, kw] = kernel.dims3("ConvParams")?;
        if (kh, kw) != (3, 3) {
            return Err(Error::InvalidShape {
                shape: kernel.shape().to_vec(),
                reason: "depthwise kernel must be 3x3".into(),
            });
        }
        if bias.shape() != [c] {
            return Err(Error::mismatch("ConvParams", kernel.shape(), bias.shape()));
        }
        Ok(Self { kernel, bias })
    }

    pub fn zeros(channels: usize) -> Result<Self> {
        Ok(Self {
            kernel: Tensor::zeros([channels, 3, 3])?,
            bias: Tensor::zeros([channels])?,
        })
    }

    /// Kernel with a single 1 at the centre of every filter.
    pub fn identity(channels: usize) -> Result<Self> {
        let kernel = Tensor::from_fn([channels, 3, 3], |i| if i % 9 == 4 { T::one() } else { T::zero() })?;
        Ok(Self {
            kernel,
            bias: Tensor::zeros([channels])?,
        })
    }

    pub fn channels(&self) -> usize {
        self.kernel.shape()[0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_difference, relative_error};
    use crate::rng::SplitMix64;

    fn t32(shape: &[usize], data: &[f32]) -> Tensor<f32> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    fn naive_matmul(a: &Tensor<f32>, b: &Tensor<f32>) -> Vec<f32> {
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0f32;
                for l in 0..k {
                    s += a.data()[i * k + l] * b.data()[l * n + j];
                }
                out[i * n + j] = s;
            }
        }
        out
    }

    #[test]
    fn matmul_identity_and_dot() {
        let eye = t32(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let m = t32(&[2, 2], &[3.0, 4.0, 5.0, 6.0]);
        assert_eq!(matmul(&eye, &m).unwrap(), m);
        let row = t32(&[1, 2], &[1.0, 2.0]);
        let col = t32(&[2, 1], &[3.0, 4.0]);
        assert_eq!(matmul(&row, &col).unwrap().data(), &[11.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = SplitMix64::new(11);
        let a = rng.tensor::<f32>(&[8, 8], 1.0).unwrap();
        let b = rng.tensor::<f32>(&[8, 8], 1.0).unwrap();
        let got = matmul(&a, &b).unwrap();
        for (g, e) in got.data().iter().zip(naive_matmul(&a, &b)) {
            assert!((g - e).abs() <= 1e-6, "{g} vs {e}");
        }
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::<f32>::zeros([2, 3]).unwrap();
        let b = Tensor::<f32>::zeros([2, 3]).unwrap();
        let msg = matmul(&a, &b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn softmax_examples() {
        let s = softmax_rows(&t32(&[1, 2], &[0.0, 0.0])).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);

        let s = softmax_rows(&Tensor::<f64>::new([1, 2], vec![2f64.ln(), 0.0]).unwrap()).unwrap();
        assert!((s.data()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.data()[1] - 1.0 / 3.0).abs() < 1e-15);

        let x = t32(&[1, 3], &[0.3, -1.2, 2.5]);
        let shifted = x.map(|v| v + 7.0);
        let a = softmax_rows(&x).unwrap();
        let b = softmax_rows(&shifted).unwrap();
        for (p, q) in a.data().iter().zip(b.data()) {
            assert!((p - q).abs() < 1e-6);
        }
    }

    #[test]
    fn softmax_large_inputs_stay_finite() {
        let s = softmax_rows(&t32(&[1, 2], &[1000.0, 0.0])).unwrap();
        assert_eq!(s.data(), &[1.0, 0.0]);
    }

    fn brute_pool(x: &Tensor<f64>, oh: usize, ow: usize) -> Vec<f64> {
        let [c, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2]];
        let mut out = Vec::new();
        for ch in 0..c {
            for i in 0..oh {
                let r0 = (i * h) / oh;
                let r1 = ((i + 1) * h).div_ceil(oh);
                for j in 0..ow {
                    let c0 = (j * w) / ow;
                    let c1 = ((j + 1) * w).div_ceil(ow);
                    let mut cells = Vec::new();
                    for r in r0..r1 {
                        for cc in c0..c1 {
                            cells.push(x.data()[ch * h * w + r * w + cc]);
                        }
                    }
                    out.push(cells.iter().sum::<f64>() / cells.len() as f64);
                }
            }
        }
        out
    }

    #[test]
    fn pool_examples() {
        let x = Tensor::<f32>::from_fn([1, 4, 4], |i| i as f32).unwrap();
        let y = adaptive_avg_pool2d(&x, 2, 2).unwrap();
        assert_eq!(y.data(), &[2.5, 4.5, 10.5, 12.5]);

        let c = Tensor::<f32>::full([2, 5, 7], 0.25).unwrap();
        let y = adaptive_avg_pool2d(&c, 3, 4).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.25));

        let mut rng = SplitMix64::new(3);
        let x = rng.tensor::<f64>(&[1, 14, 14], 1.0).unwrap();
        let y = adaptive_avg_pool2d(&x, 12, 12).unwrap();
        for (g, e) in y.data().iter().zip(brute_pool(&x, 12, 12)) {
            assert!((g - e).abs() < 1e-6);
        }
    }

    #[test]
    fn pool_identity_and_upsample_error() {
        let mut rng = SplitMix64::new(4);
        let x = rng.tensor::<f32>(&[3, 5, 6], 1.0).unwrap();
        assert_eq!(adaptive_avg_pool2d(&x, 5, 6).unwrap(), x);
        assert!(matches!(
            adaptive_avg_pool2d(&x, 6, 6).unwrap_err(),
            Error::UnsupportedUpsample { .. }
        ));
    }

    #[test]
    fn pool_preserves_mean_on_divisible_grids() {
        let mut rng = SplitMix64::new(5);
        let x = rng.tensor::<f32>(&[2, 12, 8], 1.0).unwrap();
        let y = adaptive_avg_pool2d(&x, 4, 2).unwrap();
        let mean = |t: &Tensor<f32>| t.data().iter().map(|&v| v as f64).sum::<f64>() / t.numel() as f64;
        assert!((mean(&x) - mean(&y)).abs() < 1e-6);
    }

    fn per_token_ffn(x: &[f64], p1: &LinearParams<f64>, p2: &LinearParams<f64>) -> Vec<f64> {
        let layer = |v: &[f64], p: &LinearParams<f64>| -> Vec<f64> {
            (0..p.c_out())
                .map(|o| {
                    let dot: f64 = (0..p.c_in()).map(|i| v[i] * p.weight.data()[i * p.c_out() + o]).sum();
                    dot + p.bias.data()[o]
                })
                .collect()
        };
        let h: Vec<f64> = layer(x, p1)
            .into_iter()
            .map(|z| 0.5 * z * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (z + 0.044715 * z.powi(3))).tanh()))
            .collect();
        layer(&h, p2)
    }

    #[test]
    fn ffn_examples() {
        let x = Tensor::<f32>::full([1, 3, 4], 0.7).unwrap();
        let y = ffn_forward(
            &x,
            &LinearParams::zeros(4, 5).unwrap(),
            &LinearParams::zeros(5, 2).unwrap(),
        )
        .unwrap();
        assert_eq!(y.shape(), &[1, 3, 2]);
        assert!(y.data().iter().all(|&v| v == 0.0));
        assert_eq!(gelu(0.0f32), 0.0);

        let mut rng = SplitMix64::new(8);
        let x = rng.tensor::<f64>(&[2, 3, 4], 1.0).unwrap();
        let p1 = LinearParams::new(rng.tensor(&[4, 6], 0.5).unwrap(), rng.tensor(&[6], 0.5).unwrap()).unwrap();
        let p2 = LinearParams::new(rng.tensor(&[6, 3], 0.5).unwrap(), rng.tensor(&[3], 0.5).unwrap()).unwrap();
        let y = ffn_forward(&x, &p1, &p2).unwrap();
        assert_eq!(y.shape(), &[2, 3, 3]);
        for (token, out) in x.data().chunks(4).zip(y.data().chunks(3)) {
            for (g, e) in out.iter().zip(per_token_ffn(token, &p1, &p2)) {
                assert!((g - e).abs() < 1e-6);
            }
        }
    }

    fn direct_conv(x: &Tensor<f64>, p: &ConvParams<f64>) -> Vec<f64> {
        let [c, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2]];
        let mut out = vec![0.0; c * h * w];
        for ch in 0..c {
            for r in 0..h as isize {
                for col in 0..w as isize {
                    let mut s = p.bias.data()[ch];
                    for ky in 0..3isize {
                        for kx in 0..3isize {
                            let (sr, sc) = (r + ky - 1, col + kx - 1);
                            if sr < 0 || sc < 0 || sr >= h as isize || sc >= w as isize {
                                continue;
                            }
                            s += p.kernel.data()[ch * 9 + (ky * 3 + kx) as usize]
                                * x.data()[ch * h * w + (sr as usize) * w + sc as usize];
                        }
                    }
                    out[ch * h * w + r as usize * w + col as usize] = s;
                }
            }
        }
        out
    }

    #[test]
    fn conv_examples() {
        let mut rng = SplitMix64::new(9);
        let x = rng.tensor::<f64>(&[2, 5, 5], 1.0).unwrap();
        let zero = depthwise_conv3x3(&x, &ConvParams::zeros(2).unwrap()).unwrap();
        assert!(zero.data().iter().all(|&v| v == 0.0));
        assert_eq!(depthwise_conv3x3(&x, &ConvParams::identity(2).unwrap()).unwrap(), x);

        let p = ConvParams::new(rng.tensor(&[2, 3, 3], 1.0).unwrap(), rng.tensor(&[2], 1.0).unwrap()).unwrap();
        let y = depthwise_conv3x3(&x, &p).unwrap();
        for (g, e) in y.data().iter().zip(direct_conv(&x, &p)) {
            assert!((g - e).abs() < 1e-6);
        }

        let err = depthwise_conv3x3(&x, &ConvParams::zeros(3).unwrap()).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }));
        assert!(ConvParams::new(Tensor::<f64>::zeros([1, 5, 5]).unwrap(), Tensor::zeros([1]).unwrap()).is_err());
    }

    #[test]
    fn linear_grad_scalar_case() {
        // y = x*w + b with x=2, w=3, b=1: y=7, dL/dw = 2*x*y = 28, dL/db = 2*y = 14.
        let x = Tensor::<f64>::new([1, 1], vec![2.0]).unwrap();
        let p = LinearParams::new(
            Tensor::new([1, 1], vec![3.0]).unwrap(),
            Tensor::new([1], vec![1.0]).unwrap(),
        )
        .unwrap();
        let y = linear(&x, &p).unwrap();
        let g = linear_grad(&x, &p, &y.map(|v| 2.0 * v)).unwrap();
        assert_eq!(g.params.weight.data(), &[28.0]);
        assert_eq!(g.params.bias.data(), &[14.0]);
        assert_eq!(g.input.data(), &[42.0]);
    }

    #[test]
    fn weight_independent_path_has_zero_param_gradient() {
        // Zero upstream gradient: the loss does not depend on the parameters.
        let mut rng = SplitMix64::new(12);
        let x = rng.tensor::<f64>(&[3, 4], 1.0).unwrap();
        let p = LinearParams::new(rng.tensor(&[4, 2], 1.0).unwrap(), rng.tensor(&[2], 1.0).unwrap()).unwrap();
        let g = linear_grad(&x, &p, &Tensor::zeros([3, 2]).unwrap()).unwrap();
        assert!(g.params.weight.data().iter().all(|&v| v == 0.0));
        assert!(g.params.bias.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_matches_finite_differences() {
        for seed in 0..20 {
            let mut rng = SplitMix64::new(1000 + seed);

            let a = rng.tensor::<f64>(&[3, 4], 1.0).unwrap();
            let b = rng.tensor::<f64>(&[4, 2], 1.0).unwrap();
            let y = matmul(&a, &b).unwrap();
            let g = matmul_grad(&a, &b, &y.map(|v| 2.0 * v)).unwrap();
            let na = central_difference(&a, 1e-4, |t| matmul(t, &b).unwrap().sum_squares());
            let nb = central_difference(&b, 1e-4, |t| matmul(&a, t).unwrap().sum_squares());
            assert!(relative_error(g.lhs.data(), na.data()) < 1e-4);
            assert!(relative_error(g.rhs.data(), nb.data()) < 1e-4);

            let x = rng.tensor::<f64>(&[2, 5, 6], 1.0).unwrap();
            let y = adaptive_avg_pool2d(&x, 3, 4).unwrap();
            let g = pool_grad(x.shape(), &y.map(|v| 2.0 * v)).unwrap();
            let n = central_difference(&x, 1e-4, |t| adaptive_avg_pool2d(t, 3, 4).unwrap().sum_squares());
            assert!(relative_error(g.data(), n.data()) < 1e-4);

            let p = ConvParams::new(rng.tensor(&[2, 3, 3], 1.0).unwrap(), rng.tensor(&[2], 1.0).unwrap()).unwrap();
            let y = depthwise_conv3x3(&x, &p).unwrap();
            let g = conv_grad(&x, &p, &y.map(|v| 2.0 * v)).unwrap();
            let nx = central_difference(&x, 1e-4, |t| depthwise_conv3x3(t, &p).unwrap().sum_squares());
            let nk = central_difference(&p.kernel, 1e-4, |k| {
                let q = ConvParams::new(k.clone(), p.bias.clone()).unwrap();
                depthwise_conv3x3(&x, &q).unwrap().sum_squares()
            });
            assert!(relative_error(g.input.data(), nx.data()) < 1e-4);
            assert!(relative_error(g.params.kernel.data(), nk.data()) < 1e-4);
        }
    }

    #[test]
    fn kernels_report_multiplies() {
        let a = Tensor::<f32>::zeros([3, 4]).unwrap();
        let b = Tensor::<f32>::zeros([4, 5]).unwrap();
        let (_, n) = mac::measure(|| matmul(&a, &b).unwrap());
        assert_eq!(n, 60);

        let x = Tensor::<f32>::zeros([2, 4, 5]).unwrap();
        let (_, n) = mac::measure(|| depthwise_conv3x3(&x, &ConvParams::zeros(2).unwrap()).unwrap());
        assert_eq!(n, 2 * (3 * 4 - 2) * (3 * 5 - 2));
        let (_, n) = mac::measure(|| adaptive_avg_pool2d(&x, 2, 3).unwrap());
        assert_eq!(n, 12);
    }
}
