//! Finite-difference verification of the analytic backward passes.
//!
//! Every check uses the loss `L = sum(y^2)`, so the upstream gradient handed
//! to a backward pass is `2y`. Numerical gradients use central differences
//! in `f64`; the error of one gradient tensor is
//! `|analytic - numeric|_2 / max(|analytic|_2, |numeric|_2)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    adaptive_avg_pool2d, conv_grad, depthwise_conv3x3, ffn_forward, ffn_grad, linear, linear_grad, matmul, matmul_grad,
    pool_grad, ConvParams, LinearParams,
};
use crate::projector::{
    et_proj_backward, et_proj_forward, mlp_proj_backward, mlp_proj_forward, ProjectorConfig, ProjectorParams,
};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-4;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// Central-difference gradient of `loss` at `t`, one element at a time.
pub fn central_difference(t: &Tensor<f64>, step: f64, loss: impl Fn(&Tensor<f64>) -> f64) -> Tensor<f64> {
    let mut probe = t.clone();
    let mut grad = Vec::with_capacity(t.numel());
    for i in 0..t.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let up = loss(&probe);
        probe.data_mut()[i] = orig - step;
        let down = loss(&probe);
        probe.data_mut()[i] = orig;
        grad.push((up - down) / (2.0 * step));
    }
    Tensor::from_parts(t.shape().to_vec(), grad)
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradOp {
    Matmul,
    Linear,
    Ffn,
    AdaptivePool,
    DepthwiseConv,
    EtProj,
    MlpProj,
}

impl GradOp {
    pub const ALL: [GradOp; 7] = [
        GradOp::Matmul,
        GradOp::Linear,
        GradOp::Ffn,
        GradOp::AdaptivePool,
        GradOp::DepthwiseConv,
        GradOp::EtProj,
        GradOp::MlpProj,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GradOp::Matmul => "matmul",
            GradOp::Linear => "linear",
            GradOp::Ffn => "ffn",
            GradOp::AdaptivePool => "adaptive_pool",
            GradOp::DepthwiseConv => "depthwise_conv",
            GradOp::EtProj => "et_proj",
            GradOp::MlpProj => "mlp_proj",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|op| op.name() == name)
    }
}

#[derive(Debug, Clone)]
pub struct GradcheckOptions {
    pub seeds: usize,
    pub step: f64,
    pub tolerance: f64,
    /// Negative control: scale this op's analytic gradients by 1.01.
    pub fault: Option<GradOp>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            seeds: 10,
            step: DEFAULT_STEP,
            tolerance: DEFAULT_TOLERANCE,
            fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpResult {
    pub op: GradOp,
    pub trials: usize,
    pub max_rel_err: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckReport {
    pub schema_version: u32,
    pub step: f64,
    pub tolerance: f64,
    pub ops: Vec<OpResult>,
    pub pass: bool,
}

struct Trial {
    step: f64,
    scale: f64,
    worst: f64,
}

impl Trial {
    fn compare(&mut self, analytic: &Tensor<f64>, at: &Tensor<f64>, loss: impl Fn(&Tensor<f64>) -> f64) {
        let numeric = central_difference(at, self.step, loss);
        let analytic: Vec<f64> = analytic.data().iter().map(|v| v * self.scale).collect();
        self.worst = self.worst.max(relative_error(&analytic, numeric.data()));
    }
}

fn twice(y: &Tensor<f64>) -> Tensor<f64> {
    y.map(|v| 2.0 * v)
}

fn random_linear(rng: &mut SplitMix64, c_in: usize, c_out: usize) -> Result<LinearParams<f64>> {
    LinearParams::new(rng.tensor(&[c_in, c_out], 0.8)?, rng.tensor(&[c_out], 0.5)?)
}

fn random_projector(rng: &mut SplitMix64, cfg: &ProjectorConfig) -> Result<ProjectorParams<f64>> {
    let posenc = match cfg.kind {
        crate::projector::ProjectorKind::EtProj => Some(ConvParams::new(
            rng.tensor(&[cfg.c_out, 3, 3], 0.5)?,
            rng.tensor(&[cfg.c_out], 0.5)?,
        )?),
        crate::projector::ProjectorKind::MlpProj => None,
    };
    Ok(ProjectorParams {
        ffn1: random_linear(rng, cfg.c_in, cfg.c_hidden)?,
        ffn2: random_linear(rng, cfg.c_hidden, cfg.c_out)?,
        posenc,
    })
}

fn check_projector(rng: &mut SplitMix64, trial: &mut Trial, et: bool) -> Result<()> {
    let (h, w) = (rng.next_usize(2, 5), rng.next_usize(2, 5));
    let (c_in, c_hidden, c_out) = (rng.next_usize(1, 4), rng.next_usize(1, 5), rng.next_usize(1, 4));
    let cfg = if et {
        ProjectorConfig::et(c_in, c_out, (h, w), (rng.next_usize(1, h), rng.next_usize(1, w)))
    } else {
        ProjectorConfig::mlp(c_in, c_out, (h, w))
    }
    .with_hidden(c_hidden);
    let params = random_projector(rng, &cfg)?;
    let batch = rng.next_usize(1, 2);
    let x = rng.tensor::<f64>(&[batch, h * w, c_in], 1.0)?;
    let forward = |x: &Tensor<f64>, p: &ProjectorParams<f64>| {
        if et {
            et_proj_forward(x, &cfg, p)
        } else {
            mlp_proj_forward(x, &cfg, p)
        }
    };
    let y = forward(&x, &params)?;
    let g = if et {
        et_proj_backward(&x, &cfg, &params, &twice(&y))?
    } else {
        mlp_proj_backward(&x, &cfg, &params, &twice(&y))?
    };
    let loss = |p: &ProjectorParams<f64>| forward(&x, p).expect("valid shapes").sum_squares();

    trial.compare(&g.input, &x, |t| {
        forward(t, &params).expect("valid shapes").sum_squares()
    });
    trial.compare(&g.params.ffn1.weight, &params.ffn1.weight, |t| {
        let mut p = params.clone();
        p.ffn1.weight = t.clone();
        loss(&p)
    });
    trial.compare(&g.params.ffn1.bias, &params.ffn1.bias, |t| {
        let mut p = params.clone();
        p.ffn1.bias = t.clone();
        loss(&p)
    });
    trial.compare(&g.params.ffn2.weight, &params.ffn2.weight, |t| {
        let mut p = params.clone();
        p.ffn2.weight = t.clone();
        loss(&p)
    });
    trial.compare(&g.params.ffn2.bias, &params.ffn2.bias, |t| {
        let mut p = params.clone();
        p.ffn2.bias = t.clone();
        loss(&p)
    });
    if let (Some(gp), Some(pe)) = (&g.params.posenc, &params.posenc) {
        trial.compare(&gp.kernel, &pe.kernel, |t| {
            let mut p = params.clone();
            p.posenc.as_mut().unwrap().kernel = t.clone();
            loss(&p)
        });
        trial.compare(&gp.bias, &pe.bias, |t| {
            let mut p = params.clone();
            p.posenc.as_mut().unwrap().bias = t.clone();
            loss(&p)
        });
    }
    Ok(())
}

/// Runs one randomised trial of `op` and returns the worst relative error
/// over all of its gradient tensors.
pub fn check_op(op: GradOp, seed: u64, step: f64, faulty: bool) -> Result<f64> {
    let mut rng = SplitMix64::new(seed.wrapping_mul(0x9E37_79B9).wrapping_add(op as u64));
    let mut trial = Trial {
        step,
        scale: if faulty { 1.01 } else { 1.0 },
        worst: 0.0,
    };
    let sq = |t: Result<Tensor<f64>>| t.expect("valid shapes").sum_squares();
    match op {
        GradOp::Matmul => {
            let (m, k, n) = (rng.next_usize(1, 5), rng.next_usize(1, 5), rng.next_usize(1, 5));
            let a = rng.tensor::<f64>(&[m, k], 1.0)?;
            let b = rng.tensor::<f64>(&[k, n], 1.0)?;
            let g = matmul_grad(&a, &b, &twice(&matmul(&a, &b)?))?;
            trial.compare(&g.lhs, &a, |t| sq(matmul(t, &b)));
            trial.compare(&g.rhs, &b, |t| sq(matmul(&a, t)));
        }
        GradOp::Linear => {
            let (rows, c_in, c_out) = (rng.next_usize(1, 6), rng.next_usize(1, 5), rng.next_usize(1, 5));
            let x = rng.tensor::<f64>(&[rows, c_in], 1.0)?;
            let p = random_linear(&mut rng, c_in, c_out)?;
            let g = linear_grad(&x, &p, &twice(&linear(&x, &p)?))?;
            trial.compare(&g.input, &x, |t| sq(linear(t, &p)));
            trial.compare(&g.params.weight, &p.weight, |t| {
                sq(linear(&x, &LinearParams::new(t.clone(), p.bias.clone()).unwrap()))
            });
            trial.compare(&g.params.bias, &p.bias, |t| {
                sq(linear(&x, &LinearParams::new(p.weight.clone(), t.clone()).unwrap()))
            });
        }
        GradOp::Ffn => {
            let (b, n) = (rng.next_usize(1, 2), rng.next_usize(1, 4));
            let (c_in, c_h, c_out) = (rng.next_usize(1, 4), rng.next_usize(1, 6), rng.next_usize(1, 4));
            let x = rng.tensor::<f64>(&[b, n, c_in], 1.0)?;
            let p1 = random_linear(&mut rng, c_in, c_h)?;
            let p2 = random_linear(&mut rng, c_h, c_out)?;
            let g = ffn_grad(&x, &p1, &p2, &twice(&ffn_forward(&x, &p1, &p2)?))?;
            trial.compare(&g.input, &x, |t| sq(ffn_forward(t, &p1, &p2)));
            trial.compare(&g.first.weight, &p1.weight, |t| {
                let q = LinearParams::new(t.clone(), p1.bias.clone()).unwrap();
                sq(ffn_forward(&x, &q, &p2))
            });
            trial.compare(&g.first.bias, &p1.bias, |t| {
                let q = LinearParams::new(p1.weight.clone(), t.clone()).unwrap();
                sq(ffn_forward(&x, &q, &p2))
            });
            trial.compare(&g.second.weight, &p2.weight, |t| {
                let q = LinearParams::new(t.clone(), p2.bias.clone()).unwrap();
                sq(ffn_forward(&x, &p1, &q))
            });
            trial.compare(&g.second.bias, &p2.bias, |t| {
                let q = LinearParams::new(p2.weight.clone(), t.clone()).unwrap();
                sq(ffn_forward(&x, &p1, &q))
            });
        }
        GradOp::AdaptivePool => {
            let (c, h, w) = (rng.next_usize(1, 3), rng.next_usize(1, 9), rng.next_usize(1, 9));
            let (oh, ow) = (rng.next_usize(1, h), rng.next_usize(1, w));
            let x = rng.tensor::<f64>(&[c, h, w], 1.0)?;
            let g = pool_grad(x.shape(), &twice(&adaptive_avg_pool2d(&x, oh, ow)?))?;
            trial.compare(&g, &x, |t| sq(adaptive_avg_pool2d(t, oh, ow)));
        }
        GradOp::DepthwiseConv => {
            let (c, h, w) = (rng.next_usize(1, 3), rng.next_usize(1, 6), rng.next_usize(1, 6));
            let x = rng.tensor::<f64>(&[c, h, w], 1.0)?;
            let p = ConvParams::new(rng.tensor(&[c, 3, 3], 1.0)?, rng.tensor(&[c], 1.0)?)?;
            let g = conv_grad(&x, &p, &twice(&depthwise_conv3x3(&x, &p)?))?;
            trial.compare(&g.input, &x, |t| sq(depthwise_conv3x3(t, &p)));
            trial.compare(&g.params.kernel, &p.kernel, |t| {
                sq(depthwise_conv3x3(
                    &x,
                    &ConvParams::new(t.clone(), p.bias.clone()).unwrap(),
                ))
            });
            trial.compare(&g.params.bias, &p.bias, |t| {
                sq(depthwise_conv3x3(
                    &x,
                    &ConvParams::new(p.kernel.clone(), t.clone()).unwrap(),
                ))
            });
        }
        GradOp::EtProj => check_projector(&mut rng, &mut trial, true)?,
        GradOp::MlpProj => check_projector(&mut rng, &mut trial, false)?,
    }
    Ok(trial.worst)
}

/// Runs `opts.seeds` trials of every op.
pub fn run_gradchecks(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    if opts.seeds == 0 {
        return Err(Error::argument("gradcheck needs at least one seed"));
    }
    let mut ops = Vec::new();
    for op in GradOp::ALL {
        let mut worst = 0.0f64;
        for seed in 0..opts.seeds as u64 {
            worst = worst.max(check_op(op, seed, opts.step, opts.fault == Some(op))?);
        }
        ops.push(OpResult {
            op,
            trials: opts.seeds,
            max_rel_err: worst,
            pass: worst < opts.tolerance,
        });
    }
    let pass = ops.iter().all(|r| r.pass);
    Ok(GradcheckReport {
        schema_version: 1,
        step: opts.step,
        tolerance: opts.tolerance,
        ops,
        pass,
    })
}
