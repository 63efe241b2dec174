//! Vision-to-language token projectors.
//!
//! Two kinds share one parameter layout:
//!
//! * **ET-Proj** runs a per-token FFN, folds the tokens back onto their
//!   `H x W` grid, adaptively average-pools the grid down to `Hr x Wr`, then
//!   adds a depthwise 3x3 convolution of the pooled grid to itself
//!   (`out = pooled + conv(pooled)`). Each frame leaves `Hr * Wr` tokens.
//! * **MLP-Proj** is the same FFN with no pooling and no positional
//!   convolution, so the token count is unchanged.

mod store;

pub use store::{load_params, save_params, ProjectorManifest, TensorEntry};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FrameFeatures, VideoFeatures};
use crate::numerics::{
    adaptive_avg_pool2d, conv_grad, depthwise_conv3x3, ffn_forward, ffn_grad, mac, pool_grad, ConvParams, LinearParams,
};
use crate::rng::SplitMix64;
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectorKind {
    EtProj,
    MlpProj,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectorConfig {
    pub kind: ProjectorKind,
    pub c_in: usize,
    pub c_hidden: usize,
    pub c_out: usize,
    pub grid_in: (usize, usize),
    pub grid_out: (usize, usize),
}

impl ProjectorConfig {
    /// ET-Proj with the FFN hidden width equal to `c_out`.
    pub fn et(c_in: usize, c_out: usize, grid_in: (usize, usize), grid_out: (usize, usize)) -> Self {
        Self {
            kind: ProjectorKind::EtProj,
            c_in,
            c_hidden: c_out,
            c_out,
            grid_in,
            grid_out,
        }
    }

    pub fn mlp(c_in: usize, c_out: usize, grid: (usize, usize)) -> Self {
        Self {
            kind: ProjectorKind::MlpProj,
            c_in,
            c_hidden: c_out,
            c_out,
            grid_in: grid,
            grid_out: grid,
        }
    }

    pub fn with_hidden(mut self, c_hidden: usize) -> Self {
        self.c_hidden = c_hidden;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.c_in,
            self.c_hidden,
            self.c_out,
            self.grid_in.0,
            self.grid_in.1,
            self.grid_out.0,
            self.grid_out.1,
        ];
        if dims.contains(&0) {
            return Err(Error::argument(format!(
                "projector dimensions must be positive: {self:?}"
            )));
        }
        match self.kind {
            ProjectorKind::EtProj if self.grid_out.0 > self.grid_in.0 || self.grid_out.1 > self.grid_in.1 => {
                Err(Error::UnsupportedUpsample {
                    from: self.grid_in,
                    to: self.grid_out,
                })
            }
            ProjectorKind::MlpProj if self.grid_out != self.grid_in => Err(Error::argument(format!(
                "mlp_proj keeps the token grid; grid_out {:?} != grid_in {:?}",
                self.grid_out, self.grid_in
            ))),
            _ => Ok(()),
        }
    }

    pub fn tokens_in(&self) -> usize {
        self.grid_in.0 * self.grid_in.1
    }

    pub fn tokens_per_frame(&self) -> usize {
        self.grid_out.0 * self.grid_out.1
    }

    /// Multiplications needed to project one frame.
    pub fn macs_per_frame(&self) -> u64 {
        let n = self.tokens_in() as u64;
        let ffn = n * self.c_in as u64 * self.c_hidden as u64 + n * self.c_hidden as u64 * self.c_out as u64;
        match self.kind {
            ProjectorKind::MlpProj => ffn,
            ProjectorKind::EtProj => {
                let (hr, wr) = (self.grid_out.0 as u64, self.grid_out.1 as u64);
                let c = self.c_out as u64;
                let pool = c * hr * wr;
                // A 3x3 tap is skipped when it falls in the zero padding: each
                // axis of length n has 3n - 2 in-bounds (output, tap) pairs.
                let conv = c * (3 * hr - 2) * (3 * wr - 2);
                ffn + pool + conv
            }
        }
    }
}

/// Learnable weights of one projector. `posenc` is present for ET-Proj only.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectorParams<T = f32> {
    pub ffn1: LinearParams<T>,
    pub ffn2: LinearParams<T>,
    pub posenc: Option<ConvParams<T>>,
}

impl<T: Element> ProjectorParams<T> {
    /// Deterministic initialisation: FFN weights uniform in
    /// `[-1/sqrt(fan_in), 1/sqrt(fan_in))` from a splitmix64 stream, zero
    /// biases, and an all-zero positional convolution.
    pub fn init(cfg: &ProjectorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = SplitMix64::new(seed);
        let mut layer = |c_in: usize, c_out: usize| -> Result<LinearParams<T>> {
            let weight = rng.tensor(&[c_in, c_out], 1.0 / (c_in as f64).sqrt())?;
            LinearParams::new(weight, Tensor::zeros([c_out])?)
        };
        let ffn1 = layer(cfg.c_in, cfg.c_hidden)?;
        let ffn2 = layer(cfg.c_hidden, cfg.c_out)?;
        let posenc = match cfg.kind {
            ProjectorKind::EtProj => Some(ConvParams::zeros(cfg.c_out)?),
            ProjectorKind::MlpProj => None,
        };
        Ok(Self { ffn1, ffn2, posenc })
    }

    pub fn check(&self, cfg: &ProjectorConfig) -> Result<()> {
        let ok = self.ffn1.c_in() == cfg.c_in
            && self.ffn1.c_out() == cfg.c_hidden
            && self.ffn2.c_in() == cfg.c_hidden
            && self.ffn2.c_out() == cfg.c_out;
        if !ok {
            return Err(Error::mismatch(
                "projector params",
                &[cfg.c_in, cfg.c_hidden, cfg.c_out],
                &[self.ffn1.c_in(), self.ffn1.c_out(), self.ffn2.c_out()],
            ));
        }
        match (cfg.kind, &self.posenc) {
            (ProjectorKind::EtProj, Some(p)) if p.channels() == cfg.c_out => Ok(()),
            (ProjectorKind::MlpProj, None) => Ok(()),
            _ => Err(Error::argument(format!(
                "positional-encoder parameters do not fit a {:?} projector",
                cfg.kind
            ))),
        }
    }
}

fn check_input<T: Element>(x: &Tensor<T>, cfg: &ProjectorConfig) -> Result<[usize; 3]> {
    let [b, n, c] = x.dims3("projector")?;
    if n != cfg.tokens_in() || c != cfg.c_in {
        return Err(Error::mismatch("projector", x.shape(), &[b, cfg.tokens_in(), cfg.c_in]));
    }
    Ok([b, n, c])
}

/// `tokens x channels` block of one batch item as a `channels x H x W` grid.
fn tokens_to_grid<T: Element>(tokens: &[T], n: usize, c: usize, grid: (usize, usize)) -> Result<Tensor<T>> {
    Tensor::from_parts(vec![n, c], tokens.to_vec())
        .transpose2()?
        .reshape([c, grid.0, grid.1])
}

fn grid_to_tokens<T: Element>(grid: Tensor<T>) -> Result<Vec<T>> {
    let [c, h, w] = grid.dims3("grid_to_tokens")?;
    Ok(grid.reshape([c, h * w])?.transpose2()?.into_data())
}

struct EtForward<T> {
    pooled: Vec<Tensor<T>>,
    out: Tensor<T>,
}

fn et_forward_cached<T: Element>(
    x: &Tensor<T>,
    cfg: &ProjectorConfig,
    params: &ProjectorParams<T>,
) -> Result<EtForward<T>> {
    let [b, n, _] = check_input(x, cfg)?;
    let posenc = params
        .posenc
        .as_ref()
        .ok_or_else(|| Error::argument("et_proj needs positional-encoder parameters"))?;
    let y = ffn_forward(x, &params.ffn1, &params.ffn2)?;
    let c = cfg.c_out;
    let (hr, wr) = cfg.grid_out;
    let mut pooled_all = Vec::with_capacity(b);
    let mut out = Vec::with_capacity(b * hr * wr * c);
    for item in y.data().chunks(n * c) {
        let grid = tokens_to_grid(item, n, c, cfg.grid_in)?;
        let pooled = adaptive_avg_pool2d(&grid, hr, wr)?;
        let conv = depthwise_conv3x3(&pooled, posenc)?;
        let summed = Tensor::from_parts(
            pooled.shape().to_vec(),
            pooled.data().iter().zip(conv.data()).map(|(&p, &q)| p + q).collect(),
        );
        out.extend(grid_to_tokens(summed)?);
        pooled_all.push(pooled);
    }
    Ok(EtForward {
        pooled: pooled_all,
        out: Tensor::from_parts(vec![b, hr * wr, c], out),
    })
}

/// ET-Proj forward: `B x N x C_in` to `B x (Hr*Wr) x C_out`.
pub fn et_proj_forward<T: Element>(
    x: &Tensor<T>,
    cfg: &ProjectorConfig,
    params: &ProjectorParams<T>,
) -> Result<Tensor<T>> {
    if cfg.kind != ProjectorKind::EtProj {
        return Err(Error::argument("et_proj_forward called with a non-ET config"));
    }
    Ok(et_forward_cached(x, cfg, params)?.out)
}

/// MLP-Proj forward: `B x N x C_in` to `B x N x C_out`.
pub fn mlp_proj_forward<T: Element>(
    x: &Tensor<T>,
    cfg: &ProjectorConfig,
    params: &ProjectorParams<T>,
) -> Result<Tensor<T>> {
    if cfg.kind != ProjectorKind::MlpProj {
        return Err(Error::argument("mlp_proj_forward called with a non-MLP config"));
    }
    check_input(x, cfg)?;
    ffn_forward(x, &params.ffn1, &params.ffn2)
}

/// Dispatches on `cfg.kind`.
pub fn project_tokens<T: Element>(
    x: &Tensor<T>,
    cfg: &ProjectorConfig,
    params: &ProjectorParams<T>,
) -> Result<Tensor<T>> {
    match cfg.kind {
        ProjectorKind::EtProj => et_proj_forward(x, cfg, params),
        ProjectorKind::MlpProj => mlp_proj_forward(x, cfg, params),
    }
}

/// Gradients of a projector with respect to its input and parameters.
#[derive(Debug, Clone)]
pub struct ProjectorGrad<T> {
    pub input: Tensor<T>,
    pub params: ProjectorParams<T>,
}

pub fn et_proj_backward<T: Element>(
    x: &Tensor<T>,
    cfg: &ProjectorConfig,
    params: &ProjectorParams<T>,
    upstream: &Tensor<T>,
) -> Result<ProjectorGrad<T>> {
    let fwd = et_forward_cached(x, cfg, params)?;
    if upstream.shape() != fwd.out.shape() {
        return Err(Error::mismatch("et_proj_backward", fwd.out.shape(), upstream.shape()));
    }
    let posenc = params.posenc.as_ref().expect("checked by forward");
    let (c, r, n) = (cfg.c_out, cfg.tokens_per_frame(), cfg.tokens_in());
    let mut dkernel = vec![T::zero(); c * 9];
    let mut dbias = vec![T::zero(); c];
    let mut dy = Vec::with_capacity(x.shape()[0] * n * c);
    for (pooled, g) in fwd.pooled.iter().zip(upstream.data().chunks(r * c)) {
        let dsum = tokens_to_grid(g, r, c, cfg.grid_out)?;
        let cg = conv_grad(pooled, posenc, &dsum)?;
        for (a, &v) in dkernel.iter_mut().zip(cg.params.kernel.data()) {
            *a = *a + v;
        }
        for (a, &v) in dbias.iter_mut().zip(cg.params.bias.data()) {
            *a = *a + v;
        }
        let dpooled = Tensor::from_parts(
            dsum.shape().to_vec(),
            dsum.data().iter().zip(cg.input.data()).map(|(&a, &b)| a + b).collect(),
        );
        let dgrid = pool_grad(&[c, cfg.grid_in.0, cfg.grid_in.1], &dpooled)?;
        dy.extend(grid_to_tokens(dgrid)?);
    }
    let dy = Tensor::from_parts(vec![x.shape()[0], n, c], dy);
    let f = ffn_grad(x, &params.ffn1, &params.ffn2, &dy)?;
    Ok(ProjectorGrad {
        input: f.input,
        params: ProjectorParams {
            ffn1: f.first,
            ffn2: f.second,
            posenc: Some(ConvParams {
                kernel: Tensor::from_parts(vec![c, 3, 3], dkernel),
                bias: Tensor::from_parts(vec![c], dbias),
            }),
        },
    })
}

pub fn mlp_proj_backward<T: Element>(
    x: &Tensor<T>,
    cfg: &ProjectorConfig,
    params: &ProjectorParams<T>,
    upstream: &Tensor<T>,
) -> Result<ProjectorGrad<T>> {
    check_input(x, cfg)?;
    let f = ffn_grad(x, &params.ffn1, &params.ffn2, upstream)?;
    Ok(ProjectorGrad {
        input: f.input,
        params: ProjectorParams {
            ffn1: f.first,
            ffn2: f.second,
            posenc: None,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Image,
    Video,
}

/// A contiguous run of tokens produced by one branch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub branch: Branch,
    pub frames: usize,
    pub tokens: usize,
}

/// Projected visual tokens, `1 x M x C_out`, with the branch layout.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub tokens: Tensor<f32>,
    pub segments: Vec<Segment>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.shape()[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self) -> usize {
        self.tokens.shape()[2]
    }

    pub fn branch_tokens(&self, branch: Branch) -> usize {
        self.segments
            .iter()
            .filter(|s| s.branch == branch)
            .map(|s| s.tokens)
            .sum()
    }

    /// Concatenates sequences along the token axis, in the given order.
    pub fn concat(parts: Vec<TokenSequence>) -> Result<TokenSequence> {
        let Some(width) = parts.first().map(TokenSequence::width) else {
            return Err(Error::argument("nothing to fuse: no branch is active"));
        };
        let mut data = Vec::new();
        let mut segments = Vec::new();
        let mut total = 0;
        for p in parts {
            if p.width() != width {
                return Err(Error::mismatch("fuse", &[width], &[p.width()]));
            }
            total += p.len();
            segments.extend(p.segments);
            data.extend(p.tokens.into_data());
        }
        Ok(TokenSequence {
            tokens: Tensor::from_parts(vec![1, total, width], data),
            segments,
        })
    }

    /// 64-bit FNV-1a digest of the little-endian token bytes.
    pub fn digest(&self) -> u64 {
        use std::hash::Hasher;
        let mut h = fnv::FnvHasher::default();
        for v in self.tokens.data() {
            h.write(&v.to_le_bytes());
        }
        h.finish()
    }
}

/// Features that can be projected as one branch.
pub trait BranchFeatures {
    const BRANCH: Branch;
    fn features(&self) -> &Tensor<f32>;
}

impl BranchFeatures for FrameFeatures {
    const BRANCH: Branch = Branch::Image;
    fn features(&self) -> &Tensor<f32> {
        self.tensor()
    }
}

impl BranchFeatures for VideoFeatures {
    const BRANCH: Branch = Branch::Video;
    fn features(&self) -> &Tensor<f32> {
        self.tensor()
    }
}

/// Projects every frame independently and concatenates the per-frame token
/// blocks in temporal order. Frames run in parallel when a rayon pool is
/// available; assembly order is fixed.
pub fn project_branch<F: BranchFeatures>(
    features: &F,
    cfg: &ProjectorConfig,
    params: &ProjectorParams<f32>,
) -> Result<TokenSequence> {
    cfg.validate()?;
    params.check(cfg)?;
    let t = features.features();
    let &[frames, h, w, d] = t.shape() else {
        return Err(Error::mismatch("project_branch", t.shape(), &[0, 0, 0, 0]));
    };
    if (h, w) != cfg.grid_in || d != cfg.c_in {
        return Err(Error::mismatch(
            "project_branch",
            t.shape(),
            &[frames, cfg.grid_in.0, cfg.grid_in.1, cfg.c_in],
        ));
    }
    let per_frame = h * w * d;
    let blocks = mac::par_map_counted(frames, |i| {
        let x = Tensor::from_parts(vec![1, h * w, d], t.data()[i * per_frame..(i + 1) * per_frame].to_vec());
        project_tokens(&x, cfg, params)
    });
    let mut data = Vec::with_capacity(frames * cfg.tokens_per_frame() * cfg.c_out);
    for block in blocks {
        data.extend(block?.into_data());
    }
    let m = frames * cfg.tokens_per_frame();
    Ok(TokenSequence {
        tokens: Tensor::from_parts(vec![1, m, cfg.c_out], data),
        segments: vec![Segment {
            branch: F::BRANCH,
            frames,
            tokens: m,
        }],
    })
}
