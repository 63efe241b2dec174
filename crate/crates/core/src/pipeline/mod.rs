//! End-to-end token pipeline:
//! sample -> encode frames -> score -> select -> encode key-frames ->
//! project both branches -> fuse (image tokens first, then video tokens).

mod accounting;
mod config;
mod stages;

pub use accounting::{mac_report, token_budget, MacReport, TokenBudget};
pub use config::{BranchMode, FrameSelection, PipelineConfig, CONFIG_SCHEMA_VERSION};
pub use stages::{stage_plan, Module, StageHyperparameters, StagePlan};

use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{synth_image_features, synth_video_features, FrameFeatures};
use crate::format::read_features;
use crate::numerics::mac;
use crate::projector::{project_branch, ProjectorParams, TokenSequence};
use crate::rng::splitmix64;
use crate::selection::{
    frame_scores, top_k_frames, uniform_sample_indices, DenseAttentionCap, FrameScore, KeyFrameSet,
};

/// Where image-encoder features come from.
#[derive(Debug, Clone, Default)]
pub enum FeatureSource {
    /// Synthesised from the config seed.
    #[default]
    Synthetic,
    /// Externally computed `T x H x W x D` features.
    Precomputed(FrameFeatures),
}

impl FeatureSource {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::Precomputed(FrameFeatures::new(read_features(path)?.into_f32())?))
    }
}

/// Wall-clock time per stage, in milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub sample_ms: f64,
    pub image_encode_ms: f64,
    pub scoring_ms: f64,
    pub selection_ms: f64,
    pub video_encode_ms: f64,
    pub image_projection_ms: f64,
    pub video_projection_ms: f64,
    pub fusion_ms: f64,
}

impl StageTimings {
    pub const STAGES: [&'static str; 8] = [
        "sample",
        "image_encode",
        "scoring",
        "selection",
        "video_encode",
        "image_projection",
        "video_projection",
        "fusion",
    ];

    pub fn as_array(&self) -> [f64; 8] {
        [
            self.sample_ms,
            self.image_encode_ms,
            self.scoring_ms,
            self.selection_ms,
            self.video_encode_ms,
            self.image_projection_ms,
            self.video_projection_ms,
            self.fusion_ms,
        ]
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    /// Source-video frame index of every sampled frame.
    pub sampled_frames: Vec<usize>,
    pub scores: Option<FrameScore>,
    /// Positions within the sampled frames that fed the video encoder.
    pub keyframes: Option<KeyFrameSet>,
    pub tokens: TokenSequence,
    pub budget: TokenBudget,
    /// Closed-form counts from [`mac_report`].
    pub macs: MacReport,
    /// Counts observed by the kernel instrumentation during this run.
    pub measured_macs: MacReport,
    pub timings: StageTimings,
}

impl PipelineOutput {
    pub fn digest(&self) -> u64 {
        self.tokens.digest()
    }
}

/// A configured pipeline with its projector weights.
#[derive(Debug, Clone)]
pub struct Pipeline {
    cfg: PipelineConfig,
    image_params: Option<ProjectorParams<f32>>,
    video_params: Option<ProjectorParams<f32>>,
    dense_cap: DenseAttentionCap,
}

fn timed<R>(slot: &mut f64, f: impl FnOnce() -> R) -> R {
    let start = Instant::now();
    let out = f();
    *slot = ms(start.elapsed());
    out
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

impl Pipeline {
    /// Validates `cfg` and initialises both projectors from its seed. The
    /// dense-attention cap is read from the environment.
    pub fn new(cfg: PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let image_params = cfg
            .image_active()
            .then(|| ProjectorParams::init(&cfg.image_projector(), splitmix64(cfg.seed ^ 1)))
            .transpose()?;
        let video_params = cfg
            .video_active()
            .then(|| ProjectorParams::init(&cfg.video_projector(), splitmix64(cfg.seed ^ 2)))
            .transpose()?;
        Ok(Self {
            cfg,
            image_params,
            video_params,
            dense_cap: DenseAttentionCap::from_env()?,
        })
    }

    pub fn with_dense_cap(mut self, cap: DenseAttentionCap) -> Self {
        self.dense_cap = cap;
        self
    }

    pub fn with_image_params(mut self, params: ProjectorParams<f32>) -> Result<Self> {
        params.check(&self.cfg.image_projector())?;
        self.image_params = Some(params);
        Ok(self)
    }

    pub fn with_video_params(mut self, params: ProjectorParams<f32>) -> Result<Self> {
        params.check(&self.cfg.video_projector())?;
        self.video_params = Some(params);
        Ok(self)
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    fn image_features(&self, source: &FeatureSource) -> Result<FrameFeatures> {
        let cfg = &self.cfg;
        match source {
            FeatureSource::Synthetic => synth_image_features(cfg.seed, cfg.frames, &cfg.image_encoder),
            FeatureSource::Precomputed(f) => {
                let spec = &cfg.image_encoder;
                let expected = [cfg.frames, spec.grid.0, spec.grid.1, spec.depth];
                if f.tensor().shape() != expected {
                    return Err(Error::mismatch("image features", f.tensor().shape(), &expected));
                }
                Ok(f.clone())
            }
        }
    }

    pub fn run(&self, source: &FeatureSource) -> Result<PipelineOutput> {
        let cfg = &self.cfg;
        let mut t = StageTimings::default();
        let mut measured = [0u64; 3];

        let sampled_frames = timed(&mut t.sample_ms, || {
            uniform_sample_indices(cfg.source_frames(), cfg.frames)
        })?;

        let need_image = cfg.image_active() || cfg.scoring_active();
        let image = timed(&mut t.image_encode_ms, || {
            need_image.then(|| self.image_features(source)).transpose()
        })?;

        let scores = timed(&mut t.scoring_ms, || -> Result<_> {
            if !cfg.scoring_active() {
                return Ok(None);
            }
            let f = image.as_ref().expect("encoded when scoring");
            let (s, n) = mac::measure(|| frame_scores(f, cfg.scoring, self.dense_cap));
            measured[0] = n;
            s.map(Some)
        })?;

        let keyframes = timed(&mut t.selection_ms, || -> Result<_> {
            if !cfg.video_active() {
                return Ok(None);
            }
            match &scores {
                Some(s) => top_k_frames(s, cfg.video_frames()).map(Some),
                None => Ok(Some(KeyFrameSet::all(cfg.frames))),
            }
        })?;

        let video = timed(&mut t.video_encode_ms, || {
            keyframes
                .as_ref()
                .map(|k| synth_video_features(cfg.seed, &k.indices, &cfg.video_encoder))
                .transpose()
        })?;

        let image_tokens = timed(&mut t.image_projection_ms, || -> Result<_> {
            let (Some(params), true) = (&self.image_params, cfg.image_active()) else {
                return Ok(None);
            };
            let f = image.as_ref().expect("encoded for the image branch");
            let (seq, n) = mac::measure(|| project_branch(f, &cfg.image_projector(), params));
            measured[1] = n;
            seq.map(Some)
        })?;

        let video_tokens = timed(&mut t.video_projection_ms, || -> Result<_> {
            let (Some(params), Some(v)) = (&self.video_params, &video) else {
                return Ok(None);
            };
            let (seq, n) = mac::measure(|| project_branch(v, &cfg.video_projector(), params));
            measured[2] = n;
            seq.map(Some)
        })?;

        let tokens = timed(&mut t.fusion_ms, || {
            TokenSequence::concat(image_tokens.into_iter().chain(video_tokens).collect())
        })?;

        let budget = token_budget(cfg)?;
        debug_assert_eq!(budget.total, tokens.len());
        Ok(PipelineOutput {
            sampled_frames,
            scores,
            keyframes,
            tokens,
            budget,
            macs: mac_report(cfg)?,
            measured_macs: MacReport::from_parts(
                measured[0],
                measured[1],
                measured[2],
                0,
                cfg.scoring_active().then_some(cfg.scoring),
            ),
            timings: t,
        })
    }
}

/// Builds a [`Pipeline`] for `cfg` and runs it once.
pub fn run_pipeline(cfg: &PipelineConfig, source: &FeatureSource) -> Result<PipelineOutput> {
    Pipeline::new(cfg.clone())?.run(source)
}

/// Runs `f` inside a dedicated rayon pool of `threads` workers.
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    if threads == 0 {
        return Err(Error::argument("thread count must be at least 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::argument(format!("cannot build thread pool: {e}")))?;
    Ok(pool.install(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::EncoderSpec;
    use crate::projector::{Branch, ProjectorKind};

    fn small() -> PipelineConfig {
        PipelineConfig {
            frames: 6,
            image_encoder: EncoderSpec::new("img", (4, 4), 6),
            video_encoder: EncoderSpec::new("vid", (4, 4), 5),
            image_grid_out: (3, 3),
            video_grid_out: (2, 2),
            embed_width: 8,
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn dual_run_layout() {
        let out = run_pipeline(&small(), &FeatureSource::Synthetic).unwrap();
        assert_eq!(out.tokens.len(), 6 * 9 + 3 * 4);
        assert_eq!(out.tokens.segments[0].branch, Branch::Image);
        assert_eq!(out.tokens.segments[1].branch, Branch::Video);
        assert_eq!(out.keyframes.as_ref().unwrap().len(), 3);
        assert_eq!(out.budget.total, out.tokens.len());
        assert_eq!(out.measured_macs, out.macs);
    }

    #[test]
    fn branch_modes_and_projectors_all_run() {
        for branch_mode in [BranchMode::Dual, BranchMode::ImageOnly, BranchMode::VideoOnly] {
            for projector_kind in [ProjectorKind::EtProj, ProjectorKind::MlpProj] {
                for frame_selection in [FrameSelection::AttentionBased, FrameSelection::None] {
                    let cfg = PipelineConfig {
                        branch_mode,
                        projector_kind,
                        frame_selection,
                        ..small()
                    };
                    let out = run_pipeline(&cfg, &FeatureSource::Synthetic).unwrap();
                    assert_eq!(out.tokens.len(), token_budget(&cfg).unwrap().total);
                    assert_eq!(out.measured_macs, out.macs, "{cfg:?}");
                }
            }
        }
    }

    #[test]
    fn precomputed_features_must_match_config() {
        let cfg = small();
        let f = synth_image_features(cfg.seed, cfg.frames, &cfg.image_encoder).unwrap();
        let a = run_pipeline(&cfg, &FeatureSource::Precomputed(f)).unwrap();
        let b = run_pipeline(&cfg, &FeatureSource::Synthetic).unwrap();
        assert_eq!(a.digest(), b.digest());

        let wrong = synth_image_features(0, 5, &cfg.image_encoder).unwrap();
        assert!(run_pipeline(&cfg, &FeatureSource::Precomputed(wrong)).is_err());
    }

    #[test]
    fn dense_and_streaming_pick_same_frames() {
        let dense = PipelineConfig {
            scoring: crate::selection::ScoringPath::Dense,
            ..small()
        };
        let a = run_pipeline(&dense, &FeatureSource::Synthetic).unwrap();
        let b = run_pipeline(&small(), &FeatureSource::Synthetic).unwrap();
        assert_eq!(a.keyframes, b.keyframes);
    }

    #[test]
    fn dense_cap_is_enforced() {
        let cfg = PipelineConfig {
            scoring: crate::selection::ScoringPath::Dense,
            ..small()
        };
        let p = Pipeline::new(cfg)
            .unwrap()
            .with_dense_cap(DenseAttentionCap { bytes: 16 });
        assert!(matches!(
            p.run(&FeatureSource::Synthetic).unwrap_err(),
            Error::Capacity { .. }
        ));
    }
}
