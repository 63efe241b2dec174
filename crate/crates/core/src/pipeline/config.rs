use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::EncoderSpec;
use crate::projector::{ProjectorConfig, ProjectorKind};
use crate::selection::ScoringPath;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// How the video branch picks its frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameSelection {
    #[default]
    AttentionBased,
    /// The video encoder sees every sampled frame.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchMode {
    #[default]
    Dual,
    ImageOnly,
    VideoOnly,
}

/// Full description of one pipeline run. Serialises to a JSON object with
/// these field names; omitted fields take their defaults.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema_version: u32,
    /// Frames sampled uniformly from the source video (`T`).
    pub frames: usize,
    /// Key-frames for the video branch (`K`); `None` means `T / 2`.
    pub keyframes: Option<usize>,
    /// Length of the source video at 1 FPS; `None` means `frames`.
    pub source_frames: Option<usize>,
    pub image_encoder: EncoderSpec,
    pub video_encoder: EncoderSpec,
    /// Pooled ET-Proj grid of the image branch.
    pub image_grid_out: (usize, usize),
    /// Pooled ET-Proj grid of the video branch.
    pub video_grid_out: (usize, usize),
    /// Language-model embedding width, the projectors' output width.
    pub embed_width: usize,
    /// Projector FFN hidden width; `None` means `embed_width`.
    pub hidden_width: Option<usize>,
    pub projector_kind: ProjectorKind,
    pub frame_selection: FrameSelection,
    pub branch_mode: BranchMode,
    pub scoring: ScoringPath,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            frames: 16,
            keyframes: None,
            source_frames: None,
            image_encoder: EncoderSpec::clip_b16(),
            video_encoder: EncoderSpec::videomamba_m(),
            image_grid_out: (12, 12),
            video_grid_out: (7, 7),
            // Qwen2.5-0.5B hidden size.
            embed_width: 896,
            hidden_width: None,
            projector_kind: ProjectorKind::EtProj,
            frame_selection: FrameSelection::AttentionBased,
            branch_mode: BranchMode::Dual,
            scoring: ScoringPath::Streaming,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    /// Single-encoder MLP baseline: 32 frames, every 14x14 patch kept.
    pub fn mlp_baseline() -> Self {
        Self {
            frames: 32,
            projector_kind: ProjectorKind::MlpProj,
            frame_selection: FrameSelection::None,
            branch_mode: BranchMode::ImageOnly,
            ..Self::default()
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn image_active(&self) -> bool {
        self.branch_mode != BranchMode::VideoOnly
    }

    pub fn video_active(&self) -> bool {
        self.branch_mode != BranchMode::ImageOnly
    }

    /// Scoring only runs when its result feeds the video branch.
    pub fn scoring_active(&self) -> bool {
        self.video_active() && self.frame_selection == FrameSelection::AttentionBased
    }

    /// Frames the video encoder consumes: `K`, or `T` without selection.
    pub fn video_frames(&self) -> usize {
        match self.frame_selection {
            FrameSelection::None => self.frames,
            FrameSelection::AttentionBased => self.keyframes.unwrap_or((self.frames / 2).max(1)),
        }
    }

    pub fn source_frames(&self) -> usize {
        self.source_frames.unwrap_or(self.frames)
    }

    fn projector(&self, spec: &EncoderSpec, grid_out: (usize, usize)) -> ProjectorConfig {
        let cfg = match self.projector_kind {
            ProjectorKind::EtProj => ProjectorConfig::et(spec.depth, self.embed_width, spec.grid, grid_out),
            ProjectorKind::MlpProj => ProjectorConfig::mlp(spec.depth, self.embed_width, spec.grid),
        };
        cfg.with_hidden(self.hidden_width.unwrap_or(self.embed_width))
    }

    pub fn image_projector(&self) -> ProjectorConfig {
        self.projector(&self.image_encoder, self.image_grid_out)
    }

    pub fn video_projector(&self) -> ProjectorConfig {
        self.projector(&self.video_encoder, self.video_grid_out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::argument(format!(
                "unsupported config schema_version {}",
                self.schema_version
            )));
        }
        if self.frames == 0 {
            return Err(Error::argument("frames must be at least 1"));
        }
        if let Some(k) = self.keyframes {
            if k == 0 || k > self.frames {
                return Err(Error::argument(format!(
                    "keyframes {k} must be in 1..={} (frames)",
                    self.frames
                )));
            }
        }
        if self.source_frames == Some(0) {
            return Err(Error::argument("source_frames must be at least 1"));
        }
        if self.embed_width == 0 || self.hidden_width == Some(0) {
            return Err(Error::argument("projector widths must be positive"));
        }
        self.image_encoder.validate()?;
        self.video_encoder.validate()?;
        if self.image_active() {
            self.image_projector().validate()?;
        }
        if self.video_active() {
            self.video_projector().validate()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_keyframes_are_half_the_frames() {
        let cfg = PipelineConfig::default();
        assert_eq!((cfg.frames, cfg.video_frames()), (16, 8));
        let one = PipelineConfig {
            frames: 1,
            ..PipelineConfig::default()
        };
        assert_eq!(one.video_frames(), 1);
    }

    #[test]
    fn json_roundtrip_and_partial_documents() {
        let cfg = PipelineConfig {
            keyframes: Some(4),
            branch_mode: BranchMode::VideoOnly,
            ..PipelineConfig::default()
        };
        assert_eq!(PipelineConfig::from_json(&cfg.to_json().unwrap()).unwrap(), cfg);

        let partial = PipelineConfig::from_json(r#"{"frames": 8, "projector_kind": "mlp_proj"}"#).unwrap();
        assert_eq!(partial.frames, 8);
        assert_eq!(partial.projector_kind, ProjectorKind::MlpProj);
        assert_eq!(partial.image_grid_out, (12, 12));

        assert!(PipelineConfig::from_json(r#"{"frame": 8}"#).is_err());
    }

    #[test]
    fn rejects_keyframes_above_frames() {
        let cfg = PipelineConfig {
            keyframes: Some(17),
            ..PipelineConfig::default()
        };
        assert!(matches!(cfg.validate().unwrap_err(), Error::Argument(_)));
    }
}
