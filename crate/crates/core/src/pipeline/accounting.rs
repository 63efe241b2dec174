//! Closed-form token and multiply counts. No tensor work happens here.

use serde::{Deserialize, Serialize};

use super::PipelineConfig;
use crate::error::Result;
use crate::selection::ScoringPath;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenBudget {
    pub image_tokens: usize,
    pub video_tokens: usize,
    pub total: usize,
}

/// Multiplications per pipeline stage. Adds are free; see
/// [`crate::numerics::mac`] for what counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MacReport {
    /// Attention logits, `S^2 * D`, for either scoring path.
    pub scoring: u64,
    pub image_projection: u64,
    pub video_projection: u64,
    /// Concatenation only.
    pub fusion: u64,
    pub total: u64,
    /// Which scorer the `scoring` count refers to, when scoring runs.
    pub scoring_path: Option<ScoringPath>,
}

impl MacReport {
    pub(crate) fn from_parts(
        scoring: u64,
        image_projection: u64,
        video_projection: u64,
        fusion: u64,
        scoring_path: Option<ScoringPath>,
    ) -> Self {
        Self {
            scoring,
            image_projection,
            video_projection,
            fusion,
            total: scoring + image_projection + video_projection + fusion,
            scoring_path,
        }
    }
}

pub fn token_budget(cfg: &PipelineConfig) -> Result<TokenBudget> {
    cfg.validate()?;
    let image_tokens = if cfg.image_active() {
        cfg.frames * cfg.image_projector().tokens_per_frame()
    } else {
        0
    };
    let video_tokens = if cfg.video_active() {
        cfg.video_frames() * cfg.video_projector().tokens_per_frame()
    } else {
        0
    };
    Ok(TokenBudget {
        image_tokens,
        video_tokens,
        total: image_tokens + video_tokens,
    })
}

pub fn mac_report(cfg: &PipelineConfig) -> Result<MacReport> {
    cfg.validate()?;
    let (scoring, path) = if cfg.scoring_active() {
        let s = (cfg.frames * cfg.image_encoder.tokens_per_frame()) as u64;
        (s * s * cfg.image_encoder.depth as u64, Some(cfg.scoring))
    } else {
        (0, None)
    };
    let image = if cfg.image_active() {
        cfg.frames as u64 * cfg.image_projector().macs_per_frame()
    } else {
        0
    };
    let video = if cfg.video_active() {
        cfg.video_frames() as u64 * cfg.video_projector().macs_per_frame()
    } else {
        0
    };
    Ok(MacReport::from_parts(scoring, image, video, 0, path))
}
