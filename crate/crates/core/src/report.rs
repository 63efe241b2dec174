//! JSON reports emitted by the command-line tool.
//!
//! Every report carries `schema_version`. Digest-bearing fields never
//! contain wall-clock values, so two runs of the same config produce the
//! same `digest`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{FeatureSource, MacReport, Pipeline, PipelineConfig, PipelineOutput, StageTimings, TokenBudget};
use crate::selection::FrameScore;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Renders a digest as 16 lowercase hex digits.
pub fn digest_hex(d: u64) -> String {
    format!("{d:016x}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenShape {
    pub count: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunReport {
    pub schema_version: u32,
    pub config: PipelineConfig,
    pub sampled_frames: Vec<usize>,
    pub scores: Option<FrameScore>,
    pub keyframes: Option<Vec<usize>>,
    pub tokens: TokenShape,
    pub budget: TokenBudget,
    pub macs: MacReport,
    pub measured_macs: MacReport,
    pub timings_ms: StageTimings,
    pub digest: String,
}

impl RunReport {
    pub fn new(cfg: &PipelineConfig, out: &PipelineOutput) -> Self {
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            config: cfg.clone(),
            sampled_frames: out.sampled_frames.clone(),
            scores: out.scores.clone(),
            keyframes: out.keyframes.as_ref().map(|k| k.indices.clone()),
            tokens: TokenShape {
                count: out.tokens.len(),
                width: out.tokens.width(),
            },
            budget: out.budget,
            macs: out.macs,
            measured_macs: out.measured_macs,
            timings_ms: out.timings,
            digest: digest_hex(out.digest()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageBench {
    pub stage: String,
    pub samples: usize,
    pub median_ms: f64,
    pub min_ms: f64,
    /// Multiplications per run of this stage (0 for stages without
    /// contractions).
    pub macs: u64,
    /// `macs` divided by the median time; 0 when either is 0.
    pub macs_per_sec: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchReport {
    pub schema_version: u32,
    pub config: PipelineConfig,
    pub repeat: usize,
    pub threads: usize,
    pub budget: TokenBudget,
    pub macs: MacReport,
    pub stages: Vec<StageBench>,
    pub total_median_ms: f64,
    pub digest: String,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Runs the pipeline `repeat` times and summarises per-stage timings.
/// Fails if two repetitions disagree on the output digest.
pub fn bench(pipeline: &Pipeline, source: &FeatureSource, repeat: usize) -> Result<BenchReport> {
    if repeat == 0 {
        return Err(Error::argument("repeat must be at least 1"));
    }
    let mut samples: Vec<[f64; 8]> = Vec::with_capacity(repeat);
    let mut totals = Vec::with_capacity(repeat);
    let mut last: Option<PipelineOutput> = None;
    for _ in 0..repeat {
        let out = pipeline.run(source)?;
        if let Some(prev) = &last {
            if prev.digest() != out.digest() {
                return Err(Error::argument("pipeline output changed between repetitions"));
            }
        }
        let row = out.timings.as_array();
        totals.push(row.iter().sum::<f64>());
        samples.push(row);
        last = Some(out);
    }
    let out = last.expect("repeat >= 1");
    let stage_macs = [
        0,
        0,
        out.macs.scoring,
        0,
        0,
        out.macs.image_projection,
        out.macs.video_projection,
        out.macs.fusion,
    ];
    let stages = StageTimings::STAGES
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let mut xs: Vec<f64> = samples.iter().map(|r| r[i]).collect();
            xs.sort_by(f64::total_cmp);
            let med = median(&xs);
            let macs = stage_macs[i];
            StageBench {
                stage: name.to_string(),
                samples: xs.len(),
                median_ms: med,
                min_ms: xs[0],
                macs,
                macs_per_sec: if med > 0.0 && macs > 0 {
                    macs as f64 / (med * 1e-3)
                } else {
                    0.0
                },
            }
        })
        .collect();
    totals.sort_by(f64::total_cmp);
    Ok(BenchReport {
        schema_version: REPORT_SCHEMA_VERSION,
        config: pipeline.config().clone(),
        repeat,
        threads: rayon::current_num_threads(),
        budget: out.budget,
        macs: out.macs,
        stages,
        total_median_ms: median(&totals),
        digest: digest_hex(out.digest()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[1.0, 2.0, 10.0]), 2.0);
        assert_eq!(median(&[1.0, 3.0]), 2.0);
        assert_eq!(digest_hex(255), "00000000000000ff");
    }
}
