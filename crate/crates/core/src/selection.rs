//! Frame sampling, attention-based frame scoring and top-K key-frame
//! selection.
//!
//! All `S = T*H*W` image tokens attend to each other through
//! `softmax(F F^T / sqrt(D))`. A frame's score is the attention mass its
//! tokens receive, i.e. the column sums of the attention matrix restricted to
//! that frame's columns. Since every row sums to one, the scores add up to
//! `S`.
//!
//! Scoring runs in `f64` regardless of the feature dtype. The dense path
//! materialises the `S x S` matrix; the streaming path walks one frame's
//! rows at a time and only keeps per-frame partial column sums.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FrameFeatures;
use crate::numerics::{mac, matmul, matmul_into, softmax_in_place, softmax_rows};
use crate::tensor::Tensor;

/// Environment variable bounding dense attention materialisation, in MiB.
pub const MEM_CAP_ENV: &str = "FRAMESCOPE_MEM_CAP_MB";
pub const DEFAULT_MEM_CAP_MB: u64 = 512;

/// `floor(i * total / frames)` for `i in 0..frames`. When the source is
/// shorter than `frames`, indices repeat.
pub fn uniform_sample_indices(total_frames: usize, frames: usize) -> Result<Vec<usize>> {
    if total_frames == 0 || frames == 0 {
        return Err(Error::argument(format!(
            "sampling needs positive counts, got total={total_frames} frames={frames}"
        )));
    }
    Ok((0..frames)
        .map(|i| ((i as u128 * total_frames as u128) / frames as u128) as usize)
        .collect())
}

/// Upper bound on the bytes the dense scorer may allocate for its `S x S`
/// attention matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenseAttentionCap {
    pub bytes: u64,
}

impl DenseAttentionCap {
    pub fn from_mb(mb: u64) -> Self {
        Self {
            bytes: mb.saturating_mul(1 << 20),
        }
    }

    /// Reads [`MEM_CAP_ENV`], falling back to [`DEFAULT_MEM_CAP_MB`].
    pub fn from_env() -> Result<Self> {
        match std::env::var(MEM_CAP_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map(Self::from_mb)
                .map_err(|_| Error::argument(format!("{MEM_CAP_ENV} must be an integer, got {v:?}"))),
            Err(_) => Ok(Self::from_mb(DEFAULT_MEM_CAP_MB)),
        }
    }

    pub fn unlimited() -> Self {
        Self { bytes: u64::MAX }
    }
}

impl Default for DenseAttentionCap {
    fn default() -> Self {
        Self::from_mb(DEFAULT_MEM_CAP_MB)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoringPath {
    Dense,
    #[default]
    Streaming,
}

/// Attention mass received by each frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameScore {
    pub scores: Vec<f64>,
}

impl FrameScore {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.scores.iter().sum()
    }
}

/// Sorted, distinct frame indices chosen for the video encoder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyFrameSet {
    pub indices: Vec<usize>,
}

impl KeyFrameSet {
    pub fn new(indices: Vec<usize>, frames: usize) -> Result<Self> {
        if indices.is_empty() || indices.windows(2).any(|w| w[0] >= w[1]) || indices.iter().any(|&i| i >= frames) {
            return Err(Error::argument(format!(
                "key-frames must be strictly increasing indices below {frames}, got {indices:?}"
            )));
        }
        Ok(Self { indices })
    }

    /// Every frame, in order.
    pub fn all(frames: usize) -> Self {
        Self {
            indices: (0..frames).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

fn flatten_tokens(f: &FrameFeatures) -> Tensor<f64> {
    let s = f.frames() * f.tokens_per_frame();
    f.tensor()
        .cast::<f64>()
        .reshape([s, f.depth()])
        .expect("rank-4 features flatten")
}

/// Dense `S x S` attention matrix `softmax(F F^T / sqrt(D))`.
pub fn spatial_attention(f: &FrameFeatures, cap: DenseAttentionCap) -> Result<Tensor<f64>> {
    let s = (f.frames() * f.tokens_per_frame()) as u64;
    let required = s.saturating_mul(s).saturating_mul(std::mem::size_of::<f64>() as u64);
    if required > cap.bytes {
        return Err(Error::Capacity {
            required,
            cap: cap.bytes,
        });
    }
    let tokens = flatten_tokens(f);
    let scale = (f.depth() as f64).sqrt();
    let logits = matmul(&tokens, &tokens.transpose2()?)?.map(|v| v / scale);
    softmax_rows(&logits)
}

fn per_frame_sums(column_sums: &[f64], frames: usize) -> FrameScore {
    let per = column_sums.len() / frames;
    FrameScore {
        scores: column_sums.chunks(per).map(|c| c.iter().sum()).collect(),
    }
}

/// Frame scores via the materialised attention matrix.
pub fn frame_scores_dense(f: &FrameFeatures, cap: DenseAttentionCap) -> Result<FrameScore> {
    let sa = spatial_attention(f, cap)?;
    let s = sa.shape()[0];
    let mut cols = vec![0.0f64; s];
    for row in sa.data().chunks(s) {
        for (c, &v) in cols.iter_mut().zip(row) {
            *c += v;
        }
    }
    Ok(per_frame_sums(&cols, f.frames()))
}

/// Frame scores without materialising the attention matrix. Each frame's
/// rows are processed independently (in parallel when a rayon pool is
/// available) and their partial column sums are combined in frame order, so
/// the result does not depend on the thread count.
pub fn frame_scores_streaming(f: &FrameFeatures) -> FrameScore {
    let tokens = flatten_tokens(f);
    let keys = tokens.transpose2().expect("rank-2");
    let (s, d) = (tokens.shape()[0], tokens.shape()[1]);
    let per = f.tokens_per_frame();
    let scale = (d as f64).sqrt();

    let partials = mac::par_map_counted(f.frames(), |frame| {
        let mut acc = vec![0.0f64; s];
        let mut row = vec![0.0f64; s];
        for i in frame * per..(frame + 1) * per {
            row.fill(0.0);
            matmul_into(&tokens.data()[i * d..(i + 1) * d], keys.data(), &mut row, 1, d, s);
            for v in row.iter_mut() {
                *v /= scale;
            }
            softmax_in_place(&mut row);
            for (a, &v) in acc.iter_mut().zip(&row) {
                *a += v;
            }
        }
        acc
    });

    let mut cols = vec![0.0f64; s];
    for partial in &partials {
        for (c, &v) in cols.iter_mut().zip(partial) {
            *c += v;
        }
    }
    per_frame_sums(&cols, f.frames())
}

pub fn frame_scores(f: &FrameFeatures, path: ScoringPath, cap: DenseAttentionCap) -> Result<FrameScore> {
    match path {
        ScoringPath::Dense => frame_scores_dense(f, cap),
        ScoringPath::Streaming => Ok(frame_scores_streaming(f)),
    }
}

/// The `k` highest-scoring frames, ties going to the lower index, returned
/// in temporal order.
pub fn top_k_frames(score: &FrameScore, k: usize) -> Result<KeyFrameSet> {
    let t = score.len();
    if k == 0 || k > t {
        return Err(Error::argument(format!("key-frame count {k} must be in 1..={t}")));
    }
    let mut order: Vec<usize> = (0..t).collect();
    // Adding 0.0 folds -0.0 into +0.0 so equal scores tie.
    let key = |i: usize| score.scores[i] + 0.0;
    order.sort_unstable_by(|&a, &b| key(b).total_cmp(&key(a)).then(a.cmp(&b)));
    let mut chosen = order[..k].to_vec();
    chosen.sort_unstable();
    Ok(KeyFrameSet { indices: chosen })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{synth_image_features, EncoderSpec};

    fn features(shape: [usize; 4], data: Vec<f32>) -> FrameFeatures {
        FrameFeatures::new(Tensor::new(shape, data).unwrap()).unwrap()
    }

    #[test]
    fn sampling_examples() {
        assert_eq!(uniform_sample_indices(16, 16).unwrap(), (0..16).collect::<Vec<_>>());
        assert_eq!(
            uniform_sample_indices(32, 16).unwrap(),
            (0..16).map(|i| 2 * i).collect::<Vec<_>>()
        );
        assert_eq!(uniform_sample_indices(4, 8).unwrap(), vec![0, 0, 1, 1, 2, 2, 3, 3]);
        assert!(uniform_sample_indices(0, 8).is_err());
        assert!(uniform_sample_indices(8, 0).is_err());
    }

    #[test]
    fn attention_small_cases() {
        let one = features([1, 1, 1, 3], vec![0.2, -0.4, 0.9]);
        assert_eq!(
            spatial_attention(&one, DenseAttentionCap::default()).unwrap().data(),
            &[1.0]
        );

        let twins = features([2, 1, 1, 2], vec![0.3, 0.1, 0.3, 0.1]);
        let sa = spatial_attention(&twins, DenseAttentionCap::default()).unwrap();
        assert_eq!(sa.data(), &[0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn attention_matches_hand_rolled_softmax() {
        let f = features([2, 1, 2, 1], vec![0.0, 1.0, 2.0, 3.0]);
        let sa = spatial_attention(&f, DenseAttentionCap::default()).unwrap();
        let x = [0.0f64, 1.0, 2.0, 3.0];
        for i in 0..4 {
            let logits: Vec<f64> = x.iter().map(|&xj| x[i] * xj).collect();
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            for j in 0..4 {
                assert!((sa.data()[i * 4 + j] - logits[j].exp() / z).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn capacity_error_names_streaming() {
        let f = synth_image_features(0, 4, &EncoderSpec::new("t", (4, 4), 2)).unwrap();
        let err = spatial_attention(&f, DenseAttentionCap { bytes: 1024 }).unwrap_err();
        assert!(matches!(
            err,
            Error::Capacity {
                required: 32768,
                cap: 1024
            }
        ));
        assert!(err.to_string().contains("streaming"));
        assert!(frame_scores(&f, ScoringPath::Streaming, DenseAttentionCap { bytes: 0 }).is_ok());
    }

    #[test]
    fn identical_frames_score_equally() {
        let frame: Vec<f32> = vec![0.1, -0.5, 0.7, 0.2, 0.4, -0.3];
        let data = frame.iter().copied().cycle().take(4 * frame.len()).collect();
        let f = features([4, 1, 3, 2], data);
        for path in [ScoringPath::Dense, ScoringPath::Streaming] {
            let s = frame_scores(&f, path, DenseAttentionCap::default()).unwrap();
            for v in &s.scores {
                assert!((v - 3.0).abs() < 1e-12, "{v}");
            }
        }
    }

    #[test]
    fn high_norm_token_attracts_attention() {
        // Logits [[0,0],[0,100]]: row 0 is uniform, row 1 puts ~all mass on
        // token 1, so frame 1 receives about 1.5 and frame 0 about 0.5.
        let f = features([2, 1, 1, 1], vec![0.0, 10.0]);
        let s = frame_scores_dense(&f, DenseAttentionCap::default()).unwrap();
        assert!(s.scores[1] > s.scores[0]);
        assert!((s.scores[0] - 0.5).abs() < 1e-12);
        assert!((s.scores[1] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn top_k_examples() {
        let s = FrameScore {
            scores: vec![0.1, 0.9, 0.5, 0.7],
        };
        assert_eq!(top_k_frames(&s, 2).unwrap().indices, vec![1, 3]);
        assert_eq!(top_k_frames(&s, 4).unwrap().indices, vec![0, 1, 2, 3]);
        let flat = FrameScore { scores: vec![1.0; 8] };
        assert_eq!(top_k_frames(&flat, 3).unwrap().indices, vec![0, 1, 2]);
        assert!(top_k_frames(&s, 0).is_err());
        assert!(top_k_frames(&s, 5).is_err());
    }

    #[test]
    fn signed_zeros_tie() {
        let s = FrameScore {
            scores: vec![-0.0, 0.0, -1.0],
        };
        assert_eq!(top_k_frames(&s, 1).unwrap().indices, vec![0]);
    }

    #[test]
    fn streaming_scores_are_thread_count_invariant() {
        let f = synth_image_features(9, 6, &EncoderSpec::new("t", (3, 3), 8)).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| frame_scores_streaming(&f))
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn scoring_multiplies_match_logit_count() {
        let f = synth_image_features(1, 3, &EncoderSpec::new("t", (2, 2), 5)).unwrap();
        let s = 12u64;
        let (_, dense) = mac::measure(|| frame_scores_dense(&f, DenseAttentionCap::default()).unwrap());
        let (_, streaming) = mac::measure(|| frame_scores_streaming(&f));
        assert_eq!(dense, s * s * 5);
        assert_eq!(streaming, s * s * 5);
    }
}
