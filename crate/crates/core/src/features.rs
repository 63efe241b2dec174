//! Encoder outputs and their synthetic stand-ins.
//!
//! Real image and video encoders are out of reach at desk scale, so both are
//! replaced by pure functions of a seed. The video stand-in hashes the
//! selected frame indices into every value, which makes the choice of
//! key-frames visible downstream.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{bits_to_symmetric_unit, splitmix64};
use crate::tensor::Tensor;

/// Geometry of an encoder's output grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub name: String,
    /// Patch grid as `(rows, cols)`.
    pub grid: (usize, usize),
    /// Channel depth of each patch token.
    pub depth: usize,
    /// Square input resolution in pixels.
    pub input_resolution: usize,
}

impl EncoderSpec {
    pub fn new(name: impl Into<String>, grid: (usize, usize), depth: usize) -> Self {
        Self {
            name: name.into(),
            grid,
            depth,
            input_resolution: 224,
        }
    }

    /// ViT-B/16 image encoder at 224 px: a 14x14 patch grid of 768-d tokens.
    pub fn clip_b16() -> Self {
        Self::new("clip-b16", (14, 14), 768)
    }

    /// Video encoder stand-in. The depth of 576 is a configurable default,
    /// not a measured property of any particular model.
    pub fn videomamba_m() -> Self {
        Self::new("videomamba-m", (14, 14), 576)
    }

    pub fn tokens_per_frame(&self) -> usize {
        self.grid.0 * self.grid.1
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.0 == 0 || self.grid.1 == 0 || self.depth == 0 || self.input_resolution == 0 {
            return Err(Error::argument(format!(
                "encoder {:?} needs a positive grid, depth and resolution",
                self.name
            )));
        }
        Ok(())
    }
}

/// Per-frame image features, `T x H x W x D`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatures(Tensor<f32>);

/// Key-frame video features, `K x H x W x D`.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoFeatures(Tensor<f32>);

fn check_rank4(t: &Tensor<f32>) -> Result<()> {
    if t.rank() != 4 {
        return Err(Error::InvalidShape {
            shape: t.shape().to_vec(),
            reason: "features must be frames x height x width x depth".into(),
        });
    }
    Ok(())
}

macro_rules! feature_accessors {
    ($ty:ident) => {
        impl $ty {
            pub fn new(t: Tensor<f32>) -> Result<Self> {
                check_rank4(&t)?;
                Ok(Self(t))
            }

            pub fn tensor(&self) -> &Tensor<f32> {
                &self.0
            }

            pub fn into_tensor(self) -> Tensor<f32> {
                self.0
            }

            pub fn frames(&self) -> usize {
                self.0.shape()[0]
            }

            pub fn grid(&self) -> (usize, usize) {
                (self.0.shape()[1], self.0.shape()[2])
            }

            pub fn depth(&self) -> usize {
                self.0.shape()[3]
            }

            pub fn tokens_per_frame(&self) -> usize {
                self.0.shape()[1] * self.0.shape()[2]
            }

            /// Row-major values of frame `index`, `H*W*D` long.
            pub fn frame(&self, index: usize) -> &[f32] {
                let len = self.tokens_per_frame() * self.depth();
                &self.0.data()[index * len..(index + 1) * len]
            }
        }
    };
}

feature_accessors!(FrameFeatures);
feature_accessors!(VideoFeatures);

impl FrameFeatures {
    /// Features with the frame axis reordered: output frame `i` is input
    /// frame `order[i]`.
    pub fn permute_frames(&self, order: &[usize]) -> Result<Self> {
        let t = self.frames();
        let mut seen = vec![false; t];
        if order.len() != t || !order.iter().all(|&i| i < t && !std::mem::replace(&mut seen[i], true)) {
            return Err(Error::argument("frame order must be a permutation"));
        }
        let data = order.iter().flat_map(|&i| self.frame(i).iter().copied()).collect();
        Ok(Self(Tensor::from_parts(self.0.shape().to_vec(), data)))
    }
}

fn symmetric_f32(bits: u64) -> f32 {
    bits_to_symmetric_unit(bits) as f32
}

/// Image-encoder stand-in: element `i` of the flattened `T x H x W x D`
/// tensor is `splitmix64(seed ^ i)` mapped to `[-1, 1)`.
pub fn synth_image_features(seed: u64, frames: usize, spec: &EncoderSpec) -> Result<FrameFeatures> {
    spec.validate()?;
    if frames == 0 {
        return Err(Error::argument("frame count must be at least 1"));
    }
    let shape = vec![frames, spec.grid.0, spec.grid.1, spec.depth];
    let t = Tensor::from_fn(shape, |i| symmetric_f32(splitmix64(seed ^ i as u64)))?;
    Ok(FrameFeatures(t))
}

/// Video-encoder stand-in: element `i` of frame slot `j` is
/// `splitmix64(seed ^ splitmix64(indices[j]) ^ i)` mapped to `[-1, 1)`.
pub fn synth_video_features(seed: u64, keyframe_indices: &[usize], spec: &EncoderSpec) -> Result<VideoFeatures> {
    spec.validate()?;
    if keyframe_indices.is_empty() {
        return Err(Error::argument("key-frame list is empty"));
    }
    if keyframe_indices.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::argument(format!(
            "key-frame indices must be strictly increasing, got {keyframe_indices:?}"
        )));
    }
    let per_frame = spec.tokens_per_frame() * spec.depth;
    let mut data = Vec::with_capacity(per_frame * keyframe_indices.len());
    for &frame in keyframe_indices {
        let salt = seed ^ splitmix64(frame as u64);
        data.extend((0..per_frame).map(|i| symmetric_f32(splitmix64(salt ^ i as u64))));
    }
    let shape = vec![keyframe_indices.len(), spec.grid.0, spec.grid.1, spec.depth];
    Ok(VideoFeatures(Tensor::from_parts(shape, data)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_stand_in_shape_and_determinism() {
        let spec = EncoderSpec::new("tiny", (3, 2), 4);
        let a = synth_image_features(5, 2, &spec).unwrap();
        assert_eq!(a, synth_image_features(5, 2, &spec).unwrap());
        assert_ne!(a, synth_image_features(6, 2, &spec).unwrap());
        assert_eq!(a.tensor().shape(), &[2, 3, 2, 4]);
        assert!(a.tensor().data().iter().all(|v| (-1.0..1.0).contains(v)));
        assert!(synth_image_features(5, 0, &spec).is_err());
    }

    #[test]
    fn default_geometry() {
        let f = synth_image_features(0, 16, &EncoderSpec::clip_b16()).unwrap();
        assert_eq!(f.tensor().shape(), &[16, 14, 14, 768]);
        let indices: Vec<usize> = (0..8).collect();
        let v = synth_video_features(0, &indices, &EncoderSpec::videomamba_m()).unwrap();
        assert_eq!(v.tensor().shape(), &[8, 14, 14, 576]);
    }

    #[test]
    fn video_stand_in_depends_on_indices() {
        let spec = EncoderSpec::new("tiny", (2, 2), 3);
        let a = synth_video_features(1, &[0, 2], &spec).unwrap();
        let b = synth_video_features(1, &[0, 3], &spec).unwrap();
        assert_ne!(a, b);
        assert_eq!(a.frame(0), b.frame(0));
        assert_eq!(a, synth_video_features(1, &[0, 2], &spec).unwrap());
        assert!(synth_video_features(1, &[], &spec).is_err());
        assert!(synth_video_features(1, &[2, 2], &spec).is_err());
        assert!(synth_video_features(1, &[3, 1], &spec).is_err());
    }

    #[test]
    fn permute_frames_moves_whole_frames() {
        let spec = EncoderSpec::new("tiny", (1, 2), 2);
        let f = synth_image_features(2, 3, &spec).unwrap();
        let p = f.permute_frames(&[2, 0, 1]).unwrap();
        assert_eq!(p.frame(0), f.frame(2));
        assert_eq!(p.frame(1), f.frame(0));
        assert!(f.permute_frames(&[0, 0, 1]).is_err());
    }
}
