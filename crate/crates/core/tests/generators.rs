//! Synthetic generators and digests checked against hand-written
//! reimplementations, plus pinned regression digests.

use framescope::features::{synth_image_features, synth_video_features, EncoderSpec};
use framescope::projector::{Branch, Segment};
use framescope::report::digest_hex;
use framescope::rng::SplitMix64;
use framescope::{Pipeline, PipelineConfig, Tensor, TokenSequence};

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn unit(bits: u64) -> f32 {
    ((bits >> 11) as f64 / 9_007_199_254_740_992.0 * 2.0 - 1.0) as f32
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

#[test]
fn stream_matches_published_splitmix64_sequence() {
    let mut rng = SplitMix64::new(1_234_567);
    let got: Vec<u64> = (0..5).map(|_| rng.next_u64()).collect();
    assert_eq!(
        got,
        [
            6_457_827_717_110_365_317,
            3_203_168_211_198_807_973,
            9_817_491_932_198_370_423,
            4_593_380_528_125_082_431,
            16_408_922_859_458_223_821,
        ]
    );
}

#[test]
fn image_features_follow_the_flat_index_rule() {
    let spec = EncoderSpec::new("t", (3, 2), 5);
    for seed in [0, 1, 0xdead_beef, u64::MAX] {
        let f = synth_image_features(seed, 4, &spec).unwrap();
        assert_eq!(f.tensor().shape(), &[4, 3, 2, 5]);
        for (i, &v) in f.tensor().data().iter().enumerate() {
            assert_eq!(
                v.to_bits(),
                unit(mix(seed ^ i as u64)).to_bits(),
                "seed {seed} index {i}"
            );
        }
    }
}

#[test]
fn video_features_depend_on_the_source_frame_only() {
    let spec = EncoderSpec::new("t", (2, 2), 3);
    let seed = 77;
    let v = synth_video_features(seed, &[1, 4, 9], &spec).unwrap();
    let per_frame = 12;
    for (slot, &frame) in [1u64, 4, 9].iter().enumerate() {
        let salt = seed ^ mix(frame);
        for i in 0..per_frame {
            let got = v.tensor().data()[slot * per_frame + i];
            assert_eq!(got.to_bits(), unit(mix(salt ^ i as u64)).to_bits());
        }
    }
    // Frame 4 looks the same wherever it sits in the key-frame list.
    let alone = synth_video_features(seed, &[4], &spec).unwrap();
    assert_eq!(alone.tensor().data(), &v.tensor().data()[per_frame..2 * per_frame]);
}

#[test]
fn digest_is_fnv1a_over_little_endian_tokens() {
    let data = vec![1.0f32, -2.5, 0.0, 3.25, 1e-7, -0.0];
    let seq = TokenSequence {
        tokens: Tensor::new([1, 3, 2], data.clone()).unwrap(),
        segments: vec![Segment {
            branch: Branch::Image,
            frames: 1,
            tokens: 3,
        }],
    };
    let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
    assert_eq!(seq.digest(), fnv1a(&bytes));
    assert_eq!(digest_hex(0xab), "00000000000000ab");
}

// Regression pins. A change here means the generator, the projector or the
// reduction order changed.
#[test]
fn pinned_pipeline_digest() {
    let cfg = PipelineConfig {
        frames: 8,
        seed: 42,
        ..PipelineConfig::default()
    };
    let out = Pipeline::new(cfg).unwrap().run(&Default::default()).unwrap();
    assert_eq!(digest_hex(out.digest()), "03aa907c7e68ab32");
    assert_eq!(out.keyframes.unwrap().indices.len(), 4);
}
