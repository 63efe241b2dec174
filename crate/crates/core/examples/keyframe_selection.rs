//! Score synthetic frames by the attention their patches receive and keep
//! the strongest half.
//!
//! cargo run --example keyframe_selection

use framescope::features::{synth_image_features, EncoderSpec};
use framescope::selection::{frame_scores, spatial_attention, top_k_frames, DenseAttentionCap, ScoringPath};

fn main() -> framescope::Result<()> {
    let spec = EncoderSpec::new("toy", (4, 4), 32);
    let features = synth_image_features(7, 8, &spec)?;

    let scores = frame_scores(&features, ScoringPath::Streaming, DenseAttentionCap::default())?;
    let keyframes = top_k_frames(&scores, 4)?;

    println!("tokens per frame: {}", features.tokens_per_frame());
    for (t, s) in scores.scores.iter().enumerate() {
        let mark = if keyframes.indices.contains(&t) { "*" } else { " " };
        println!("frame {t} {mark} {s:8.4}");
    }
    println!(
        "attention mass {:.6} over {} tokens",
        scores.total(),
        features.frames() * features.tokens_per_frame()
    );

    // The dense path materialises the full attention matrix; it agrees with
    // the streaming scorer but needs S x S memory.
    let attn = spatial_attention(&features, DenseAttentionCap::default())?;
    let dense = frame_scores(&features, ScoringPath::Dense, DenseAttentionCap::default())?;
    println!(
        "dense matrix {:?}, same key-frames: {}",
        attn.shape(),
        top_k_frames(&dense, 4)? == keyframes
    );
    Ok(())
}
