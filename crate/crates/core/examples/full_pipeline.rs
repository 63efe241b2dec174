//! Run the dual-branch pipeline end to end on synthetic features and print
//! the layout of the fused token sequence.
//!
//! cargo run --release --example full_pipeline

use framescope::pipeline::StageTimings;
use framescope::report::digest_hex;
use framescope::{FeatureSource, Pipeline, PipelineConfig};

fn main() -> framescope::Result<()> {
    // Default geometry at 8 frames instead of 16 to keep the run short.
    let cfg = PipelineConfig {
        frames: 8,
        ..PipelineConfig::default()
    };
    let out = Pipeline::new(cfg)?.run(&FeatureSource::Synthetic)?;

    println!("sampled frames {:?}", out.sampled_frames);
    if let Some(k) = &out.keyframes {
        println!("key-frames     {:?}", k.indices);
    }
    for seg in &out.tokens.segments {
        println!("{:?}: {} frames -> {} tokens", seg.branch, seg.frames, seg.tokens);
    }
    println!(
        "sequence {} x {}, digest {}",
        out.tokens.len(),
        out.tokens.width(),
        digest_hex(out.digest())
    );
    println!("MACs {} (measured {})", out.macs.total, out.measured_macs.total);
    for (stage, ms) in StageTimings::STAGES.iter().zip(out.timings.as_array()) {
        println!("  {stage:<18} {ms:8.2} ms");
    }
    Ok(())
}
