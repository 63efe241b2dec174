//! Write features to an MVGF file, read them back, feed them to the
//! pipeline, and save and reload projector weights.
//!
//! cargo run --example feature_files

use framescope::features::{synth_image_features, EncoderSpec};
use framescope::format::{read_features, write_features};
use framescope::projector::{load_params, save_params};
use framescope::{FeatureSource, Pipeline, PipelineConfig, ProjectorParams};

fn main() -> framescope::Result<()> {
    let dir = std::env::temp_dir().join("framescope-example");
    std::fs::create_dir_all(&dir)?;

    let cfg = PipelineConfig {
        frames: 4,
        image_encoder: EncoderSpec::new("small", (6, 6), 24),
        video_encoder: EncoderSpec::new("small-video", (4, 4), 16),
        image_grid_out: (3, 3),
        video_grid_out: (2, 2),
        embed_width: 32,
        ..PipelineConfig::default()
    };

    let path = dir.join("frames.mvgf");
    let features = synth_image_features(9, cfg.frames, &cfg.image_encoder)?;
    write_features(&path, features.tensor().clone())?;
    let back = read_features(&path)?;
    println!(
        "{} -> {:?} {:?}, {} bytes",
        path.display(),
        back.dtype(),
        back.shape(),
        std::fs::metadata(&path)?.len()
    );

    let proj = cfg.image_projector();
    let params = ProjectorParams::init(&proj, 123)?;
    let manifest = dir.join("image_projector.json");
    save_params(&manifest, &proj, &params)?;
    let (_, loaded) = load_params(&manifest)?;

    let out = Pipeline::new(cfg)?
        .with_image_params(loaded)?
        .run(&FeatureSource::from_file(&path)?)?;
    println!(
        "tokens {} x {}, key-frames {:?}",
        out.tokens.len(),
        out.tokens.width(),
        out.keyframes.map(|k| k.indices)
    );
    Ok(())
}
