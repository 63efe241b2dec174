//! Project one frame of encoder features with ET-Proj and with the plain MLP
//! projector, and compare token counts and multiply costs.
//!
//! cargo run --example et_projection

use framescope::features::{synth_image_features, EncoderSpec};
use framescope::numerics::mac;
use framescope::projector::{project_branch, ProjectorConfig, ProjectorParams};

fn main() -> framescope::Result<()> {
    let spec = EncoderSpec::new("clip-like", (14, 14), 64);
    let frame = synth_image_features(3, 1, &spec)?;

    let configs = [
        (
            "et_proj 14x14 -> 12x12",
            ProjectorConfig::et(64, 96, (14, 14), (12, 12)),
        ),
        ("et_proj 14x14 -> 7x7", ProjectorConfig::et(64, 96, (14, 14), (7, 7))),
        ("mlp_proj", ProjectorConfig::mlp(64, 96, (14, 14))),
    ];
    for (name, cfg) in configs {
        let params = ProjectorParams::init(&cfg, 1)?;
        let (tokens, counted) = mac::measure(|| project_branch(&frame, &cfg, &params));
        let tokens = tokens?;
        println!(
            "{name:<24} tokens {:>3} x {:<3} macs {:>9} (closed form {})",
            tokens.len(),
            tokens.width(),
            counted,
            cfg.macs_per_frame()
        );
    }
    Ok(())
}
