//! Token and multiply budgets of a few pipeline configurations, without
//! running any tensor code. The key-frame total includes the cost of
//! scoring, which the other rows skip.
//!
//! cargo run --example token_budget

use framescope::pipeline::{mac_report, token_budget, FrameSelection};
use framescope::PipelineConfig;

fn main() -> framescope::Result<()> {
    let default = PipelineConfig::default();
    let configs = [
        ("dual branch, key-frames", default.clone()),
        (
            "dual branch, every frame",
            PipelineConfig {
                frame_selection: FrameSelection::None,
                ..default.clone()
            },
        ),
        ("mlp baseline, 32 frames", PipelineConfig::mlp_baseline()),
    ];
    println!(
        "{:<26} {:>6} {:>6} {:>6} {:>14} {:>16}",
        "config", "image", "video", "total", "video MACs", "all MACs"
    );
    for (name, cfg) in configs {
        let b = token_budget(&cfg)?;
        let m = mac_report(&cfg)?;
        println!(
            "{name:<26} {:>6} {:>6} {:>6} {:>14} {:>16}",
            b.image_tokens, b.video_tokens, b.total, m.video_projection, m.total
        );
    }
    Ok(())
}
