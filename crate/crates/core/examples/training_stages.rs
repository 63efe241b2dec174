//! Print which modules train and which stay frozen in each training stage.
//!
//! cargo run --example training_stages

use framescope::pipeline::stage_plan;

fn main() -> framescope::Result<()> {
    for stage in 1..=3 {
        let plan = stage_plan(stage)?;
        let h = &plan.hyperparameters;
        println!("stage {stage}: {}", plan.name);
        println!("  trainable {:?}", plan.trainable);
        println!("  frozen    {:?}", plan.frozen);
        println!(
            "  batch {} lr {:e} {} warmup {} {} x{} epochs",
            h.batch_size, h.learning_rate, h.schedule, h.warmup_ratio, h.optimizer, h.epochs
        );
        if let Some(note) = &plan.adapter_note {
            println!("  {note}");
        }
    }
    Ok(())
}
