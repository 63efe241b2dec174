//! Compare every analytic backward pass with central finite differences,
//! then show that a 1% gradient error is caught.
//!
//! cargo run --example gradient_check

use framescope::gradcheck::{run_gradchecks, GradOp, GradcheckOptions};

fn main() -> framescope::Result<()> {
    let clean = run_gradchecks(&GradcheckOptions::default())?;
    for r in &clean.ops {
        println!(
            "{:<16} {:>3} seeds  max rel err {:.2e}",
            r.op.name(),
            r.trials,
            r.max_rel_err
        );
    }
    println!("all within {:e}: {}", clean.tolerance, clean.pass);

    let broken = run_gradchecks(&GradcheckOptions {
        seeds: 3,
        fault: Some(GradOp::AdaptivePool),
        ..Default::default()
    })?;
    let failing: Vec<_> = broken.ops.iter().filter(|r| !r.pass).map(|r| r.op.name()).collect();
    println!("with a corrupted pooling gradient, failing ops: {failing:?}");
    Ok(())
}
