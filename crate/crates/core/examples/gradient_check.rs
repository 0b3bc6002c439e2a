//! Finite-difference check of the full training loss.
//!
//!     cargo run --release --example gradient_check

use vtln::model::VtlnConfig;
use vtln::training::{check_gradients, GradCheckSetup};

fn main() -> vtln::Result<()> {
    let mut model = VtlnConfig::new(6, 6, 2);
    model.seed_frames = 6;
    model.horizon = 6;
    let mut setup = GradCheckSetup::new(model);
    setup.lambda = 0.5;
    let report = check_gradients(&setup)?;
    for t in &report.tensors {
        println!("{:<18} {:.3e}", t.name, t.max_rel_err);
    }
    println!("worst: {} at {:.3e}", report.worst_param, report.max_rel_err);

    setup.corrupt = Some("body.v_z".into());
    let broken = check_gradients(&setup)?;
    println!("with body.v_z corrupted the worst tensor is {}", broken.worst_param);
    Ok(())
}
