//! Repeats the last seed frame and scores it at the standard slices.
//!
//!     cargo run --example zero_velocity_baseline

use ndarray::{s, Array2};
use vtln::metrics::{euler_mse_at_slices, zero_velocity_predict, EvalSet};

fn main() -> vtln::Result<()> {
    // every channel drifts linearly
    let frames = Array2::from_shape_fn((75, 6), |(t, j)| 0.01 * t as f64 * (1.0 + j as f64 / 6.0));
    let seed = frames.slice(s![..50, ..]);
    let truth = frames.slice(s![50.., ..]).to_owned();
    let pred = zero_velocity_predict(seed, truth.nrows())?;
    let set = EvalSet::new("drift", vec![(truth, pred)], 25.0)?;
    for e in euler_mse_at_slices(&set, &[80.0, 160.0, 320.0, 400.0, 560.0, 1000.0], false)? {
        println!("{:>5} ms -> frame {:>2}: {:.5}", e.ms, e.frame, e.mean_distance);
    }
    Ok(())
}
