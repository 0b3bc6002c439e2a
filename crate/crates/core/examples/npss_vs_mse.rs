//! A phase-shifted copy of a periodic motion has a large frame-wise error
//! but the same power spectrum.
//!
//!     cargo run --example npss_vs_mse

use vtln::metrics::{euler_mse_at_slices, npss, EvalSet, NpssOptions};
use vtln::synth::{generate_action, ChannelSpec, Harmonic, SynthActionSpec};

fn walk(phase_shift: f64) -> SynthActionSpec {
    let channels = (0..9)
        .map(|j| ChannelSpec {
            offset: 0.0,
            harmonics: vec![
                Harmonic { bin: 4, amplitude: 0.4, phase: 0.3 * j as f64 + phase_shift },
                Harmonic { bin: 8, amplitude: 0.15, phase: 0.7 * j as f64 + 2.0 * phase_shift },
            ],
        })
        .collect();
    SynthActionSpec {
        frames: 100,
        channels,
        noise_std: 0.0,
        seed: 0,
    }
}

fn main() -> vtln::Result<()> {
    let truth = generate_action(&walk(0.0))?.into_frames();
    let shifted = generate_action(&walk(std::f64::consts::PI))?.into_frames();
    let set = EvalSet::new("walk", vec![(truth, shifted)], 25.0)?;
    for s in euler_mse_at_slices(&set, &[80.0, 160.0, 320.0, 400.0, 560.0, 1000.0], false)? {
        println!("{:>5} ms (frame {:>2}): {:.4}", s.ms, s.frame, s.mean_distance);
    }
    let report = npss(&set, 0, set.frames(), NpssOptions::default())?;
    println!("NPSS over the whole clip: {:.2e}", report.npss);
    Ok(())
}
