//! Exponential map to Euler angles, the space slice errors are measured in.
//!
//!     cargo run --example rotations

use vtln::rotation::{expmap_to_euler, expmap_to_rotmat, frame_to_euler};

fn main() -> vtln::Result<()> {
    let v = [0.0, 0.0, std::f64::consts::FRAC_PI_2];
    println!("rotation matrix of {v:?}:");
    for row in expmap_to_rotmat(v)? {
        println!("  {row:?}");
    }
    println!("euler: {:?}", expmap_to_euler(v)?);
    let frame = [0.1, -0.2, 0.3, 0.0, 0.0, 0.0];
    println!("two joints -> {:?}", frame_to_euler(&frame)?);
    Ok(())
}
