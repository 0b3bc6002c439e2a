//! Backward-difference motion derivatives, batch and streaming.
//!
//!     cargo run --example motion_derivatives

use ndarray::Array2;
use vtln::motion::{augment_with_derivatives, DerivativeSpec, DerivativeStream};

fn main() -> vtln::Result<()> {
    // f(t) = t² for t = 0..4
    let frames = Array2::from_shape_vec((4, 1), vec![0.0, 1.0, 4.0, 9.0]).unwrap();
    let spec = DerivativeSpec::default();
    let batch = augment_with_derivatives(&frames, &spec)?;
    println!("columns: value, first, second, third difference");
    for row in batch.rows() {
        println!("{row}");
    }

    let mut stream = DerivativeStream::new(spec)?;
    for t in 0..frames.nrows() {
        let out = stream.push_frame(&frames.row(t).to_vec())?;
        assert_eq!(out.as_slice(), batch.row(t).as_slice().unwrap());
    }
    println!("streaming output matches the batch rows");
    Ok(())
}
