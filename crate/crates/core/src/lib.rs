pub mod cli;
pub mod error;
pub mod gradcheck;
pub mod gru;
pub mod metrics;
pub mod model;
pub mod motion;
pub mod params;
pub mod protocol;
pub mod rotation;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
