//! Pose sequences, their on-disk formats, and per-dimension normalization.

mod csv;
pub mod derivatives;
pub mod manifest;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use self::csv::{parse_sequence_csv, read_sequence_csv, write_sequence_csv, write_sequence_file};
pub use self::derivatives::{augment_with_derivatives, DerivativeSpec, DerivativeStream};
pub use self::manifest::{DatasetManifest, ManifestEntry, Split};

/// Default capture rate of exported mocap clips.
pub const DEFAULT_FPS: f64 = 25.0;

/// Standard deviations below this floor are treated as constant dimensions.
pub const STD_FLOOR: f64 = 1e-8;

/// One clip of per-frame joint exponential-map coordinates (T frames × D values).
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSequence {
    frames: Array2<f64>,
    pub action: String,
    pub frame_rate_hz: f64,
}

impl PoseSequence {
    pub fn new(frames: Array2<f64>, frame_rate_hz: f64) -> Result<Self> {
        if frames.nrows() == 0 || frames.ncols() == 0 {
            return Err(Error::Empty);
        }
        if !(frame_rate_hz.is_finite() && frame_rate_hz > 0.0) {
            return Err(Error::BadConfig(format!(
                "frame rate must be positive, got {frame_rate_hz}"
            )));
        }
        if let Some(pos) = frames.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "frame {} column {}",
                pos / frames.ncols(),
                pos % frames.ncols()
            )));
        }
        Ok(Self {
            frames,
            action: String::new(),
            frame_rate_hz,
        })
    }

    pub fn with_action(mut self, action: impl Into<String>) -> Self {
        self.action = action.into();
        self
    }

    pub fn frames(&self) -> &Array2<f64> {
        &self.frames
    }

    pub fn into_frames(self) -> Array2<f64> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }

    pub fn frame(&self, t: usize) -> ArrayView1<'_, f64> {
        self.frames.row(t)
    }

    /// Number of joints, when the width is a multiple of three.
    pub fn joints(&self) -> Result<usize> {
        if self.dim() % 3 != 0 {
            return Err(Error::dims(format!(
                "width {} is not a multiple of 3",
                self.dim()
            )));
        }
        Ok(self.dim() / 3)
    }
}

/// Per-dimension mean and floored standard deviation of a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Pools every frame of every sequence. Dimensions whose deviation falls
    /// under [`STD_FLOOR`] get std 1 so they pass through unscaled.
    pub fn from_sequences<'a, I>(seqs: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a PoseSequence>,
    {
        let mut dim = None;
        let mut count = 0usize;
        let mut sum: Array1<f64> = Array1::zeros(0);
        let mut frames = Vec::new();
        for seq in seqs {
            match dim {
                None => {
                    dim = Some(seq.dim());
                    sum = Array1::zeros(seq.dim());
                }
                Some(d) if d != seq.dim() => {
                    return Err(Error::dims(format!(
                        "sequence width {} differs from {}",
                        seq.dim(),
                        d
                    )))
                }
                _ => {}
            }
            sum += &seq.frames().sum_axis(Axis(0));
            count += seq.len();
            frames.push(seq.frames());
        }
        let dim = dim.ok_or(Error::Empty)?;
        let mean = sum / count as f64;
        let mut var = Array1::<f64>::zeros(dim);
        for f in frames {
            for row in f.rows() {
                let d = &row - &mean;
                var += &(&d * &d);
            }
        }
        let std = var.mapv(|v| {
            let s = (v / count as f64).sqrt();
            if s < STD_FLOOR {
                1.0
            } else {
                s
            }
        });
        Ok(Self {
            mean: mean.to_vec(),
            std: std.to_vec(),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, d: usize) -> Result<()> {
        if self.mean.len() != d || self.std.len() != d {
            return Err(Error::dims(format!(
                "stats have width {}, data has {}",
                self.mean.len(),
                d
            )));
        }
        Ok(())
    }

    pub fn standardize(&self, frames: &Array2<f64>) -> Result<Array2<f64>> {
        self.check(frames.ncols())?;
        let mut out = frames.clone();
        for mut row in out.rows_mut() {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }

    pub fn destandardize(&self, frames: &Array2<f64>) -> Result<Array2<f64>> {
        self.check(frames.ncols())?;
        let mut out = frames.clone();
        for mut row in out.rows_mut() {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = *v * s + m;
            }
        }
        Ok(out)
    }
}

pub fn standardize(seq: &PoseSequence, stats: &NormStats) -> Result<PoseSequence> {
    Ok(PoseSequence {
        frames: stats.standardize(seq.frames())?,
        action: seq.action.clone(),
        frame_rate_hz: seq.frame_rate_hz,
    })
}

pub fn destandardize(seq: &PoseSequence, stats: &NormStats) -> Result<PoseSequence> {
    Ok(PoseSequence {
        frames: stats.destandardize(seq.frames())?,
        action: seq.action.clone(),
        frame_rate_hz: seq.frame_rate_hz,
    })
}
