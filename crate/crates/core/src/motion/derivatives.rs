//! Backward-difference motion derivatives appended to the joint angles.
//!
//! For order `n` and spacing `h`, frame `t` gets
//! `sum_{i=0..=n} (-1)^i C(n, i) f(t - i h)`. Frames before the start of the
//! sequence replicate frame 0, so every derivative is zero at `t = 0`.
//!
//! Frames are 2-D so the same code runs one sequence (`1 × D` rows) or a
//! batch (`B × D`). The batch routine and [`DerivativeStream`] share
//! one kernel, so streaming and batch outputs agree bit for bit.

use std::collections::VecDeque;

use ndarray::{s, Array2, ArrayView2, ArrayViewMut2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DerivativeSpec {
    /// Strictly increasing orders in `1..=3`.
    pub orders: Vec<usize>,
    pub spacing: usize,
}

impl Default for DerivativeSpec {
    fn default() -> Self {
        Self {
            orders: vec![1, 2, 3],
            spacing: 1,
        }
    }
}

impl DerivativeSpec {
    pub fn none() -> Self {
        Self {
            orders: Vec::new(),
            spacing: 1,
        }
    }

    pub fn new(orders: Vec<usize>, spacing: usize) -> Result<Self> {
        let spec = Self { orders, spacing };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.spacing < 1 {
            return Err(Error::BadSpacing);
        }
        if let Some(&o) = self.orders.iter().find(|&&o| o < 1 || o > MAX_ORDER) {
            return Err(Error::BadOrder(o));
        }
        if self.orders.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::BadConfig(format!(
                "derivative orders must be strictly increasing: {:?}",
                self.orders
            )));
        }
        Ok(())
    }

    pub fn max_order(&self) -> usize {
        self.orders.last().copied().unwrap_or(0)
    }

    /// Frames of history a single output depends on.
    pub fn history_len(&self) -> usize {
        self.max_order() * self.spacing + 1
    }

    pub fn blocks(&self) -> usize {
        1 + self.orders.len()
    }

    pub fn width(&self, dim: usize) -> usize {
        self.blocks() * dim
    }
}

/// `(-1)^i C(n, i)` for `i = 0..=n`.
pub fn difference_coefficients(order: usize) -> Vec<f64> {
    let mut coeffs = Vec::with_capacity(order + 1);
    let mut binom = 1.0;
    for i in 0..=order {
        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
        coeffs.push(sign * binom);
        binom = binom * (order - i) as f64 / (i + 1) as f64;
    }
    coeffs
}

/// Writes the augmented rows for one time step. `lagged(k)` returns the frame
/// `k` steps back (already clamped to the first frame).
fn combine<'a, F>(spec: &DerivativeSpec, lagged: F, mut out: ArrayViewMut2<'_, f64>)
where
    F: Fn(usize) -> ArrayView2<'a, f64>,
{
    let current = lagged(0);
    let dim = current.ncols();
    out.slice_mut(s![.., 0..dim]).assign(&current);
    // Repeated first differences rather than the expanded binomial sum, so
    // constant stretches give exact zeros.
    let max = spec.max_order();
    let mut diffs: Vec<_> = (0..=max).map(|i| lagged(i * spec.spacing).to_owned()).collect();
    for order in 1..=max {
        for i in 0..=max - order {
            let (head, tail) = diffs.split_at_mut(i + 1);
            head[i] -= &tail[0];
        }
        if let Some(b) = spec.orders.iter().position(|&o| o == order) {
            out.slice_mut(s![.., (b + 1) * dim..(b + 2) * dim]).assign(&diffs[0]);
        }
    }
}

/// Augments a whole `T × D` sequence into `T × (1 + |orders|)·D`.
pub fn augment_with_derivatives(frames: &Array2<f64>, spec: &DerivativeSpec) -> Result<Array2<f64>> {
    spec.validate()?;
    if frames.nrows() == 0 {
        return Err(Error::Empty);
    }
    let (t_len, dim) = frames.dim();
    let mut out = Array2::zeros((t_len, spec.width(dim)));
    for t in 0..t_len {
        combine(
            spec,
            |k| frames.slice(s![t.saturating_sub(k)..t.saturating_sub(k) + 1, ..]),
            out.slice_mut(s![t..t + 1, ..]),
        );
    }
    Ok(out)
}

/// Augments step `t` of a history of batched frames (each `B × D`).
pub(crate) fn augment_step(
    spec: &DerivativeSpec,
    history: &[Array2<f64>],
    t: usize,
) -> Array2<f64> {
    let (b, dim) = history[t].dim();
    let mut out = Array2::zeros((b, spec.width(dim)));
    combine(spec, |k| history[t.saturating_sub(k)].view(), out.view_mut());
    out
}

/// Adjoint of [`augment_step`]: accumulates `d_aug` into the gradients of the
/// frames it was built from.
pub(crate) fn backprop_step(
    spec: &DerivativeSpec,
    d_aug: ArrayView2<'_, f64>,
    t: usize,
    d_frames: &mut [Array2<f64>],
) {
    let dim = d_frames[t].ncols();
    d_frames[t].scaled_add(1.0, &d_aug.slice(s![.., 0..dim]));
    for (b, &order) in spec.orders.iter().enumerate() {
        let block = d_aug.slice(s![.., (b + 1) * dim..(b + 2) * dim]);
        for (i, c) in difference_coefficients(order).into_iter().enumerate() {
            d_frames[t.saturating_sub(i * spec.spacing)].scaled_add(c, &block);
        }
    }
}

/// Ring buffer of the most recent frames, producing augmented vectors one step
/// at a time during closed-loop generation.
#[derive(Debug, Clone)]
pub struct DerivativeStream {
    spec: DerivativeSpec,
    history: VecDeque<Array2<f64>>,
}

impl DerivativeStream {
    pub fn new(spec: DerivativeSpec) -> Result<Self> {
        spec.validate()?;
        let cap = spec.history_len();
        Ok(Self {
            spec,
            history: VecDeque::with_capacity(cap),
        })
    }

    pub fn spec(&self) -> &DerivativeSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }

    /// Appends a `B × D` frame and returns its augmented `B × width` rows.
    pub fn push(&mut self, frame: Array2<f64>) -> Result<Array2<f64>> {
        if let Some(prev) = self.history.back() {
            if prev.dim() != frame.dim() {
                return Err(Error::dims(format!(
                    "frame shape {:?} differs from history shape {:?}",
                    frame.dim(),
                    prev.dim()
                )));
            }
        }
        if self.history.len() == self.spec.history_len() {
            self.history.pop_front();
        }
        self.history.push_back(frame);
        let (b, dim) = self.history[0].dim();
        let mut out = Array2::zeros((b, self.spec.width(dim)));
        let n = self.history.len();
        combine(
            &self.spec,
            |k| self.history[n - 1 - k.min(n - 1)].view(),
            out.view_mut(),
        );
        Ok(out)
    }

    /// Single-sequence convenience around [`push`](Self::push).
    pub fn push_frame(&mut self, frame: &[f64]) -> Result<Vec<f64>> {
        let row = Array2::from_shape_vec((1, frame.len()), frame.to_vec())
            .map_err(|e| Error::dims(e.to_string()))?;
        Ok(self.push(row)?.into_raw_vec_and_offset().0)
    }
}
