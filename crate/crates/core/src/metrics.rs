//! Evaluation: Euler-angle error at fixed time slices, normalized power
//! spectrum similarity (NPSS), and the zero-velocity baseline.
//!
//! NPSS compares the *shape* of each channel's power spectrum. For every
//! (sequence, feature) pair both spectra are normalized to unit mass, their
//! L1 distance is taken, and the distances are averaged with the total
//! ground-truth power as weight.

use std::f64::consts::PI;

use ndarray::{s, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotation::frame_to_euler;

/// Ground-truth / prediction pairs for one action.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSet {
    pub action: String,
    /// `(truth, prediction)`, each `T × D`.
    pub pairs: Vec<(Array2<f64>, Array2<f64>)>,
    pub frame_rate_hz: f64,
}

impl EvalSet {
    pub fn new(action: impl Into<String>, pairs: Vec<(Array2<f64>, Array2<f64>)>, frame_rate_hz: f64) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Empty);
        }
        for (i, (truth, pred)) in pairs.iter().enumerate() {
            if truth.dim() != pred.dim() {
                return Err(Error::dims(format!(
                    "pair {i}: truth {:?} vs prediction {:?}",
                    truth.dim(),
                    pred.dim()
                )));
            }
            if truth.nrows() == 0 || truth.ncols() == 0 {
                return Err(Error::Empty);
            }
        }
        if !(frame_rate_hz.is_finite() && frame_rate_hz > 0.0) {
            return Err(Error::BadConfig(format!("frame rate {frame_rate_hz} must be positive")));
        }
        Ok(Self {
            action: action.into(),
            pairs,
            frame_rate_hz,
        })
    }

    pub fn frames(&self) -> usize {
        self.pairs.iter().map(|(t, _)| t.nrows()).min().unwrap_or(0)
    }
}

// ------------------------------------------------------------ slice error

/// Frame number (1-based: the first predicted frame is frame 1) shown
/// `ms` milliseconds after the end of the seed.
pub fn ms_to_frame(ms: f64, fps: f64) -> Result<usize> {
    let exact = ms * fps / 1000.0;
    let rounded = exact.round();
    if !(ms > 0.0) || (exact - rounded).abs() > 1e-9 || rounded < 1.0 {
        return Err(Error::FrameRateMismatch { ms, fps });
    }
    Ok(rounded as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SliceError {
    pub ms: f64,
    /// 1-based frame number.
    pub frame: usize,
    pub mean_distance: f64,
}

/// Wraps an angle difference into `(−π, π]`.
fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// Euclidean distance between the Euler angles of two exponential-map frames.
pub fn euler_distance(truth: ArrayView1<'_, f64>, pred: ArrayView1<'_, f64>, wrap: bool) -> Result<f64> {
    let a = frame_to_euler(&truth.to_vec())?;
    let b = frame_to_euler(&pred.to_vec())?;
    Ok(a.iter()
        .zip(&b)
        .map(|(x, y)| {
            let d = if wrap { wrap_angle(y - x) } else { y - x };
            d * d
        })
        .sum::<f64>()
        .sqrt())
}

/// Mean (over pairs) Euler-angle distance at each slice, with sequences in
/// exponential-map coordinates.
pub fn euler_mse_at_slices(set: &EvalSet, slices_ms: &[f64], wrap: bool) -> Result<Vec<SliceError>> {
    let len = set.frames();
    slices_ms
        .iter()
        .map(|&ms| {
            let frame = ms_to_frame(ms, set.frame_rate_hz)?;
            if frame > len {
                return Err(Error::SliceOutOfRange { ms, frame, len });
            }
            let mut total = 0.0;
            for (truth, pred) in &set.pairs {
                total += euler_distance(truth.row(frame - 1), pred.row(frame - 1), wrap)?;
            }
            Ok(SliceError {
                ms,
                frame,
                mean_distance: total / set.pairs.len() as f64,
            })
        })
        .collect()
}

// -------------------------------------------------------------- spectra

/// Cosine and sine tables for a length-`n` DFT, indexed by `(f·t) mod n`.
struct Twiddles {
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl Twiddles {
    fn new(n: usize) -> Self {
        let (cos, sin) = (0..n)
            .map(|k| {
                let a = 2.0 * PI * k as f64 / n as f64;
                (a.cos(), a.sin())
            })
            .unzip();
        Self { cos, sin }
    }

    /// `|Σ_t x_t e^{−2πi f t / n}|²` for `f = 0..=n/2`.
    fn power(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        (0..=n / 2)
            .map(|f| {
                let (mut re, mut im) = (0.0, 0.0);
                for (t, &v) in x.iter().enumerate() {
                    let k = (f * t) % n;
                    re += v * self.cos[k];
                    im -= v * self.sin[k];
                }
                re * re + im * im
            })
            .collect()
    }
}

fn prepare(signal: &[f64], remove_dc: bool) -> Result<Vec<f64>> {
    if signal.len() < 2 {
        return Err(Error::TooShort(signal.len()));
    }
    if signal.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("signal".into()));
    }
    let constant = signal.iter().all(|&v| v == signal[0]);
    Ok(if remove_dc && constant {
        vec![0.0; signal.len()]
    } else if remove_dc {
        let mean = signal.iter().sum::<f64>() / signal.len() as f64;
        signal.iter().map(|v| v - mean).collect()
    } else {
        signal.to_vec()
    })
}

/// One-sided squared-magnitude DFT, bins `0..=T/2`, optionally after
/// subtracting the mean.
pub fn power_spectrum(signal: &[f64], remove_dc: bool) -> Result<Vec<f64>> {
    let x = prepare(signal, remove_dc)?;
    Ok(Twiddles::new(x.len()).power(&x))
}

/// Divides by the total; an all-zero spectrum stays all zero.
pub fn normalize_spectrum(power: &[f64]) -> Vec<f64> {
    let total: f64 = power.iter().sum();
    if total > 0.0 {
        power.iter().map(|p| p / total).collect()
    } else {
        vec![0.0; power.len()]
    }
}

// ------------------------------------------------------------------ NPSS

/// How each (sequence, feature) distance is weighted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Total ground-truth power of the channel.
    #[default]
    RawPower,
    /// Mass of the normalized ground-truth spectrum: 1 for moving channels,
    /// 0 for still ones, giving an unweighted mean.
    NormalizedPower,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NpssOptions {
    pub remove_dc: bool,
    pub weighting: Weighting,
}

impl Default for NpssOptions {
    fn default() -> Self {
        Self {
            remove_dc: true,
            weighting: Weighting::RawPower,
        }
    }
}

/// Distance assigned when the prediction has no power where the truth does.
pub const MAX_EMD: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameWindow {
    pub start_frame: usize,
    pub end_frame: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairEmd {
    pub seq: usize,
    pub feature: usize,
    pub emd: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NpssReport {
    pub action: String,
    pub window: FrameWindow,
    pub npss: f64,
    pub pairs: Vec<PairEmd>,
}

/// L1 distance between normalized spectra, with the zero-prediction rule.
pub fn spectral_emd(truth_power: &[f64], pred_power: &[f64]) -> f64 {
    let pred_total: f64 = pred_power.iter().sum();
    let truth_total: f64 = truth_power.iter().sum();
    if pred_total <= 0.0 && truth_total > 0.0 {
        return MAX_EMD;
    }
    let x = normalize_spectrum(truth_power);
    let y = normalize_spectrum(pred_power);
    x.iter().zip(&y).map(|(a, b)| (a - b).abs()).sum()
}

/// NPSS over frames `start..end` of every pair.
pub fn npss(set: &EvalSet, start: usize, end: usize, opts: NpssOptions) -> Result<NpssReport> {
    let len = set.frames();
    if start >= end || end > len {
        return Err(Error::WindowOutOfRange { start, end, len });
    }
    let twiddles = Twiddles::new(end - start);
    let mut pairs = Vec::new();
    let (mut num, mut den) = (0.0, 0.0);
    for (i, (truth, pred)) in set.pairs.iter().enumerate() {
        for j in 0..truth.ncols() {
            let tx = prepare(&truth.slice(s![start..end, j]).to_vec(), opts.remove_dc)?;
            let px = prepare(&pred.slice(s![start..end, j]).to_vec(), opts.remove_dc)?;
            let tp = twiddles.power(&tx);
            let total: f64 = tp.iter().sum();
            if total <= 0.0 {
                continue;
            }
            let weight = match opts.weighting {
                Weighting::RawPower => total,
                Weighting::NormalizedPower => 1.0,
            };
            let emd = spectral_emd(&tp, &twiddles.power(&px));
            num += weight * emd;
            den += weight;
            pairs.push(PairEmd {
                seq: i,
                feature: j,
                emd,
                weight,
            });
        }
    }
    if !(den > 0.0) {
        return Err(Error::DegenerateEvalSet);
    }
    Ok(NpssReport {
        action: set.action.clone(),
        window: FrameWindow {
            start_frame: start,
            end_frame: end,
        },
        npss: num / den,
        pairs,
    })
}

/// Converts `[start_s, end_s)` in seconds to whole frames.
pub fn seconds_to_frames(start_s: f64, end_s: f64, fps: f64) -> Result<(usize, usize)> {
    let conv = |sec: f64| -> Result<usize> {
        let exact = sec * fps;
        let rounded = exact.round();
        if sec < 0.0 || (exact - rounded).abs() > 1e-9 {
            return Err(Error::FrameRateMismatch { ms: sec * 1000.0, fps });
        }
        Ok(rounded as usize)
    };
    Ok((conv(start_s)?, conv(end_s)?))
}

/// NPSS recomputed independently inside each window (given in seconds).
pub fn npss_windowed(set: &EvalSet, windows_s: &[(f64, f64)], opts: NpssOptions) -> Result<Vec<NpssReport>> {
    windows_s
        .iter()
        .map(|&(a, b)| {
            let (start, end) = seconds_to_frames(a, b, set.frame_rate_hz)?;
            npss(set, start, end, opts)
        })
        .collect()
}

/// Repeats the last seed frame `horizon` times.
pub fn zero_velocity_predict(seed: ArrayView2<'_, f64>, horizon: usize) -> Result<Array2<f64>> {
    if seed.nrows() == 0 {
        return Err(Error::Empty);
    }
    let last = seed.row(seed.nrows() - 1);
    if horizon == 0 {
        return Err(Error::BadConfig("horizon must be at least 1".into()));
    }
    let mut out = Array2::zeros((horizon, last.len()));
    for mut row in out.rows_mut() {
        row.assign(&last);
    }
    Ok(out)
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};
    use proptest::prelude::*;

    fn sine(bin: usize, t_len: usize, phase: f64, amp: f64) -> Vec<f64> {
        (0..t_len)
            .map(|t| amp * (2.0 * PI * bin as f64 * t as f64 / t_len as f64 + phase).sin())
            .collect()
    }

    fn column(v: &[f64]) -> Array2<f64> {
        Array2::from_shape_vec((v.len(), 1), v.to_vec()).unwrap()
    }

    fn single(truth: &[f64], pred: &[f64]) -> EvalSet {
        EvalSet::new("a", vec![(column(truth), column(pred))], 25.0).unwrap()
    }

    /// Brute-force DFT with freshly evaluated exponentials.
    fn naive_power(x: &[f64]) -> Vec<f64> {
        let n = x.len();
        (0..=n / 2)
            .map(|f| {
                let (mut re, mut im) = (0.0, 0.0);
                for (t, v) in x.iter().enumerate() {
                    let a = -2.0 * PI * (f * t) as f64 / n as f64;
                    re += v * a.cos();
                    im += v * a.sin();
                }
                re * re + im * im
            })
            .collect()
    }

    #[test]
    fn constant_signal_has_no_power() {
        let p = power_spectrum(&[0.3; 10], true).unwrap();
        assert!(p.iter().all(|&v| v == 0.0));
        assert!(matches!(power_spectrum(&[1.0], true), Err(Error::TooShort(1))));
    }

    #[test]
    fn integer_bin_concentrates() {
        let p = power_spectrum(&sine(4, 64, 0.0, 1.0), true).unwrap();
        assert_eq!(p.len(), 33);
        // |X[4]| = T/2
        assert!((p[4] - 32.0f64.powi(2)).abs() < 1e-9);
        for (f, v) in p.iter().enumerate() {
            if f != 4 {
                assert!(*v <= 1e-18 * p[4], "bin {f}: {v}");
            }
        }
    }

    #[test]
    fn matches_naive_dft() {
        let x: Vec<f64> = (0..37).map(|t| ((t * t) % 11) as f64 * 0.1 - 0.3).collect();
        let a = power_spectrum(&x, false).unwrap();
        let b = naive_power(&x);
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() <= 1e-10 * v.abs().max(1.0));
        }
    }

    fn parseval_gap(x: &[f64]) -> f64 {
        let n = x.len();
        let mean = x.iter().sum::<f64>() / n as f64;
        let energy: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
        let p = power_spectrum(x, true).unwrap();
        let mut total = p[0];
        for f in 1..p.len() {
            let doubled = !(n % 2 == 0 && f == n / 2);
            total += if doubled { 2.0 * p[f] } else { p[f] };
        }
        (total / n as f64 - energy).abs() / energy.max(1e-300)
    }

    proptest! {
        #[test]
        fn parseval(x in proptest::collection::vec(-5.0f64..5.0, 2..80)) {
            prop_assume!(x.iter().any(|&v| v != x[0]));
            prop_assert!(parseval_gap(&x) <= 1e-10);
        }

        #[test]
        fn npss_bounded(
            t in proptest::collection::vec(-1.0f64..1.0, 16),
            p in proptest::collection::vec(-1.0f64..1.0, 16),
        ) {
            prop_assume!(t.iter().any(|&v| v != t[0]));
            let set = EvalSet::new(
                "a",
                vec![(Array2::from_shape_vec((8, 2), t).unwrap(), Array2::from_shape_vec((8, 2), p).unwrap())],
                25.0,
            ).unwrap();
            if let Ok(r) = npss(&set, 0, 8, NpssOptions::default()) {
                prop_assert!((0.0..=2.0).contains(&r.npss));
                for pe in &r.pairs {
                    prop_assert!((0.0..=2.0).contains(&pe.emd));
                }
            }
        }
    }

    #[test]
    fn npss_identity_and_scaling() {
        let truth = sine(3, 32, 0.4, 1.0);
        assert_eq!(npss(&single(&truth, &truth), 0, 32, NpssOptions::default()).unwrap().npss, 0.0);
        let scaled: Vec<f64> = truth.iter().map(|v| 2.5 * v).collect();
        assert!(npss(&single(&truth, &scaled), 0, 32, NpssOptions::default()).unwrap().npss <= 1e-12);
    }

    #[test]
    fn disjoint_bins_give_two() {
        let r = npss(&single(&sine(4, 64, 0.0, 1.0), &sine(8, 64, 0.0, 1.0)), 0, 64, NpssOptions::default()).unwrap();
        assert!((r.npss - 2.0).abs() <= 1e-12);
        assert!((r.pairs[0].emd - 2.0).abs() <= 1e-12);
    }

    #[test]
    fn circular_shift_is_invisible() {
        let truth = sine(5, 40, 0.2, 0.7);
        let mut shifted = truth.clone();
        shifted.rotate_right(3);
        let r = npss(&single(&truth, &shifted), 0, 40, NpssOptions::default()).unwrap();
        assert!(r.npss <= 1e-9, "{}", r.npss);
    }

    #[test]
    fn zero_prediction_power_is_maximal() {
        let r = npss(&single(&sine(2, 16, 0.0, 1.0), &[0.4; 16]), 0, 16, NpssOptions::default()).unwrap();
        assert_eq!(r.pairs[0].emd, MAX_EMD);
    }

    #[test]
    fn degenerate_eval_set() {
        let err = npss(&single(&[1.0; 8], &sine(1, 8, 0.0, 1.0)), 0, 8, NpssOptions::default()).unwrap_err();
        assert!(matches!(err, Error::DegenerateEvalSet));
    }

    #[test]
    fn raw_power_weighting_by_hand() {
        // channel 0: amplitude 1, exact; channel 1: amplitude 2, disjoint bins
        let t_len = 16;
        let truth = Array2::from_shape_fn((t_len, 2), |(t, j)| sine(1, t_len, 0.0, (j + 1) as f64)[t]);
        let mut pred = truth.clone();
        for t in 0..t_len {
            pred[[t, 1]] = sine(3, t_len, 0.0, 2.0)[t];
        }
        let set = EvalSet::new("a", vec![(truth, pred)], 25.0).unwrap();
        let raw = npss(&set, 0, t_len, NpssOptions::default()).unwrap();
        // weights ∝ amplitude² → (1·0 + 4·2) / 5
        assert!((raw.npss - 8.0 / 5.0).abs() < 1e-12);
        let flat = npss(
            &set,
            0,
            t_len,
            NpssOptions {
                weighting: Weighting::NormalizedPower,
                ..NpssOptions::default()
            },
        )
        .unwrap();
        assert!((flat.npss - 1.0).abs() < 1e-12);
    }

    #[test]
    fn asymmetric_in_general() {
        // a loud matching channel and a quiet mismatched one; swapping roles
        // moves the weight onto the mismatch
        let truth = Array2::from_shape_fn((16, 2), |(t, j)| sine(1, 16, 0.0, if j == 0 { 3.0 } else { 0.1 })[t]);
        let pred = Array2::from_shape_fn((16, 2), |(t, j)| {
            if j == 0 {
                sine(1, 16, 0.0, 0.1)[t]
            } else {
                sine(2, 16, 0.0, 3.0)[t]
            }
        });
        let fwd = EvalSet::new("a", vec![(truth.clone(), pred.clone())], 25.0).unwrap();
        let back = EvalSet::new("a", vec![(pred, truth)], 25.0).unwrap();
        let ab = npss(&fwd, 0, 16, NpssOptions::default()).unwrap().npss;
        let ba = npss(&back, 0, 16, NpssOptions::default()).unwrap().npss;
        assert!((ab - 0.02 / 9.01).abs() < 1e-12, "{ab}");
        assert!((ba - 18.0 / 9.01).abs() < 1e-12, "{ba}");
    }

    #[test]
    fn permutation_invariance() {
        let mk = |seed: usize| Array2::from_shape_fn((12, 3), |(t, j)| ((t * 7 + j * 3 + seed) % 5) as f64);
        let pairs = vec![(mk(0), mk(1)), (mk(2), mk(3))];
        let a = npss(&EvalSet::new("a", pairs.clone(), 25.0).unwrap(), 0, 12, NpssOptions::default()).unwrap();
        let rev: Vec<_> = pairs.into_iter().rev().collect();
        let b = npss(&EvalSet::new("a", rev, 25.0).unwrap(), 0, 12, NpssOptions::default()).unwrap();
        assert!((a.npss - b.npss).abs() < 1e-12);
    }

    #[test]
    fn windows() {
        let t_len = 100;
        let first = sine(2, 25, 0.0, 1.0);
        let truth: Vec<f64> = (0..t_len).map(|t| if t < 25 { first[t] } else { sine(2, 25, 0.0, 1.0)[t % 25] }).collect();
        let pred: Vec<f64> = (0..t_len)
            .map(|t| if t < 25 { first[t] } else if t < 50 { sine(5, 25, 0.0, 1.0)[t - 25] } else { truth[t] })
            .collect();
        let set = single(&truth, &pred);
        let reports = npss_windowed(&set, &[(0.0, 1.0), (1.0, 2.0), (2.0, 4.0)], NpssOptions::default()).unwrap();
        assert_eq!(reports[0].window, FrameWindow { start_frame: 0, end_frame: 25 });
        assert_eq!(reports[2].window, FrameWindow { start_frame: 50, end_frame: 100 });
        assert!(reports[0].npss.abs() < 1e-12);
        assert!((reports[1].npss - 2.0).abs() < 1e-12);
        let full = npss_windowed(&set, &[(0.0, 4.0)], NpssOptions::default()).unwrap();
        assert_eq!(full[0], npss(&set, 0, 100, NpssOptions::default()).unwrap());
        assert!(matches!(
            npss_windowed(&set, &[(3.0, 5.0)], NpssOptions::default()),
            Err(Error::WindowOutOfRange { .. })
        ));
        assert!(matches!(npss(&set, 10, 10, NpssOptions::default()), Err(Error::WindowOutOfRange { .. })));
    }

    #[test]
    fn slice_conversion() {
        assert_eq!(ms_to_frame(80.0, 25.0).unwrap(), 2);
        assert_eq!(ms_to_frame(1000.0, 25.0).unwrap(), 25);
        assert!(matches!(ms_to_frame(90.0, 25.0), Err(Error::FrameRateMismatch { .. })));
    }

    #[test]
    fn slice_errors() {
        let truth = Array2::zeros((25, 3));
        let set = EvalSet::new("a", vec![(truth.clone(), truth.clone())], 25.0).unwrap();
        let r = euler_mse_at_slices(&set, &[80.0, 160.0, 320.0, 400.0], false).unwrap();
        assert!(r.iter().all(|s| s.mean_distance == 0.0));
        // a rotation about z by 0.1 rad shows up as a 0.1 yaw difference
        let mut pred = truth.clone();
        pred.column_mut(2).fill(0.1);
        let set = EvalSet::new("a", vec![(truth, pred)], 25.0).unwrap();
        let r = euler_mse_at_slices(&set, &[80.0], false).unwrap();
        assert!((r[0].mean_distance - 0.1).abs() < 1e-12);
        assert!(matches!(
            euler_mse_at_slices(&set, &[1040.0], false),
            Err(Error::SliceOutOfRange { frame: 26, len: 25, .. })
        ));
    }

    #[test]
    fn wrap_flag() {
        let a = array![0.0, 0.0, 3.1];
        let b = array![0.0, 0.0, -3.1];
        assert!((euler_distance(a.view(), b.view(), false).unwrap() - 6.2).abs() < 1e-9);
        assert!((euler_distance(a.view(), b.view(), true).unwrap() - (2.0 * PI - 6.2)).abs() < 1e-9);
    }

    #[test]
    fn zero_velocity() {
        let seed = array![[0.0, 1.0], [0.5, -0.2]];
        let p = zero_velocity_predict(seed.view(), 3).unwrap();
        for row in p.rows() {
            assert_eq!(row, Array1::from(vec![0.5, -0.2]));
        }
        // its prediction has no power, so every moving truth channel is maximal
        let truth = column(&sine(1, 12, 0.0, 1.0));
        let zv = zero_velocity_predict(truth.slice(s![..1, ..]), 12).unwrap();
        let set = EvalSet::new("a", vec![(truth, zv)], 25.0).unwrap();
        let r = npss(&set, 0, 12, NpssOptions::default()).unwrap();
        assert!(r.pairs.iter().all(|p| p.emd == MAX_EMD));
    }

    #[test]
    fn mean_std_values() {
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
    }
}
