//! Central finite-difference verification of analytic gradients.

use crate::error::{Error, Result};
use crate::params::ParamTensors;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Denominator floor of the relative error.
pub const REL_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorError {
    pub name: String,
    pub max_rel_err: f64,
    /// Flat index of the worst entry.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub tensors: Vec<TensorError>,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_err <= tolerance
    }
}

/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Compares `analytic` against `(L(θ + h e_k) - L(θ - h e_k)) / 2h` for every
/// scalar of every tensor. The loss must be a pure function of the
/// parameters; it is evaluated twice at `params` first to confirm that.
pub fn grad_check<P, F>(params: &P, analytic: &P, step: f64, mut loss: F) -> Result<GradCheckReport>
where
    P: ParamTensors + Clone,
    F: FnMut(&P) -> Result<f64>,
{
    let first = loss(params)?;
    let second = loss(params)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministicClosure { first, second });
    }
    let grads: Vec<(String, Vec<f64>)> = analytic
        .tensors()
        .into_iter()
        .map(|(n, t)| (n, t.iter().copied().collect()))
        .collect();
    let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
    if names.len() != grads.len() || names.iter().zip(&grads).any(|(a, (b, _))| a != b) {
        return Err(Error::dims("gradient set does not match parameter set"));
    }

    let mut probe = params.clone();
    let mut tensors = Vec::with_capacity(grads.len());
    for (k, (name, grad)) in grads.iter().enumerate() {
        let mut worst = TensorError {
            name: name.clone(),
            max_rel_err: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for (idx, &a) in grad.iter().enumerate() {
            let original = nth(&probe, k, idx);
            set_nth(&mut probe, k, idx, original + step);
            let plus = loss(&probe)?;
            set_nth(&mut probe, k, idx, original - step);
            let minus = loss(&probe)?;
            set_nth(&mut probe, k, idx, original);
            let numeric = (plus - minus) / (2.0 * step);
            let err = relative_error(a, numeric);
            if err > worst.max_rel_err || !err.is_finite() {
                worst = TensorError {
                    name: name.clone(),
                    max_rel_err: if err.is_finite() { err } else { f64::INFINITY },
                    worst_index: idx,
                    analytic: a,
                    numeric,
                };
            }
        }
        tensors.push(worst);
    }
    let top = tensors
        .iter()
        .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
        .cloned();
    Ok(GradCheckReport {
        max_rel_err: top.as_ref().map_or(0.0, |t| t.max_rel_err),
        worst_param: top.map(|t| t.name).unwrap_or_default(),
        tensors,
    })
}

fn nth<P: ParamTensors>(p: &P, tensor: usize, idx: usize) -> f64 {
    let (_, t) = &p.tensors()[tensor];
    match t.as_slice() {
        Some(s) => s[idx],
        None => *t.iter().nth(idx).expect("index in range"),
    }
}

fn set_nth<P: ParamTensors>(p: &mut P, tensor: usize, idx: usize, value: f64) {
    let mut all = p.tensors_mut();
    let (_, t) = &mut all[tensor];
    match t.as_slice_mut() {
        Some(s) => s[idx] = value,
        None => *t.iter_mut().nth(idx).expect("index in range") = value,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::TensorSet;
    use ndarray::{ArrayD, IxDyn};

    fn quadratic_setup() -> (TensorSet, TensorSet) {
        let mut p = TensorSet::new();
        p.push("a", ArrayD::from_shape_vec(IxDyn(&[2, 2]), vec![0.5, -1.0, 2.0, 0.1]).unwrap());
        p.push("b", ArrayD::from_shape_vec(IxDyn(&[3]), vec![3.0, -0.2, 0.7]).unwrap());
        let mut g = p.clone();
        for (_, mut t) in g.tensors_mut() {
            t.mapv_inplace(|v| 2.0 * v);
        }
        (p, g)
    }

    fn sq_norm(p: &TensorSet) -> Result<f64> {
        Ok(p.global_norm().powi(2))
    }

    #[test]
    fn quadratic_is_exact() {
        let (p, g) = quadratic_setup();
        let report = grad_check(&p, &g, DEFAULT_STEP, sq_norm).unwrap();
        assert!(report.max_rel_err <= 1e-9, "{report:?}");
    }

    #[test]
    fn corrupted_entry_is_located() {
        let (p, mut g) = quadratic_setup();
        g.entries[1].1[[1]] *= 2.0;
        let report = grad_check(&p, &g, DEFAULT_STEP, sq_norm).unwrap();
        assert_eq!(report.worst_param, "b");
        assert_eq!(report.tensors[1].worst_index, 1);
        assert!(report.max_rel_err > 0.4);
        assert!(report.tensors[0].max_rel_err <= 1e-9);
    }

    #[test]
    fn non_deterministic_closure() {
        let (p, g) = quadratic_setup();
        let mut calls = 0.0;
        let err = grad_check(&p, &g, DEFAULT_STEP, |_| {
            calls += 1.0;
            Ok(calls)
        })
        .unwrap_err();
        assert!(matches!(err, Error::NonDeterministicClosure { .. }));
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1e-10, 0.0) - 1e-2).abs() < 1e-15);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
    }
}
