//! Named access to parameter tensors, shared by the optimizer, gradient
//! clipping, gradient checking and checkpointing.

use ndarray::{ArrayD, ArrayViewD, ArrayViewMutD, IxDyn};

pub trait ParamTensors {
    /// Every trainable tensor in a fixed order.
    fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)>;
    /// Same order and names as [`tensors`](Self::tensors).
    fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)>;

    fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    fn fill_zero(&mut self) {
        for (_, mut t) in self.tensors_mut() {
            t.fill(0.0);
        }
    }

    /// `self += scale * other`, tensor by tensor.
    fn add_scaled(&mut self, scale: f64, other: &Self)
    where
        Self: Sized,
    {
        let src = other.tensors();
        for ((_, mut dst), (_, s)) in self.tensors_mut().into_iter().zip(src) {
            dst.scaled_add(scale, &s);
        }
    }

    fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .map(|(_, t)| t.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }
}

/// A loose bag of named tensors, for tests and for tensors that do not belong
/// to a model.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TensorSet {
    pub entries: Vec<(String, ArrayD<f64>)>,
}

impl TensorSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: ArrayD<f64>) {
        self.entries.push((name.into(), tensor));
    }

    pub fn from_params<P: ParamTensors + ?Sized>(params: &P) -> Self {
        Self {
            entries: params
                .tensors()
                .into_iter()
                .map(|(n, t)| (n, t.to_owned()))
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<f64>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), ArrayD::zeros(IxDyn(t.shape()))))
                .collect(),
        }
    }
}

impl ParamTensors for TensorSet {
    fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        self.entries.iter().map(|(n, t)| (n.clone(), t.view())).collect()
    }

    fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        self.entries
            .iter_mut()
            .map(|(n, t)| (n.clone(), t.view_mut()))
            .collect()
    }
}
