//! Minimal dense/convolutional building blocks with hand-written reverse
//! passes. Everything runs in `f64` so analytic gradients can be checked
//! against central differences.

mod layers;
mod network;
mod optim;

pub use layers::{ComplexConv1d, Conv1d, Linear};
pub use network::{Layer, Mlp, MlpCache, Network, NetworkCache, Shape};
pub use optim::{Optimizer, OptimizerKind};

use serde::{Deserialize, Serialize};

use crate::error::{CashError, Result};

/// A borrowed view of one named parameter tensor.
#[derive(Debug, Clone, Copy)]
pub struct ParamView<'a> {
    pub shape: &'a [usize],
    pub data: &'a [f64],
}

/// Anything that owns trainable tensors. The order of `params` and
/// `params_mut` must agree; names are used for snapshots.
pub trait Parameterized {
    fn params(&self) -> Vec<(String, ParamView<'_>)>;
    fn params_mut(&mut self) -> Vec<&mut [f64]>;

    fn param_count(&self) -> usize {
        self.params().iter().map(|(_, p)| p.data.len()).sum()
    }

    fn zero(&mut self) {
        for t in self.params_mut() {
            t.fill(0.0);
        }
    }

    fn zeros_like(&self) -> Self
    where
        Self: Clone + Sized,
    {
        let mut g = self.clone();
        g.zero();
        g
    }

    /// `self += other`, tensor by tensor.
    fn accumulate(&mut self, other: &Self)
    where
        Self: Sized,
    {
        let src: Vec<Vec<f64>> = other.params().iter().map(|(_, p)| p.data.to_vec()).collect();
        for (dst, src) in self.params_mut().into_iter().zip(src) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    fn all_finite(&self) -> bool {
        self.params().iter().all(|(_, p)| p.data.iter().all(|v| v.is_finite()))
    }
}

/// Prefixes every tensor name of `inner` with `prefix.`.
pub(crate) fn prefixed<'a>(prefix: &str, inner: Vec<(String, ParamView<'a>)>) -> Vec<(String, ParamView<'a>)> {
    inner.into_iter().map(|(n, v)| (format!("{prefix}.{n}"), v)).collect()
}

/// One tensor in a serialized archive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

pub fn export_tensors<P: Parameterized + ?Sized>(module: &P) -> Vec<NamedTensor> {
    module
        .params()
        .into_iter()
        .map(|(name, v)| NamedTensor { name, shape: v.shape.to_vec(), data: v.data.to_vec() })
        .collect()
}

/// Loads tensors by name into an already-shaped module.
pub fn import_tensors<P: Parameterized + ?Sized>(module: &mut P, tensors: &[NamedTensor]) -> Result<()> {
    let layout: Vec<(String, Vec<usize>)> = module.params().into_iter().map(|(n, v)| (n, v.shape.to_vec())).collect();
    let by_name: std::collections::HashMap<&str, &NamedTensor> = tensors.iter().map(|t| (t.name.as_str(), t)).collect();
    for ((name, shape), dst) in layout.iter().zip(module.params_mut()) {
        let t =
            by_name.get(name.as_str()).ok_or_else(|| CashError::InvalidParameter(format!("missing tensor {name}")))?;
        if &t.shape != shape || t.data.len() != dst.len() {
            return Err(CashError::InvalidParameter(format!(
                "tensor {name} has shape {:?}, expected {:?}",
                t.shape, shape
            )));
        }
        dst.copy_from_slice(&t.data);
    }
    Ok(())
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn relu_inplace(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeroes `grad` wherever the forward activation was clipped.
#[inline]
pub(crate) fn relu_backward(pre: &[f64], grad: &mut [f64]) {
    for (g, p) in grad.iter_mut().zip(pre) {
        if *p <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Forward L2 normalization; returns the norm used.
pub(crate) fn l2_normalize(x: &[f64]) -> (Vec<f64>, f64) {
    let norm = dot(x, x).sqrt().max(1e-12);
    (x.iter().map(|v| v / norm).collect(), norm)
}

/// Backward of `y = x / |x|`.
pub(crate) fn l2_normalize_backward(y: &[f64], norm: f64, dy: &[f64]) -> Vec<f64> {
    let proj = dot(y, dy);
    y.iter().zip(dy).map(|(yi, gi)| (gi - yi * proj) / norm).collect()
}
