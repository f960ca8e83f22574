//! Minimal reverse-mode neural-network layers.
//!
//! Every layer is an explicit struct holding parameter handles into a
//! [`ParamStore`]; `forward` returns the output plus a typed cache, and
//! `backward` consumes the cache, accumulates parameter gradients into a
//! [`Grads`] and returns the input gradient. Layers are generic over the
//! scalar so training runs at f32 while gradient checks run at f64.

mod attention;
mod conv;
mod linear;
mod norm;
pub mod ops;

pub use attention::{DualPathBlock, DualPathCache, PathAxis, TransformerBlock};
pub use conv::{Conv2d, ConvCache};
pub use linear::{Linear, LinearCache};
pub use norm::{GroupNorm, GroupNormCache, LayerNorm, LayerNormCache};

use ndarray::{ArrayD, ScalarOperand};
use rand::Rng;

/// Floating-point scalar the network can run on.
pub trait Scalar:
    num_traits::Float
    + num_traits::NumAssign
    + ndarray::LinalgScalar
    + ScalarOperand
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    fn of_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    /// Dtype tag used in checkpoint files.
    const DTYPE: &'static str;
}

impl Scalar for f32 {
    fn of_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    const DTYPE: &'static str = "f32";
}

impl Scalar for f64 {
    fn of_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    const DTYPE: &'static str = "f64";
}

/// Handle to one named parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub usize);

/// Flat registry of named parameter tensors. Registration order is the
/// canonical order for initialization draws, optimizer state and
/// checkpoint layout.
#[derive(Debug, Clone)]
pub struct ParamStore<S> {
    names: Vec<String>,
    values: Vec<ArrayD<S>>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self { names: Vec::new(), values: Vec::new() }
    }

    pub fn register(&mut self, name: impl Into<String>, value: ArrayD<S>) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &ArrayD<S> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ArrayD<S> {
        &mut self.values[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<S>)> {
        self.names.iter().map(|n| n.as_str()).zip(self.values.iter())
    }

    /// Total scalar parameter count.
    pub fn total_count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Cast every tensor to another scalar type (used to run f64 gradient
    /// checks on an f32-trained model and vice versa).
    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        ParamStore {
            names: self.names.clone(),
            values: self
                .values
                .iter()
                .map(|v| v.mapv(|x| T::of_f64(x.as_f64())))
                .collect(),
        }
    }
}

impl<S: Scalar> Default for ParamStore<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// Per-parameter gradient accumulator, indexed like the store.
#[derive(Debug)]
pub struct Grads<S> {
    values: Vec<Option<ArrayD<S>>>,
}

impl<S: Scalar> Grads<S> {
    pub fn zeros_like(store: &ParamStore<S>) -> Self {
        Self { values: vec![None; store.len()] }
    }

    pub fn accumulate(&mut self, id: ParamId, grad: ArrayD<S>) {
        match &mut self.values[id.0] {
            Some(g) => *g += &grad,
            slot => *slot = Some(grad),
        }
    }

    /// Gradient for a parameter; `None` means the loss did not depend on it.
    pub fn get(&self, id: ParamId) -> Option<&ArrayD<S>> {
        self.values[id.0].as_ref()
    }

    /// Sum another gradient set into this one (batch accumulation).
    pub fn merge(&mut self, other: Grads<S>) {
        for (i, g) in other.values.into_iter().enumerate() {
            if let Some(g) = g {
                self.accumulate(ParamId(i), g);
            }
        }
    }

    /// Multiply every gradient by a constant.
    pub fn scale(&mut self, k: S) {
        for g in self.values.iter_mut().flatten() {
            g.mapv_inplace(|v| v * k);
        }
    }

    /// Global L2 norm over all gradients.
    pub fn global_norm(&self) -> f64 {
        self.values
            .iter()
            .flatten()
            .flat_map(|g| g.iter())
            .map(|&v| v.as_f64() * v.as_f64())
            .sum::<f64>()
            .sqrt()
    }
}

/// Xavier-uniform initialization: `U(-a, a)` with `a = sqrt(6/(fan_in+fan_out))`.
pub fn xavier_uniform<S: Scalar, R: Rng + ?Sized>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> ArrayD<S> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut out = ArrayD::zeros(ndarray::IxDyn(shape));
    for v in out.iter_mut() {
        *v = S::of_f64(rng.gen_range(-a..a));
    }
    out
}

pub fn zeros<S: Scalar>(shape: &[usize]) -> ArrayD<S> {
    ArrayD::zeros(ndarray::IxDyn(shape))
}

pub fn ones<S: Scalar>(shape: &[usize]) -> ArrayD<S> {
    ArrayD::from_elem(ndarray::IxDyn(shape), S::one())
}
