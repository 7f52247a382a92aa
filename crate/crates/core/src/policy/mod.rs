//! Deterministic feedback policies `u = π_θ(z)` with hand-derived reverse-mode
//! derivatives.
//!
//! A policy sees the environment's feature vector `z`, not the raw state; the
//! chain through the feature map is applied by the caller. Everything a
//! gradient estimator needs is exposed through [`Policy`]: the output, the
//! input Jacobian `∂π/∂z`, and vector-Jacobian products `vᵀ ∂π/∂θ`. The
//! parameter Jacobian itself is never materialized.

mod io;
mod linear;
mod mlp;

pub use io::{load_params, save_params, ParamsMeta};
pub use linear::ScalarGain;
pub use mlp::{init_params, linear_policy, Mlp, MlpArch};

use std::ops::{Deref, DerefMut};

use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension { what: &'static str, expected: usize, got: usize },
    #[error("invalid architecture: {0}")]
    Arch(String),
    #[error("parameter file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<(), PolicyError> {
    if expected == got {
        Ok(())
    } else {
        Err(PolicyError::Dimension { what, expected, got })
    }
}

/// The flat policy parameter vector θ.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FlatParams(Vec<f64>);

impl FlatParams {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl From<Vec<f64>> for FlatParams {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl Deref for FlatParams {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for FlatParams {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// Activations recorded by [`Policy::forward`] for the backward sweeps.
/// `layers[0]` is the input; the rest are layer outputs.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    pub(crate) layers: Vec<Vec<f64>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn input(&self) -> &[f64] {
        &self.layers[0]
    }
}

/// A differentiable deterministic policy. Slices passed in must match the
/// declared dimensions; the checked free-standing helpers on [`Mlp`] are the
/// place for untrusted input.
pub trait Policy: Send + Sync {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn num_params(&self) -> usize;

    /// Writes `π_θ(z)` into `u` and records the activations in `tape`.
    fn forward(&self, params: &[f64], z: &[f64], tape: &mut Tape, u: &mut [f64]);

    /// `∂π/∂z` (output_dim × input_dim) at the point recorded in `tape`.
    fn input_jacobian(&self, params: &[f64], tape: &Tape, jac: &mut DMatrix<f64>);

    /// `out += scale · vᵀ ∂π/∂θ` at the point recorded in `tape`.
    fn accumulate_param_vjp(&self, params: &[f64], tape: &Tape, v: &[f64], scale: f64, out: &mut [f64]);

    /// A stable one-line description used in output fingerprints.
    fn describe(&self) -> String;
}
