//! Differentiable continuous-time environments.
//!
//! An environment supplies the dynamics `f(x, u)` with its Jacobians, the
//! running cost `w(x, u)` and terminal cost `J(x)` with their gradients, a
//! feature map `z = φ(x)` fed to the policy, and an initial-state sampler.
//!
//! Oracle calls are counted through a caller-owned [`NfeCounter`] passed to
//! every dynamics-side method, so environments stay immutable and can be
//! shared across threads. Cost evaluations are not counted.

mod diffdrive;
mod electric;
mod fd;
mod lqr;

pub use diffdrive::DiffDriveEnv;
pub use electric::{ElectricEnv, ElectricParams};
pub use fd::FiniteDifferenceEnv;
pub use lqr::{lqr_optimal_gain, LqrEnv};

use nalgebra::DMatrix;
use rand::Rng;
use thiserror::Error;

use crate::ode::NfeCounter;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("{0} must be symmetric")]
    NotSymmetric(&'static str),
    #[error("R must be positive definite")]
    NotPositiveDefinite,
    #[error("Riccati iteration did not converge after {iterations} steps (residual {residual:e})")]
    RiccatiNoConvergence { iterations: usize, residual: f64 },
    #[error("(A, B) is not controllable enough to build a stabilizing initial gain")]
    NotStabilizable,
    #[error("invalid parameter: {0}")]
    Invalid(String),
}

/// Distribution of starting states.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialStateDist {
    Fixed(Vec<f64>),
    /// Independent uniform draws on `[lo_i, hi_i)`; equal bounds pin a
    /// coordinate. Every coordinate consumes one draw either way.
    Uniform { lo: Vec<f64>, hi: Vec<f64> },
}

impl InitialStateDist {
    pub fn dim(&self) -> usize {
        match self {
            InitialStateDist::Fixed(x) => x.len(),
            InitialStateDist::Uniform { lo, .. } => lo.len(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            InitialStateDist::Fixed(x) => x.clone(),
            InitialStateDist::Uniform { lo, hi } => lo
                .iter()
                .zip(hi)
                .map(|(&l, &h)| {
                    let r: f64 = rng.random();
                    l + (h - l) * r
                })
                .collect(),
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            InitialStateDist::Fixed(p) => p.as_slice() == x,
            InitialStateDist::Uniform { lo, hi } => {
                x.len() == lo.len()
                    && x.iter().zip(lo.iter().zip(hi)).all(|(&v, (&l, &h))| if l == h { v == l } else { l <= v && v < h })
            }
        }
    }
}

/// A differentiable control environment. Matrix outputs are written into
/// caller-provided buffers of the right shape.
pub trait Environment: Send + Sync {
    fn name(&self) -> &str;
    fn dim_x(&self) -> usize;
    fn dim_u(&self) -> usize;
    /// Horizon `T` in seconds.
    fn horizon(&self) -> f64;

    /// `f(x, u)`; one `n_f`.
    fn dynamics(&self, x: &[f64], u: &[f64], out: &mut [f64], nfe: &mut NfeCounter);
    /// `∂f/∂x` (d×d); one `n_dfdx`.
    fn dfdx(&self, x: &[f64], u: &[f64], out: &mut DMatrix<f64>, nfe: &mut NfeCounter);
    /// `∂f/∂u` (d×k); one `n_dfdu`.
    fn dfdu(&self, x: &[f64], u: &[f64], out: &mut DMatrix<f64>, nfe: &mut NfeCounter);

    /// Both Jacobians at one point. Black-box adapters override this to share
    /// the base evaluation.
    fn jacobians(&self, x: &[f64], u: &[f64], a: &mut DMatrix<f64>, b: &mut DMatrix<f64>, nfe: &mut NfeCounter) {
        self.dfdx(x, u, a, nfe);
        self.dfdu(x, u, b, nfe);
    }

    /// Running cost `w(x, u)`.
    fn cost(&self, x: &[f64], u: &[f64]) -> f64;
    /// Partial gradients `∂w/∂x`, `∂w/∂u`.
    fn cost_grad(&self, x: &[f64], u: &[f64], dwdx: &mut [f64], dwdu: &mut [f64]);

    fn terminal_cost(&self, _x: &[f64]) -> f64 {
        0.0
    }

    fn terminal_cost_grad(&self, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }

    /// Dimension of the policy input `φ(x)`.
    fn feature_dim(&self) -> usize {
        self.dim_x()
    }

    fn features(&self, x: &[f64], z: &mut [f64]) {
        z.copy_from_slice(x);
    }

    /// `∂φ/∂x` (m×d).
    fn features_jacobian(&self, _x: &[f64], jac: &mut DMatrix<f64>) {
        jac.fill(0.0);
        jac.fill_diagonal(1.0);
    }

    fn initial_dist(&self) -> &InitialStateDist;

    /// A stable one-line description used in output fingerprints.
    fn describe(&self) -> String;
}

impl<E: Environment + ?Sized> Environment for Box<E> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn dim_x(&self) -> usize {
        (**self).dim_x()
    }
    fn dim_u(&self) -> usize {
        (**self).dim_u()
    }
    fn horizon(&self) -> f64 {
        (**self).horizon()
    }
    fn dynamics(&self, x: &[f64], u: &[f64], out: &mut [f64], nfe: &mut NfeCounter) {
        (**self).dynamics(x, u, out, nfe)
    }
    fn dfdx(&self, x: &[f64], u: &[f64], out: &mut DMatrix<f64>, nfe: &mut NfeCounter) {
        (**self).dfdx(x, u, out, nfe)
    }
    fn dfdu(&self, x: &[f64], u: &[f64], out: &mut DMatrix<f64>, nfe: &mut NfeCounter) {
        (**self).dfdu(x, u, out, nfe)
    }
    fn jacobians(&self, x: &[f64], u: &[f64], a: &mut DMatrix<f64>, b: &mut DMatrix<f64>, nfe: &mut NfeCounter) {
        (**self).jacobians(x, u, a, b, nfe)
    }
    fn cost(&self, x: &[f64], u: &[f64]) -> f64 {
        (**self).cost(x, u)
    }
    fn cost_grad(&self, x: &[f64], u: &[f64], dwdx: &mut [f64], dwdu: &mut [f64]) {
        (**self).cost_grad(x, u, dwdx, dwdu)
    }
    fn terminal_cost(&self, x: &[f64]) -> f64 {
        (**self).terminal_cost(x)
    }
    fn terminal_cost_grad(&self, x: &[f64], out: &mut [f64]) {
        (**self).terminal_cost_grad(x, out)
    }
    fn feature_dim(&self) -> usize {
        (**self).feature_dim()
    }
    fn features(&self, x: &[f64], z: &mut [f64]) {
        (**self).features(x, z)
    }
    fn features_jacobian(&self, x: &[f64], jac: &mut DMatrix<f64>) {
        (**self).features_jacobian(x, jac)
    }
    fn initial_dist(&self) -> &InitialStateDist {
        (**self).initial_dist()
    }
    fn describe(&self) -> String {
        (**self).describe()
    }
}

pub(crate) fn check_square(name: &str, m: &DMatrix<f64>, n: usize) -> Result<(), EnvError> {
    if m.nrows() != n || m.ncols() != n {
        return Err(EnvError::Shape(format!("{name} is {}x{}, expected {n}x{n}", m.nrows(), m.ncols())));
    }
    Ok(())
}

pub(crate) fn check_horizon(t: f64) -> Result<(), EnvError> {
    if t >= 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(EnvError::Invalid(format!("horizon must be a non-negative number, got {t}")))
    }
}

pub(crate) fn check_dist(dist: &InitialStateDist, d: usize) -> Result<(), EnvError> {
    if dist.dim() != d {
        return Err(EnvError::Shape(format!("initial distribution has dimension {}, expected {d}", dist.dim())));
    }
    if let InitialStateDist::Uniform { lo, hi } = dist {
        if hi.len() != lo.len() || lo.iter().zip(hi).any(|(l, h)| !(l <= h)) {
            return Err(EnvError::Invalid("uniform bounds must satisfy lo <= hi".into()));
        }
    }
    Ok(())
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    #[test]
    fn fixed_dist_always_returns_point() {
        let dist = InitialStateDist::Fixed(vec![1.0, 1.0]);
        let mut rng = stream(0, Stream::InitialStates);
        for _ in 0..5 {
            assert_eq!(dist.sample(&mut rng), vec![1.0, 1.0]);
        }
    }

    #[test]
    fn uniform_dist_respects_support() {
        let dist = InitialStateDist::Uniform { lo: vec![-2.0, 0.0, 5.0], hi: vec![2.0, 1.0, 5.0] };
        let mut rng = stream(9, Stream::InitialStates);
        for _ in 0..200 {
            let x = dist.sample(&mut rng);
            assert!(dist.contains(&x), "{x:?}");
            assert_eq!(x[2], 5.0);
        }
    }
}
