use nalgebra::DMatrix;

use super::{EnvError, Environment, InitialStateDist};
use crate::ode::NfeCounter;

/// Treats the wrapped environment as a black box exposing only `f`, `w` and
/// `J`, and supplies every derivative by finite differences.
///
/// Dynamics Jacobians use forward differences with step `eps`; each
/// underlying `f` call is counted in `n_f`, so a joint `∂f/∂x, ∂f/∂u`
/// evaluation costs `1 + d + k` calls with the base point shared. Cost
/// gradients use central differences and are not counted.
#[derive(Debug, Clone)]
pub struct FiniteDifferenceEnv<E> {
    inner: E,
    eps: f64,
    name: String,
}

const COST_STEP: f64 = 1e-5;

impl<E: Environment> FiniteDifferenceEnv<E> {
    pub fn new(inner: E, eps: f64) -> Result<Self, EnvError> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(EnvError::Invalid(format!("finite-difference eps must be positive, got {eps}")));
        }
        let name = format!("fd({})", inner.name());
        Ok(Self { inner, eps, name })
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }

    /// Forward differences of `f` in the selected argument, reusing `base`.
    fn forward_columns(&self, x: &[f64], u: &[f64], base: &[f64], wrt_x: bool, out: &mut DMatrix<f64>, nfe: &mut NfeCounter) {
        let d = self.inner.dim_x();
        let n = if wrt_x { d } else { self.inner.dim_u() };
        let mut xp = x.to_vec();
        let mut up = u.to_vec();
        let mut fp = vec![0.0; d];
        for j in 0..n {
            if wrt_x {
                xp[j] = x[j] + self.eps;
            } else {
                up[j] = u[j] + self.eps;
            }
            self.inner.dynamics(&xp, &up, &mut fp, nfe);
            for i in 0..d {
                out[(i, j)] = (fp[i] - base[i]) / self.eps;
            }
            if wrt_x {
                xp[j] = x[j];
            } else {
                up[j] = u[j];
            }
        }
    }

    fn base(&self, x: &[f64], u: &[f64], nfe: &mut NfeCounter) -> Vec<f64> {
        let mut f0 = vec![0.0; self.inner.dim_x()];
        self.inner.dynamics(x, u, &mut f0, nfe);
        f0
    }
}

fn central<F: Fn(&[f64]) -> f64>(g: F, at: &[f64], out: &mut [f64]) {
    let mut p = at.to_vec();
    for j in 0..at.len() {
        p[j] = at[j] + COST_STEP;
        let hi = g(&p);
        p[j] = at[j] - COST_STEP;
        let lo = g(&p);
        p[j] = at[j];
        out[j] = (hi - lo) / (2.0 * COST_STEP);
    }
}

impl<E: Environment> Environment for FiniteDifferenceEnv<E> {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim_x(&self) -> usize {
        self.inner.dim_x()
    }

    fn dim_u(&self) -> usize {
        self.inner.dim_u()
    }

    fn horizon(&self) -> f64 {
        self.inner.horizon()
    }

    fn dynamics(&self, x: &[f64], u: &[f64], out: &mut [f64], nfe: &mut NfeCounter) {
        self.inner.dynamics(x, u, out, nfe);
    }

    fn dfdx(&self, x: &[f64], u: &[f64], out: &mut DMatrix<f64>, nfe: &mut NfeCounter) {
        let f0 = self.base(x, u, nfe);
        self.forward_columns(x, u, &f0, true, out, nfe);
    }

    fn dfdu(&self, x: &[f64], u: &[f64], out: &mut DMatrix<f64>, nfe: &mut NfeCounter) {
        let f0 = self.base(x, u, nfe);
        self.forward_columns(x, u, &f0, false, out, nfe);
    }

    fn jacobians(&self, x: &[f64], u: &[f64], a: &mut DMatrix<f64>, b: &mut DMatrix<f64>, nfe: &mut NfeCounter) {
        let f0 = self.base(x, u, nfe);
        self.forward_columns(x, u, &f0, true, a, nfe);
        self.forward_columns(x, u, &f0, false, b, nfe);
    }

    fn cost(&self, x: &[f64], u: &[f64]) -> f64 {
        self.inner.cost(x, u)
    }

    fn cost_grad(&self, x: &[f64], u: &[f64], dwdx: &mut [f64], dwdu: &mut [f64]) {
        central(|xp| self.inner.cost(xp, u), x, dwdx);
        central(|up| self.inner.cost(x, up), u, dwdu);
    }

    fn terminal_cost(&self, x: &[f64]) -> f64 {
        self.inner.terminal_cost(x)
    }

    fn terminal_cost_grad(&self, x: &[f64], out: &mut [f64]) {
        central(|xp| self.inner.terminal_cost(xp), x, out);
    }

    fn feature_dim(&self) -> usize {
        self.inner.feature_dim()
    }

    fn features(&self, x: &[f64], z: &mut [f64]) {
        self.inner.features(x, z);
    }

    fn features_jacobian(&self, x: &[f64], jac: &mut DMatrix<f64>) {
        self.inner.features_jacobian(x, jac);
    }

    fn initial_dist(&self) -> &InitialStateDist {
        self.inner.initial_dist()
    }

    fn describe(&self) -> String {
        format!("fd(eps={:e},{})", self.eps, self.inner.describe())
    }
}
