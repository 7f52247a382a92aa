use std::f64::consts::PI;

use nalgebra::DMatrix;

use super::{check_dist, check_horizon, EnvError, Environment, InitialStateDist};
use crate::ode::NfeCounter;

/// Differential-drive robot. State `(x, y, θ, ω_ℓ, ω_r)`, controls are the
/// wheel accelerations `(u_l, u_r)`. The task is to drive to the origin:
/// `w = x² + y² + c (ω_ℓ² + ω_r² + u_l² + u_r²)`.
///
/// The policy sees `(x, y, θ, ω_ℓ, ω_r, cos θ, sin θ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffDriveEnv {
    wheelbase: f64,
    effort_weight: f64,
    horizon: f64,
    init: InitialStateDist,
}

impl DiffDriveEnv {
    pub const DEFAULT_WHEELBASE: f64 = 0.5;
    pub const DEFAULT_EFFORT_WEIGHT: f64 = 0.1;
    pub const DEFAULT_HORIZON: f64 = 5.0;

    pub fn new(wheelbase: f64, effort_weight: f64, horizon: f64, init: InitialStateDist) -> Result<Self, EnvError> {
        if !(wheelbase > 0.0 && wheelbase.is_finite()) {
            return Err(EnvError::Invalid(format!("wheelbase must be positive, got {wheelbase}")));
        }
        if !(effort_weight >= 0.0 && effort_weight.is_finite()) {
            return Err(EnvError::Invalid(format!("effort weight must be non-negative, got {effort_weight}")));
        }
        check_horizon(horizon)?;
        check_dist(&init, 5)?;
        Ok(Self { wheelbase, effort_weight, horizon, init })
    }

    /// Positions uniform on `[-2, 2]²`, heading uniform on `[-π, π)`, wheels at rest.
    pub fn default_init() -> InitialStateDist {
        InitialStateDist::Uniform { lo: vec![-2.0, -2.0, -PI, 0.0, 0.0], hi: vec![2.0, 2.0, PI, 0.0, 0.0] }
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn wheelbase(&self) -> f64 {
        self.wheelbase
    }
}

impl Default for DiffDriveEnv {
    fn default() -> Self {
        Self::new(Self::DEFAULT_WHEELBASE, Self::DEFAULT_EFFORT_WEIGHT, Self::DEFAULT_HORIZON, Self::default_init())
            .unwrap()
    }
}

impl Environment for DiffDriveEnv {
    fn name(&self) -> &str {
        "diffdrive"
    }

    fn dim_x(&self) -> usize {
        5
    }

    fn dim_u(&self) -> usize {
        2
    }

    fn horizon(&self) -> f64 {
        self.horizon
    }

    fn dynamics(&self, x: &[f64], u: &[f64], out: &mut [f64], nfe: &mut NfeCounter) {
        nfe.n_f += 1;
        let v = 0.5 * (x[3] + x[4]);
        let (s, c) = x[2].sin_cos();
        out[0] = v * c;
        out[1] = v * s;
        out[2] = (x[4] - x[3]) / self.wheelbase;
        out[3] = u[0];
        out[4] = u[1];
    }

    fn dfdx(&self, x: &[f64], _u: &[f64], out: &mut DMatrix<f64>, nfe: &mut NfeCounter) {
        nfe.n_dfdx += 1;
        let v = 0.5 * (x[3] + x[4]);
        let (s, c) = x[2].sin_cos();
        out.fill(0.0);
        out[(0, 2)] = -v * s;
        out[(0, 3)] = 0.5 * c;
        out[(0, 4)] = 0.5 * c;
        out[(1, 2)] = v * c;
        out[(1, 3)] = 0.5 * s;
        out[(1, 4)] = 0.5 * s;
        out[(2, 3)] = -1.0 / self.wheelbase;
        out[(2, 4)] = 1.0 / self.wheelbase;
    }

    fn dfdu(&self, _x: &[f64], _u: &[f64], out: &mut DMatrix<f64>, nfe: &mut NfeCounter) {
        nfe.n_dfdu += 1;
        out.fill(0.0);
        out[(3, 0)] = 1.0;
        out[(4, 1)] = 1.0;
    }

    fn cost(&self, x: &[f64], u: &[f64]) -> f64 {
        x[0] * x[0] + x[1] * x[1] + self.effort_weight * (x[3] * x[3] + x[4] * x[4] + u[0] * u[0] + u[1] * u[1])
    }

    fn cost_grad(&self, x: &[f64], u: &[f64], dwdx: &mut [f64], dwdu: &mut [f64]) {
        let c = 2.0 * self.effort_weight;
        dwdx[0] = 2.0 * x[0];
        dwdx[1] = 2.0 * x[1];
        dwdx[2] = 0.0;
        dwdx[3] = c * x[3];
        dwdx[4] = c * x[4];
        dwdu[0] = c * u[0];
        dwdu[1] = c * u[1];
    }

    fn feature_dim(&self) -> usize {
        7
    }

    fn features(&self, x: &[f64], z: &mut [f64]) {
        z[..5].copy_from_slice(x);
        let (s, c) = x[2].sin_cos();
        z[5] = c;
        z[6] = s;
    }

    fn features_jacobian(&self, x: &[f64], jac: &mut DMatrix<f64>) {
        jac.fill(0.0);
        for i in 0..5 {
            jac[(i, i)] = 1.0;
        }
        let (s, c) = x[2].sin_cos();
        jac[(5, 2)] = -s;
        jac[(6, 2)] = c;
    }

    fn initial_dist(&self) -> &InitialStateDist {
        &self.init
    }

    fn describe(&self) -> String {
        format!("diffdrive(L={},c={},T={})", self.wheelbase, self.effort_weight, self.horizon)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::testing::check_derivatives;
    use crate::rng::{stream, Stream};

    fn f(env: &DiffDriveEnv, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; 5];
        env.dynamics(x, &[0.0, 0.0], &mut out, &mut NfeCounter::default());
        out
    }

    #[test]
    fn straight_line_motion() {
        for l in [0.2, 0.5, 3.0] {
            let env = DiffDriveEnv::new(l, 0.1, 1.0, DiffDriveEnv::default_init()).unwrap();
            assert_eq!(f(&env, &[0.0, 0.0, 0.0, 1.0, 1.0]), vec![1.0, 0.0, 0.0, 0.0, 0.0]);
        }
        let env = DiffDriveEnv::new(1.0, 0.1, 1.0, DiffDriveEnv::default_init()).unwrap();
        let out = f(&env, &[0.0, 0.0, PI / 2.0, 1.0, 1.0]);
        assert!(out[0].abs() < 1e-15);
        assert_eq!(&out[1..], &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_cost_at_rest_at_origin() {
        assert_eq!(DiffDriveEnv::default().cost(&[0.0, 0.0, 1.3, 0.0, 0.0], &[0.0, 0.0]), 0.0);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let env = DiffDriveEnv::default();
        let mut rng = stream(4, Stream::Params);
        let probe = InitialStateDist::Uniform { lo: vec![-3.0; 7], hi: vec![3.0; 7] };
        for _ in 0..20 {
            let p = probe.sample(&mut rng);
            check_derivatives(&env, &p[..5], &p[5..]);
        }
    }

    #[test]
    fn samples_stay_in_box() {
        let env = DiffDriveEnv::default();
        let mut rng = stream(0, Stream::InitialStates);
        for _ in 0..100 {
            let x = env.initial_dist().sample(&mut rng);
            assert!(x[0].abs() <= 2.0 && x[1].abs() <= 2.0 && (-PI..PI).contains(&x[2]));
            assert_eq!(&x[3..], &[0.0, 0.0]);
        }
    }

    #[test]
    fn rejects_nonpositive_wheelbase() {
        assert!(DiffDriveEnv::new(0.0, 0.1, 1.0, DiffDriveEnv::default_init()).is_err());
    }
}
