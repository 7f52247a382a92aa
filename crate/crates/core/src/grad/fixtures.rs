//! Small environments used only by the estimator tests.

use nalgebra::DMatrix;

use crate::env::{Environment, InitialStateDist};
use crate::ode::NfeCounter;

/// Linear dynamics with unrestricted quadratic running and terminal costs
/// (any of them may be zero).
#[derive(Debug, Clone)]
pub struct LinearQuad {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub qf: DMatrix<f64>,
    pub horizon: f64,
    pub init: InitialStateDist,
}

impl LinearQuad {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, horizon: f64) -> Self {
        let (d, k) = b.shape();
        Self {
            a,
            b,
            q: DMatrix::zeros(d, d),
            r: DMatrix::zeros(k, k),
            qf: DMatrix::zeros(d, d),
            horizon,
            init: InitialStateDist::Fixed(vec![1.0; d]),
        }
    }
}

fn quad(m: &DMatrix<f64>, v: &[f64]) -> f64 {
    let v = DMatrix::from_column_slice(v.len(), 1, v);
    (v.transpose() * m * &v)[(0, 0)]
}

fn grad(m: &DMatrix<f64>, v: &[f64], out: &mut [f64]) {
    let g = (m + m.transpose()) * DMatrix::from_column_slice(v.len(), 1, v);
    out.copy_from_slice(g.as_slice());
}

impl Environment for LinearQuad {
    fn name(&self) -> &str {
        "linear-quad"
    }
    fn dim_x(&self) -> usize {
        self.a.nrows()
    }
    fn dim_u(&self) -> usize {
        self.b.ncols()
    }
    fn horizon(&self) -> f64 {
        self.horizon
    }
    fn dynamics(&self, x: &[f64], u: &[f64], out: &mut [f64], nfe: &mut NfeCounter) {
        nfe.n_f += 1;
        let f = &self.a * DMatrix::from_column_slice(x.len(), 1, x) + &self.b * DMatrix::from_column_slice(u.len(), 1, u);
        out.copy_from_slice(f.as_slice());
    }
    fn dfdx(&self, _x: &[f64], _u: &[f64], out: &mut DMatrix<f64>, nfe: &mut NfeCounter) {
        nfe.n_dfdx += 1;
        out.copy_from(&self.a);
    }
    fn dfdu(&self, _x: &[f64], _u: &[f64], out: &mut DMatrix<f64>, nfe: &mut NfeCounter) {
        nfe.n_dfdu += 1;
        out.copy_from(&self.b);
    }
    fn cost(&self, x: &[f64], u: &[f64]) -> f64 {
        quad(&self.q, x) + quad(&self.r, u)
    }
    fn cost_grad(&self, x: &[f64], u: &[f64], dwdx: &mut [f64], dwdu: &mut [f64]) {
        grad(&self.q, x, dwdx);
        grad(&self.r, u, dwdu);
    }
    fn terminal_cost(&self, x: &[f64]) -> f64 {
        quad(&self.qf, x)
    }
    fn terminal_cost_grad(&self, x: &[f64], out: &mut [f64]) {
        grad(&self.qf, x, out);
    }
    fn initial_dist(&self) -> &InitialStateDist {
        &self.init
    }
    fn describe(&self) -> String {
        "linear-quad".into()
    }
}

/// Torque-driven pendulum `θ̈ = -sin θ + u` with running cost
/// `θ² + 0.1 ω² + 0.1 u²` and terminal cost `θ² + ω²`.
#[derive(Debug, Clone)]
pub struct Pendulum {
    pub horizon: f64,
    pub init: InitialStateDist,
}

impl Pendulum {
    pub fn new(horizon: f64) -> Self {
        Self { horizon, init: InitialStateDist::Uniform { lo: vec![-1.0, -0.5], hi: vec![1.0, 0.5] } }
    }
}

impl Environment for Pendulum {
    fn name(&self) -> &str {
        "pendulum"
    }
    fn dim_x(&self) -> usize {
        2
    }
    fn dim_u(&self) -> usize {
        1
    }
    fn horizon(&self) -> f64 {
        self.horizon
    }
    fn dynamics(&self, x: &[f64], u: &[f64], out: &mut [f64], nfe: &mut NfeCounter) {
        nfe.n_f += 1;
        out[0] = x[1];
        out[1] = -x[0].sin() + u[0];
    }
    fn dfdx(&self, x: &[f64], _u: &[f64], out: &mut DMatrix<f64>, nfe: &mut NfeCounter) {
        nfe.n_dfdx += 1;
        out.copy_from_slice(&[0.0, -x[0].cos(), 1.0, 0.0]);
    }
    fn dfdu(&self, _x: &[f64], _u: &[f64], out: &mut DMatrix<f64>, nfe: &mut NfeCounter) {
        nfe.n_dfdu += 1;
        out.copy_from_slice(&[0.0, 1.0]);
    }
    fn cost(&self, x: &[f64], u: &[f64]) -> f64 {
        x[0] * x[0] + 0.1 * x[1] * x[1] + 0.1 * u[0] * u[0]
    }
    fn cost_grad(&self, x: &[f64], u: &[f64], dwdx: &mut [f64], dwdu: &mut [f64]) {
        dwdx[0] = 2.0 * x[0];
        dwdx[1] = 0.2 * x[1];
        dwdu[0] = 0.2 * u[0];
    }
    fn terminal_cost(&self, x: &[f64]) -> f64 {
        x[0] * x[0] + x[1] * x[1]
    }
    fn terminal_cost_grad(&self, x: &[f64], out: &mut [f64]) {
        out[0] = 2.0 * x[0];
        out[1] = 2.0 * x[1];
    }
    fn initial_dist(&self) -> &InitialStateDist {
        &self.init
    }
    fn describe(&self) -> String {
        "pendulum".into()
    }
}
