use std::f64::consts::PI;

use nalgebra::DMatrix;

use super::{check_dist, check_horizon, EnvError, Environment, InitialStateDist};
use crate::ode::NfeCounter;

/// A charged ball steered by fixed electrodes with controllable charges,
/// tracking a point that moves on a circle.
///
/// State `(p_x, p_y, v_x, v_y, τ)` where `τ` is a clock with `dτ/dt = 1`, so
/// the time-varying target fits a time-invariant cost. Acceleration is
/// `(q k_e / m) Σᵢ uᵢ (p - eᵢ) / (|p - eᵢ|² + ε)^{3/2}`; like charges repel.
/// The policy sees `(p, v, target(τ))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ElectricEnv {
    electrodes: Vec<[f64; 2]>,
    /// `q k_e / m`.
    coupling: f64,
    softening: f64,
    effort_weight: f64,
    center: [f64; 2],
    radius: f64,
    /// Angular speed of the target in rad/s.
    omega: f64,
    horizon: f64,
    init: InitialStateDist,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElectricParams {
    pub electrodes: Vec<[f64; 2]>,
    pub coulomb: f64,
    pub charge: f64,
    pub mass: f64,
    pub softening: f64,
    pub effort_weight: f64,
    pub target_center: [f64; 2],
    pub target_radius: f64,
    /// Seconds per target revolution.
    pub target_period: f64,
    pub horizon: f64,
    pub init: InitialStateDist,
}

impl Default for ElectricParams {
    fn default() -> Self {
        Self {
            electrodes: ElectricEnv::square_layout(),
            coulomb: 1.0,
            charge: 1.0,
            mass: 1.0,
            softening: 1e-4,
            effort_weight: 0.1,
            target_center: [0.5, 0.5],
            target_radius: 0.25,
            target_period: 2.0,
            horizon: 2.0,
            init: InitialStateDist::Uniform { lo: vec![0.2, 0.2, 0.0, 0.0, 0.0], hi: vec![0.8, 0.8, 0.0, 0.0, 0.0] },
        }
    }
}

impl ElectricEnv {
    /// Corners and edge midpoints of the unit square.
    pub fn square_layout() -> Vec<[f64; 2]> {
        vec![[0.0, 0.0], [0.5, 0.0], [1.0, 0.0], [1.0, 0.5], [1.0, 1.0], [0.5, 1.0], [0.0, 1.0], [0.0, 0.5]]
    }

    pub fn new(p: ElectricParams) -> Result<Self, EnvError> {
        if p.electrodes.is_empty() {
            return Err(EnvError::Invalid("need at least one electrode".into()));
        }
        if !(p.mass > 0.0) || !(p.softening > 0.0) || !(p.target_period > 0.0) || !(p.effort_weight >= 0.0) {
            return Err(EnvError::Invalid("mass, softening and target period must be positive".into()));
        }
        check_horizon(p.horizon)?;
        check_dist(&p.init, 5)?;
        Ok(Self {
            electrodes: p.electrodes,
            coupling: p.charge * p.coulomb / p.mass,
            softening: p.softening,
            effort_weight: p.effort_weight,
            center: p.target_center,
            radius: p.target_radius,
            omega: 2.0 * PI / p.target_period,
            horizon: p.horizon,
            init: p.init,
        })
    }

    pub fn target(&self, tau: f64) -> [f64; 2] {
        let (s, c) = (self.omega * tau).sin_cos();
        [self.center[0] + self.radius * c, self.center[1] + self.radius * s]
    }

    fn target_rate(&self, tau: f64) -> [f64; 2] {
        let (s, c) = (self.omega * tau).sin_cos();
        [-self.radius * self.omega * s, self.radius * self.omega * c]
    }

    /// Per-electrode displacement `p - eᵢ` and `(|p - eᵢ|² + ε)`.
    fn geometry(&self, x: &[f64]) -> impl Iterator<Item = ([f64; 2], f64)> + '_ {
        let (px, py) = (x[0], x[1]);
        self.electrodes.iter().map(move |e| {
            let d = [px - e[0], py - e[1]];
            (d, d[0] * d[0] + d[1] * d[1] + self.softening)
        })
    }
}

impl Default for ElectricEnv {
    fn default() -> Self {
        Self::new(ElectricParams::default()).unwrap()
    }
}

impl Environment for ElectricEnv {
    fn name(&self) -> &str {
        "electric"
    }

    fn dim_x(&self) -> usize {
        5
    }

    fn dim_u(&self) -> usize {
        self.electrodes.len()
    }

    fn horizon(&self) -> f64 {
        self.horizon
    }

    fn dynamics(&self, x: &[f64], u: &[f64], out: &mut [f64], nfe: &mut NfeCounter) {
        nfe.n_f += 1;
        let mut acc = [0.0; 2];
        for ((d, r2), &ui) in self.geometry(x).zip(u) {
            let s = ui * r2.powf(-1.5);
            acc[0] += s * d[0];
            acc[1] += s * d[1];
        }
        out[0] = x[2];
        out[1] = x[3];
        out[2] = self.coupling * acc[0];
        out[3] = self.coupling * acc[1];
        out[4] = 1.0;
    }

    fn dfdx(&self, x: &[f64], u: &[f64], out: &mut DMatrix<f64>, nfe: &mut NfeCounter) {
        nfe.n_dfdx += 1;
        out.fill(0.0);
        out[(0, 2)] = 1.0;
        out[(1, 3)] = 1.0;
        // ∂/∂p [d (r²+ε)^{-3/2}] = (r²+ε)^{-3/2} I - 3 (r²+ε)^{-5/2} d dᵀ
        let mut j = [[0.0; 2]; 2];
        for ((d, r2), &ui) in self.geometry(x).zip(u) {
            let s = r2.powf(-1.5);
            let t = 3.0 * s / r2;
            for a in 0..2 {
                for b in 0..2 {
                    let delta = if a == b { s } else { 0.0 };
                    j[a][b] += ui * (delta - t * d[a] * d[b]);
                }
            }
        }
        for a in 0..2 {
            for b in 0..2 {
                out[(2 + a, b)] = self.coupling * j[a][b];
            }
        }
    }

    fn dfdu(&self, x: &[f64], _u: &[f64], out: &mut DMatrix<f64>, nfe: &mut NfeCounter) {
        nfe.n_dfdu += 1;
        out.fill(0.0);
        for (i, (d, r2)) in self.geometry(x).enumerate() {
            let s = self.coupling * r2.powf(-1.5);
            out[(2, i)] = s * d[0];
            out[(3, i)] = s * d[1];
        }
    }

    fn cost(&self, x: &[f64], u: &[f64]) -> f64 {
        let tgt = self.target(x[4]);
        let (ex, ey) = (x[0] - tgt[0], x[1] - tgt[1]);
        ex * ex + ey * ey + self.effort_weight * u.iter().map(|v| v * v).sum::<f64>()
    }

    fn cost_grad(&self, x: &[f64], u: &[f64], dwdx: &mut [f64], dwdu: &mut [f64]) {
        let tgt = self.target(x[4]);
        let rate = self.target_rate(x[4]);
        let (ex, ey) = (x[0] - tgt[0], x[1] - tgt[1]);
        dwdx[0] = 2.0 * ex;
        dwdx[1] = 2.0 * ey;
        dwdx[2] = 0.0;
        dwdx[3] = 0.0;
        dwdx[4] = -2.0 * (ex * rate[0] + ey * rate[1]);
        for (g, v) in dwdu.iter_mut().zip(u) {
            *g = 2.0 * self.effort_weight * v;
        }
    }

    fn feature_dim(&self) -> usize {
        6
    }

    fn features(&self, x: &[f64], z: &mut [f64]) {
        z[..4].copy_from_slice(&x[..4]);
        let tgt = self.target(x[4]);
        z[4] = tgt[0];
        z[5] = tgt[1];
    }

    fn features_jacobian(&self, x: &[f64], jac: &mut DMatrix<f64>) {
        jac.fill(0.0);
        for i in 0..4 {
            jac[(i, i)] = 1.0;
        }
        let rate = self.target_rate(x[4]);
        jac[(4, 4)] = rate[0];
        jac[(5, 4)] = rate[1];
    }

    fn initial_dist(&self) -> &InitialStateDist {
        &self.init
    }

    fn describe(&self) -> String {
        format!(
            "electric(n={},kq/m={},eps={:e},c={},T={})",
            self.electrodes.len(),
            self.coupling,
            self.softening,
            self.effort_weight,
            self.horizon
        )
    }
}
