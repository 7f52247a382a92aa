use nalgebra::DMatrix;

use super::{check_dist, check_horizon, check_square, EnvError, Environment, InitialStateDist};
use crate::ode::NfeCounter;

/// Linear dynamics `f = Ax + Bu` with quadratic running cost
/// `w = xᵀQx + uᵀRu` and no terminal cost.
#[derive(Debug, Clone, PartialEq)]
pub struct LqrEnv {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    horizon: f64,
    init: InitialStateDist,
}

fn check_symmetric(name: &'static str, m: &DMatrix<f64>) -> Result<(), EnvError> {
    let scale = m.amax().max(1.0);
    if (m - m.transpose()).amax() > 1e-12 * scale {
        return Err(EnvError::NotSymmetric(name));
    }
    Ok(())
}

impl LqrEnv {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        horizon: f64,
        init: InitialStateDist,
    ) -> Result<Self, EnvError> {
        let d = a.nrows();
        check_square("A", &a, d)?;
        if b.nrows() != d || b.ncols() == 0 {
            return Err(EnvError::Shape(format!("B is {}x{}, expected {d}xk", b.nrows(), b.ncols())));
        }
        let k = b.ncols();
        check_square("Q", &q, d)?;
        check_square("R", &r, k)?;
        check_symmetric("Q", &q)?;
        check_symmetric("R", &r)?;
        if r.clone().cholesky().is_none() {
            return Err(EnvError::NotPositiveDefinite);
        }
        check_horizon(horizon)?;
        check_dist(&init, d)?;
        Ok(Self { a, b, q, r, horizon, init })
    }

    /// `A = 0`, `B = Q = R = I₂`, `x₀ = [1, 1]`, `T = 25`.
    pub fn standard() -> Self {
        let i = DMatrix::identity(2, 2);
        Self::new(DMatrix::zeros(2, 2), i.clone(), i.clone(), i, 25.0, InitialStateDist::Fixed(vec![1.0, 1.0])).unwrap()
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn optimal_gain(&self) -> Result<DMatrix<f64>, EnvError> {
        lqr_optimal_gain(&self.a, &self.b, &self.q, &self.r)
    }
}

impl Environment for LqrEnv {
    fn name(&self) -> &str {
        "lqr"
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
        let (d, k) = (self.dim_x(), self.dim_u());
        for i in 0..d {
            let mut s = 0.0;
            for j in 0..d {
                s += self.a[(i, j)] * x[j];
            }
            for j in 0..k {
                s += self.b[(i, j)] * u[j];
            }
            out[i] = s;
        }
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
        sym_grad(&self.q, x, dwdx);
        sym_grad(&self.r, u, dwdu);
    }

    fn initial_dist(&self) -> &InitialStateDist {
        &self.init
    }

    fn describe(&self) -> String {
        format!("lqr(d={},k={},T={})", self.dim_x(), self.dim_u(), self.horizon)
    }
}

fn quad(m: &DMatrix<f64>, v: &[f64]) -> f64 {
    let n = v.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            s += v[i] * m[(i, j)] * v[j];
        }
    }
    s
}

/// `2 M v` for symmetric `M`.
fn sym_grad(m: &DMatrix<f64>, v: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = 2.0 * (0..v.len()).map(|j| m[(i, j)] * v[j]).sum::<f64>();
    }
}

/// Solves `XᵀP + PX = -M` by vectorization; fine for the small systems here.
fn lyapunov(x: &DMatrix<f64>, m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let d = x.nrows();
    let i = DMatrix::<f64>::identity(d, d);
    let xt = x.transpose();
    let op = i.kronecker(&xt) + xt.kronecker(&i);
    let rhs = -DMatrix::from_column_slice(d * d, 1, m.as_slice());
    let sol = op.lu().solve(&rhs)?;
    let p = DMatrix::from_column_slice(d, d, sol.as_slice());
    Some((&p + p.transpose()) * 0.5)
}

fn care_residual(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r_inv: &DMatrix<f64>, p: &DMatrix<f64>) -> f64 {
    (a.transpose() * p + p * a - p * b * r_inv * b.transpose() * p + q).amax()
}

/// Stabilizing gain for the continuous algebraic Riccati equation, via
/// Kleinman–Newton iteration seeded with a Bass gain. Returns `K = R⁻¹BᵀP`.
pub fn lqr_optimal_gain(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>, EnvError> {
    const MAX_ITERS: usize = 100;
    let d = a.nrows();
    check_square("A", a, d)?;
    check_square("Q", q, d)?;
    if b.nrows() != d {
        return Err(EnvError::Shape("B row count must match A".into()));
    }
    check_square("R", r, b.ncols())?;
    let r_inv = r.clone().cholesky().ok_or(EnvError::NotPositiveDefinite)?.inverse();

    // Bass: with β above the spectral radius of A, (A+βI)Z + Z(A+βI)ᵀ = 2BBᵀ
    // gives Z ≻ 0 and A - BBᵀZ⁻¹ Hurwitz.
    let beta = a.norm() + 1.0;
    let shifted = -(a + DMatrix::identity(d, d) * beta).transpose();
    let z = lyapunov(&shifted, &(b * b.transpose() * 2.0)).ok_or(EnvError::NotStabilizable)?;
    let z_inv = z.cholesky().ok_or(EnvError::NotStabilizable)?.inverse();
    let mut k = b.transpose() * z_inv;

    let tol = 1e-10 * q.amax().max(1.0);
    let mut residual = f64::INFINITY;
    for _ in 0..MAX_ITERS {
        let closed = a - b * &k;
        let m = q + k.transpose() * r * &k;
        let p = lyapunov(&closed, &m).ok_or(EnvError::NotStabilizable)?;
        k = &r_inv * b.transpose() * &p;
        residual = care_residual(a, b, q, &r_inv, &p);
        if residual < tol {
            return Ok(k);
        }
    }
    Err(EnvError::RiccatiNoConvergence { iterations: MAX_ITERS, residual })
}
