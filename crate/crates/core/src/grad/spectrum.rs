//! Linear stability of the reverse-time reconstruction `ψ = (x̃, α, g)`.
//!
//! Running the combined system backward, `dψ/ds` with `s = -t` has Jacobian
//!
//! ```text
//! [ -J       0    0 ]
//! [  C       Jᵀ   0 ]
//! [  ·       ·    0 ]
//! ```
//!
//! where `J` is the closed-loop Jacobian and `C` the second-derivative
//! coupling. The matrix is block lower triangular, so its spectrum is
//! `eig(-J) ∪ eig(J) ∪ {0}^{n_θ}`: any decaying forward mode is a growing
//! reverse mode.

use nalgebra::{Complex, DMatrix};

use super::{ClosedLoop, GradError};
use crate::env::Environment;
use crate::policy::Policy;

const FD_STEP: f64 = 1e-6;

/// Reverse-time `(dα/ds, dg/ds)` at `(x, α)`.
fn reverse_adjoint(cl: &mut ClosedLoop, x: &[f64], alpha: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let d = x.len();
    cl.linearize(x);
    let mut da = vec![0.0; d];
    cl.adjoint(alpha, -1.0, &mut da);
    let mut dg = vec![0.0; cl.num_params()];
    cl.accumulate_vjp(1.0, &mut dg);
    (da, dg)
}

/// The `(2d + n_θ)`-square Jacobian of the reverse-time combined process.
/// The closed-loop blocks are exact; the coupling rows come from central
/// differences of the adjoint right-hand side.
pub fn reverse_jacobian(
    env: &dyn Environment,
    policy: &dyn Policy,
    params: &[f64],
    x: &[f64],
    alpha: &[f64],
) -> Result<DMatrix<f64>, GradError> {
    super::check_x0(env, x)?;
    let d = x.len();
    if alpha.len() != d {
        return Err(GradError::Setup(format!("adjoint has {} entries, expected {d}", alpha.len())));
    }
    let mut cl = ClosedLoop::new(env, policy, params)?;
    let n = params.len();
    let dim = 2 * d + n;
    let mut m = DMatrix::zeros(dim, dim);

    cl.linearize(x);
    let closed = &cl.a + &cl.b * &cl.k;
    for i in 0..d {
        for j in 0..d {
            m[(i, j)] = -closed[(i, j)];
            m[(d + i, d + j)] = closed[(j, i)];
        }
    }

    let mut xp = x.to_vec();
    for j in 0..d {
        xp[j] = x[j] + FD_STEP;
        let (ap, gp) = reverse_adjoint(&mut cl, &xp, alpha);
        xp[j] = x[j] - FD_STEP;
        let (am, gm) = reverse_adjoint(&mut cl, &xp, alpha);
        xp[j] = x[j];
        for i in 0..d {
            m[(d + i, j)] = (ap[i] - am[i]) / (2.0 * FD_STEP);
        }
        for i in 0..n {
            m[(2 * d + i, j)] = (gp[i] - gm[i]) / (2.0 * FD_STEP);
        }
    }
    // g's source is linear in α.
    let mut e = vec![0.0; d];
    for j in 0..d {
        e[j] = 1.0;
        let (_, g1) = reverse_adjoint(&mut cl, x, &e);
        let zero = vec![0.0; d];
        let (_, g0) = reverse_adjoint(&mut cl, x, &zero);
        e[j] = 0.0;
        for i in 0..n {
            m[(2 * d + i, d + j)] = g1[i] - g0[i];
        }
    }
    Ok(m)
}

/// Eigenvalues of [`reverse_jacobian`].
pub fn reverse_jacobian_eigs(
    env: &dyn Environment,
    policy: &dyn Policy,
    params: &[f64],
    x: &[f64],
    alpha: &[f64],
) -> Result<Vec<Complex<f64>>, GradError> {
    let m = reverse_jacobian(env, policy, params, x, alpha)?;
    Ok(m.complex_eigenvalues().iter().copied().collect())
}

/// How far `eigs` is from `{±λ₁, .., ±λ_d} ∪ {0}^{n_zero}`: the `n_zero`
/// eigenvalues of smallest modulus are taken as the zeros, the rest are
/// paired greedily with their closest negation. Returns the largest
/// mismatch or leftover zero modulus.
pub fn pairing_residual(eigs: &[Complex<f64>], n_zero: usize) -> f64 {
    let mut rest: Vec<Complex<f64>> = eigs.to_vec();
    rest.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
    let zeros: Vec<Complex<f64>> = rest.drain(..n_zero.min(rest.len())).collect();
    let mut residual = zeros.iter().map(|z| z.norm()).fold(0.0, f64::max);
    while let Some(l) = rest.pop() {
        if rest.is_empty() {
            return f64::INFINITY;
        }
        let (j, mismatch) = rest
            .iter()
            .enumerate()
            .map(|(j, mu)| (j, (l + mu).norm()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        rest.swap_remove(j);
        residual = residual.max(mismatch);
    }
    residual
}
