use super::{rollout_loss, GradError};
use crate::env::Environment;
use crate::grad::euler_loss;
use crate::ode::SolverConfig;
use crate::policy::Policy;

/// Central differences of `loss` over every coordinate of `params`.
pub fn central_difference<F>(params: &[f64], eps: f64, mut loss: F) -> Result<Vec<f64>, GradError>
where
    F: FnMut(&[f64]) -> Result<f64, GradError>,
{
    if !(eps > 0.0) {
        return Err(GradError::Setup(format!("finite-difference eps must be positive, got {eps}")));
    }
    let mut theta = params.to_vec();
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        theta[i] = params[i] + eps;
        let hi = loss(&theta)?;
        theta[i] = params[i] - eps;
        let lo = loss(&theta)?;
        theta[i] = params[i];
        grad.push((hi - lo) / (2.0 * eps));
    }
    Ok(grad)
}

/// Brute-force reference gradient: central differences of the RK4 rollout
/// loss at step `fine_h`. Costs `2 n_θ` rollouts.
pub fn fd_gradient_oracle(
    env: &dyn Environment,
    policy: &dyn Policy,
    params: &[f64],
    x0: &[f64],
    fine_h: f64,
    eps: f64,
) -> Result<Vec<f64>, GradError> {
    let config = SolverConfig::rk4(fine_h);
    central_difference(params, eps, |theta| Ok(rollout_loss(env, policy, theta, x0, &config)?.loss))
}

/// Central differences of the Euler-discretized loss; the exact target of
/// BPTT.
pub fn fd_gradient_discrete(
    env: &dyn Environment,
    policy: &dyn Policy,
    params: &[f64],
    x0: &[f64],
    h: f64,
    eps: f64,
) -> Result<Vec<f64>, GradError> {
    central_difference(params, eps, |theta| euler_loss(env, policy, theta, x0, h))
}

/// `‖a − b‖₂ / max(‖b‖₂, floor)`.
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let norm: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / norm.max(floor)
}
