use std::time::Instant;

use super::{check_x0, forward_pass, ClosedLoop, GradError, GradientEstimate};
use crate::env::Environment;
use crate::ode::{integrate_final, solve_ivp, DenseTrajectory, Method, SolverConfig};
use crate::policy::Policy;

/// Solver settings for the two passes of [`ctpg_gradient`].
#[derive(Debug, Clone, PartialEq)]
pub struct CtpgConfig {
    pub forward: SolverConfig,
    pub backward: SolverConfig,
    /// Drop the `∂f/∂u · ∂π/∂x` chain term from the adjoint. Wrong on
    /// purpose; exists so checks can show the term is needed.
    pub omit_feedback: bool,
}

impl CtpgConfig {
    pub fn new(forward: SolverConfig, backward: SolverConfig) -> Self {
        Self { forward, backward, omit_feedback: false }
    }

    /// Adaptive solves in both directions with `abstol = reltol = tol`.
    pub fn tolerance(tol: f64) -> Self {
        Self::new(SolverConfig::adaptive(tol, tol), SolverConfig::adaptive(tol, tol))
    }

    pub fn fingerprint(&self) -> String {
        let (f, b) = (self.forward.fingerprint(), self.backward.fingerprint());
        let base = if f == b { f } else { format!("{f}/{b}") };
        if self.omit_feedback {
            format!("{base}[no-feedback]")
        } else {
            base
        }
    }
}

/// Error weights for a concatenated `(α, g)` vector: the `n_θ` cotangent
/// entries share the weight of a single state coordinate.
pub(crate) fn adjoint_weights(d: usize, prefix: usize, n_theta: usize) -> Vec<f64> {
    let mut w = vec![1.0; prefix + d];
    w.extend(std::iter::repeat_n(1.0 / (n_theta.max(1) as f64).sqrt(), n_theta));
    w
}

/// Starts the backward solve with the last forward step unless told otherwise,
/// which saves the start-up heuristic and its extra evaluation.
fn backward_config(cfg: &SolverConfig, traj: &DenseTrajectory) -> SolverConfig {
    let mut cfg = cfg.clone();
    if cfg.method == Method::Adaptive && cfg.initial_step.is_none() {
        let t = traj.times();
        cfg.initial_step = Some((t[t.len() - 1] - t[t.len() - 2]).abs());
    }
    cfg
}

fn zero_estimate(loss: f64, n_theta: usize, start: Instant) -> GradientEstimate {
    GradientEstimate {
        grad: vec![0.0; n_theta],
        loss,
        nfe: Default::default(),
        wallclock: start.elapsed().as_secs_f64(),
        forward_knots: 1,
        backward_knots: 1,
        forward_rhs_evals: 0,
        backward_rhs_evals: 0,
        aux: None,
        diverged: false,
    }
}

/// Continuous-time policy gradient with a fused `(α, g)` backward solve.
pub fn ctpg_gradient(
    env: &dyn Environment,
    policy: &dyn Policy,
    params: &[f64],
    x0: &[f64],
    config: &CtpgConfig,
) -> Result<GradientEstimate, GradError> {
    let start = Instant::now();
    check_x0(env, x0)?;
    let mut cl = ClosedLoop::new(env, policy, params)?;
    cl.omit_feedback = config.omit_feedback;
    let rollout = forward_pass(&mut cl, x0, &config.forward)?;
    let Some(traj) = rollout.trajectory else {
        return Ok(zero_estimate(rollout.loss, params.len(), start));
    };
    let (d, n) = (env.dim_x(), params.len());
    let horizon = traj.t_end();

    let mut y0 = cl.terminal_grad(traj.final_state());
    y0.resize(d + n, 0.0);
    let weights = adjoint_weights(d, 0, n);
    let mut x = vec![0.0; d];
    let mut query_failed = None;
    let end = integrate_final(
        |t, y: &[f64], dy: &mut [f64]| {
            if let Err(e) = cl.linearize_on(&traj, t, &mut x) {
                query_failed.get_or_insert(e);
                dy.fill(f64::NAN);
                return;
            }
            let (alpha, g_dot) = dy.split_at_mut(d);
            cl.adjoint(&y[..d], 1.0, alpha);
            g_dot.fill(0.0);
            cl.accumulate_vjp(-1.0, g_dot);
        },
        &y0,
        horizon,
        0.0,
        &backward_config(&config.backward, &traj),
        Some(&weights),
    );
    if let Some(e) = query_failed {
        return Err(GradError::Trajectory(e));
    }
    let end = end.map_err(GradError::Backward)?;

    Ok(GradientEstimate {
        grad: end.x[d..].to_vec(),
        loss: rollout.loss,
        nfe: cl.nfe,
        wallclock: start.elapsed().as_secs_f64(),
        forward_knots: traj.len(),
        backward_knots: end.stats.accepted + 1,
        forward_rhs_evals: rollout.rhs_evals,
        backward_rhs_evals: end.stats.rhs_evals,
        aux: None,
        diverged: false,
    })
}

/// 8-point Gauss–Legendre nodes and weights on `[-1, 1]`.
const GL_NODES: [f64; 8] = [
    -0.960_289_856_497_536_3,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL_WEIGHTS: [f64; 8] = [
    0.101_228_536_290_376_3,
    0.222_381_034_453_374_5,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362,
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// Two-pass variant: solve `α` alone, then integrate `(Bᵀα + ∂w/∂u)ᵀ ∂π/∂θ`
/// by Gauss–Legendre quadrature over every interval between forward and
/// adjoint knots. Mathematically identical to [`ctpg_gradient`].
pub fn ctpg_gradient_two_pass(
    env: &dyn Environment,
    policy: &dyn Policy,
    params: &[f64],
    x0: &[f64],
    config: &CtpgConfig,
) -> Result<GradientEstimate, GradError> {
    let start = Instant::now();
    check_x0(env, x0)?;
    let mut cl = ClosedLoop::new(env, policy, params)?;
    cl.omit_feedback = config.omit_feedback;
    let rollout = forward_pass(&mut cl, x0, &config.forward)?;
    let Some(traj) = rollout.trajectory else {
        return Ok(zero_estimate(rollout.loss, params.len(), start));
    };
    let d = env.dim_x();
    let horizon = traj.t_end();

    let alpha_t = cl.terminal_grad(traj.final_state());
    let mut x = vec![0.0; d];
    let mut query_failed = None;
    let alpha = solve_ivp(
        |t, a: &[f64], da: &mut [f64]| {
            if let Err(e) = cl.linearize_on(&traj, t, &mut x) {
                query_failed.get_or_insert(e);
                da.fill(f64::NAN);
                return;
            }
            cl.adjoint(a, 1.0, da);
        },
        &alpha_t,
        horizon,
        0.0,
        &backward_config(&config.backward, &traj),
    );
    if let Some(e) = query_failed {
        return Err(GradError::Trajectory(e));
    }
    let alpha = alpha.map_err(GradError::Backward)?;

    let mut breaks: Vec<f64> = traj.times().iter().chain(alpha.times()).copied().collect();
    breaks.sort_by(f64::total_cmp);
    breaks.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * horizon);

    let mut grad = vec![0.0; params.len()];
    let mut a = vec![0.0; d];
    let mut scratch = vec![0.0; d];
    for w in breaks.windows(2) {
        let (mid, half) = (0.5 * (w[0] + w[1]), 0.5 * (w[1] - w[0]));
        for (node, weight) in GL_NODES.iter().zip(GL_WEIGHTS) {
            let t = mid + half * node;
            traj.eval_into(t, &mut x).map_err(GradError::Trajectory)?;
            alpha.eval_into(t, &mut a).map_err(GradError::Trajectory)?;
            cl.linearize(&x);
            cl.adjoint(&a, 1.0, &mut scratch);
            cl.accumulate_vjp(weight * half, &mut grad);
        }
    }

    Ok(GradientEstimate {
        grad,
        loss: rollout.loss,
        nfe: cl.nfe,
        wallclock: start.elapsed().as_secs_f64(),
        forward_knots: traj.len(),
        backward_knots: alpha.len(),
        forward_rhs_evals: rollout.rhs_evals,
        backward_rhs_evals: alpha.stats().rhs_evals,
        aux: None,
        diverged: false,
    })
}
