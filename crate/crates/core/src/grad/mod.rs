//! Policy-gradient estimators for `L(θ) = ∫₀ᵀ w(x, π_θ(φ(x))) dt + J(x(T))`.
//!
//! * [`ctpg_gradient`]: continuous adjoint. A dense forward solve is stored
//!   and queried by a single backward solve of the concatenated adjoint and
//!   parameter-cotangent system.
//! * [`bptt_gradient`]: exact reverse-mode derivative of a forward-Euler
//!   rollout.
//! * [`node_gradient`]: constant-memory adjoint that rebuilds the state by
//!   integrating the dynamics backward from `x(T)`.
//!
//! All adjoint computations use total derivatives through the feedback law:
//! with `u = π(φ(x))` and `K = ∂π/∂z · ∂φ/∂x`, the closed-loop Jacobian is
//! `∂f/∂x + ∂f/∂u K` and the cost gradient is `∂w/∂x + Kᵀ ∂w/∂u`.

mod bptt;
mod ctpg;
mod node;
mod oracle;
mod spectrum;

pub use bptt::{bptt_gradient, euler_loss};
pub use ctpg::{ctpg_gradient, ctpg_gradient_two_pass, CtpgConfig};
pub use node::node_gradient;
pub use oracle::{central_difference, fd_gradient_discrete, fd_gradient_oracle, relative_error};
pub use spectrum::{pairing_residual, reverse_jacobian, reverse_jacobian_eigs};

use nalgebra::DMatrix;
use thiserror::Error;

use crate::env::Environment;
use crate::ode::{solve_ivp, DenseTrajectory, NfeCounter, OdeError, SolverConfig};
use crate::policy::{Policy, Tape};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GradError {
    #[error("setup: {0}")]
    Setup(String),
    #[error("forward pass: {0}")]
    Forward(OdeError),
    #[error("backward pass: {0}")]
    Backward(OdeError),
    #[error("trajectory query: {0}")]
    Trajectory(OdeError),
    #[error("Euler rollout diverged at step {step}")]
    Divergence { step: usize },
}

/// Result of one gradient evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    /// `∂L/∂θ`.
    pub grad: Vec<f64>,
    pub loss: f64,
    /// Oracle calls over both passes.
    pub nfe: NfeCounter,
    /// Seconds.
    pub wallclock: f64,
    pub forward_knots: usize,
    pub backward_knots: usize,
    /// Right-hand-side evaluations made by the solvers.
    pub forward_rhs_evals: u64,
    pub backward_rhs_evals: u64,
    /// Neural ODE only: `|x(0) - x̃(0)|²`, infinite when the backward solve failed.
    pub aux: Option<f64>,
    /// Neural ODE only: the backward reconstruction failed and `grad` is zero.
    pub diverged: bool,
}

/// Per-evaluation scratch space for the closed loop `x ↦ f(x, π(φ(x)))` and
/// its linearization.
pub(crate) struct ClosedLoop<'a> {
    pub env: &'a dyn Environment,
    pub policy: &'a dyn Policy,
    pub params: &'a [f64],
    pub nfe: NfeCounter,
    /// Drop `∂f/∂u K` from the adjoint. Only for demonstrating that the term
    /// matters.
    pub omit_feedback: bool,
    z: Vec<f64>,
    pub u: Vec<f64>,
    tape: Tape,
    phi_jac: DMatrix<f64>,
    pi_jac: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub dwdx: Vec<f64>,
    pub dwdu: Vec<f64>,
    v: Vec<f64>,
    lin_time: Option<f64>,
}

impl<'a> ClosedLoop<'a> {
    pub fn new(env: &'a dyn Environment, policy: &'a dyn Policy, params: &'a [f64]) -> Result<Self, GradError> {
        let (d, k, m) = (env.dim_x(), env.dim_u(), env.feature_dim());
        if policy.input_dim() != m {
            return Err(GradError::Setup(format!(
                "policy takes {} inputs but {} provides {m} features",
                policy.input_dim(),
                env.name()
            )));
        }
        if policy.output_dim() != k {
            return Err(GradError::Setup(format!(
                "policy emits {} controls but {} expects {k}",
                policy.output_dim(),
                env.name()
            )));
        }
        if params.len() != policy.num_params() {
            return Err(GradError::Setup(format!(
                "{} parameters given, policy has {}",
                params.len(),
                policy.num_params()
            )));
        }
        Ok(Self {
            env,
            policy,
            params,
            nfe: NfeCounter::default(),
            omit_feedback: false,
            z: vec![0.0; m],
            u: vec![0.0; k],
            tape: Tape::new(),
            phi_jac: DMatrix::zeros(m, d),
            pi_jac: DMatrix::zeros(k, m),
            k: DMatrix::zeros(k, d),
            a: DMatrix::zeros(d, d),
            b: DMatrix::zeros(d, k),
            dwdx: vec![0.0; d],
            dwdu: vec![0.0; k],
            v: vec![0.0; k],
            lin_time: None,
        })
    }

    pub fn dim_x(&self) -> usize {
        self.env.dim_x()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn control(&mut self, x: &[f64]) {
        self.env.features(x, &mut self.z);
        self.policy.forward(self.params, &self.z, &mut self.tape, &mut self.u);
    }

    /// Closed-loop `f`, one `n_f`.
    pub fn f(&mut self, x: &[f64], dx: &mut [f64]) {
        self.control(x);
        self.env.dynamics(x, &self.u, dx, &mut self.nfe);
    }

    /// Closed-loop `f` and `w` at one point, one `n_f`.
    pub fn f_and_w(&mut self, x: &[f64], dx: &mut [f64]) -> f64 {
        self.f(x, dx);
        self.env.cost(x, &self.u)
    }

    /// Evaluates the Jacobians, cost partials and feedback gain `K` at `x`;
    /// one `n_dfdx` and one `n_dfdu`.
    pub fn linearize(&mut self, x: &[f64]) {
        self.lin_time = None;
        self.control(x);
        self.env.jacobians(x, &self.u, &mut self.a, &mut self.b, &mut self.nfe);
        self.env.cost_grad(x, &self.u, &mut self.dwdx, &mut self.dwdu);
        self.env.features_jacobian(x, &mut self.phi_jac);
        self.policy.input_jacobian(self.params, &self.tape, &mut self.pi_jac);
        self.k.gemm(1.0, &self.pi_jac, &self.phi_jac, 0.0);
    }

    /// Linearizes at `traj(t)`, writing the state into `x`. Along a stored
    /// trajectory the linearization depends on `t` alone, so a repeated query
    /// at the same time (the last two Dormand–Prince stages) reuses it
    /// without calling the environment again.
    pub fn linearize_on(&mut self, traj: &DenseTrajectory, t: f64, x: &mut [f64]) -> Result<(), OdeError> {
        if self.lin_time == Some(t) {
            return Ok(());
        }
        traj.eval_into(t, x)?;
        self.linearize(x);
        self.lin_time = Some(t);
        Ok(())
    }

    /// After [`linearize`](Self::linearize): stores `v = Bᵀα + ∂w/∂u` and
    /// returns `-(Aᵀα + Kᵀv + ∂w/∂x)`, scaled by `scale`, into `out`.
    pub fn adjoint(&mut self, alpha: &[f64], scale: f64, out: &mut [f64]) {
        let (d, k) = (self.a.nrows(), self.b.ncols());
        for j in 0..k {
            let mut s = self.dwdu[j];
            for i in 0..d {
                s += self.b[(i, j)] * alpha[i];
            }
            self.v[j] = s;
        }
        let feedback = if self.omit_feedback { &self.dwdu } else { &self.v };
        for (j, o) in out.iter_mut().enumerate().take(d) {
            let mut s = self.dwdx[j];
            for i in 0..d {
                s += self.a[(i, j)] * alpha[i];
            }
            for i in 0..k {
                s += self.k[(i, j)] * feedback[i];
            }
            *o = -scale * s;
        }
    }

    /// After [`adjoint`](Self::adjoint): `out += scale · vᵀ ∂π/∂θ`.
    pub fn accumulate_vjp(&self, scale: f64, out: &mut [f64]) {
        self.policy.accumulate_param_vjp(self.params, &self.tape, &self.v, scale, out);
    }

    pub fn terminal_grad(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.env.terminal_cost_grad(x, &mut out);
        out
    }
}

pub(crate) fn check_x0(env: &dyn Environment, x0: &[f64]) -> Result<(), GradError> {
    if x0.len() != env.dim_x() {
        return Err(GradError::Setup(format!("x0 has {} entries, {} has dim_x = {}", x0.len(), env.name(), env.dim_x())));
    }
    Ok(())
}

/// Forward pass: integrates `(x, c)` with `dc/dt = w` over `[0, T]`.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub loss: f64,
    /// State trajectory with the cost coordinate projected off; `None` when
    /// `T = 0`.
    pub trajectory: Option<DenseTrajectory>,
    pub nfe: NfeCounter,
    pub rhs_evals: u64,
}

pub(crate) fn forward_pass(cl: &mut ClosedLoop, x0: &[f64], config: &SolverConfig) -> Result<Rollout, GradError> {
    let d = cl.dim_x();
    let horizon = cl.env.horizon();
    if horizon == 0.0 {
        return Ok(Rollout { loss: cl.env.terminal_cost(x0), trajectory: None, nfe: NfeCounter::default(), rhs_evals: 0 });
    }
    let before = cl.nfe;
    let mut y0 = x0.to_vec();
    y0.push(0.0);
    let traj = solve_ivp(
        |_t, y: &[f64], dy: &mut [f64]| {
            dy[d] = cl.f_and_w(&y[..d], &mut dy[..d]);
        },
        &y0,
        0.0,
        horizon,
        config,
    )
    .map_err(GradError::Forward)?;
    let end = traj.final_state();
    let loss = end[d] + cl.env.terminal_cost(&end[..d]);
    let rhs_evals = traj.stats().rhs_evals;
    let nfe = NfeCounter { n_f: cl.nfe.n_f - before.n_f, ..Default::default() };
    Ok(Rollout { loss, trajectory: Some(traj.project(0..d)), nfe, rhs_evals })
}

/// Loss of following `π_θ` from `x0` over the environment's horizon.
pub fn rollout_loss(
    env: &dyn Environment,
    policy: &dyn Policy,
    params: &[f64],
    x0: &[f64],
    config: &SolverConfig,
) -> Result<Rollout, GradError> {
    check_x0(env, x0)?;
    let mut cl = ClosedLoop::new(env, policy, params)?;
    forward_pass(&mut cl, x0, config)
}

fn query(traj: &DenseTrajectory, t: f64) -> Result<Vec<f64>, GradError> {
    traj.eval(t).map_err(GradError::Trajectory)
}

/// `dα/dt` at time `t` against the stored state trajectory.
pub fn adjoint_rhs(
    env: &dyn Environment,
    policy: &dyn Policy,
    params: &[f64],
    traj: &DenseTrajectory,
    alpha: &[f64],
    t: f64,
    nfe: &mut NfeCounter,
) -> Result<Vec<f64>, GradError> {
    let x = query(traj, t)?;
    let mut cl = ClosedLoop::new(env, policy, params)?;
    cl.linearize(&x);
    let mut out = vec![0.0; x.len()];
    cl.adjoint(alpha, 1.0, &mut out);
    *nfe += cl.nfe;
    Ok(out)
}

/// `dg/dt = -(Bᵀα + ∂w/∂u)ᵀ ∂π/∂θ` at time `t`.
pub fn gradient_rhs(
    env: &dyn Environment,
    policy: &dyn Policy,
    params: &[f64],
    traj: &DenseTrajectory,
    alpha: &[f64],
    t: f64,
    nfe: &mut NfeCounter,
) -> Result<Vec<f64>, GradError> {
    let x = query(traj, t)?;
    let mut cl = ClosedLoop::new(env, policy, params)?;
    cl.linearize(&x);
    let mut scratch = vec![0.0; x.len()];
    cl.adjoint(alpha, 1.0, &mut scratch);
    let mut out = vec![0.0; params.len()];
    cl.accumulate_vjp(-1.0, &mut out);
    *nfe += cl.nfe;
    Ok(out)
}

#[cfg(test)]
pub(crate) mod fixtures;
