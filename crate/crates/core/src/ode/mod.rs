//! Explicit ODE solvers with dense-output trajectory storage.
//!
//! Three methods are provided: forward Euler, classical RK4 and an adaptive
//! Dormand–Prince 5(4) pair. All of them integrate in either time direction
//! (`t1 < t0` is a backward solve) and land exactly on `t1`.
//!
//! Right-hand sides are plain closures `FnMut(t, x, dxdt)`. Evaluation
//! counting is the caller's business: bind a counter inside the closure and
//! every call the solver makes, rejected adaptive trials included, is seen.
//!
//! ```
//! use ctpg::ode::{solve_ivp, SolverConfig};
//!
//! let traj = solve_ivp(|_t, x: &[f64], dx: &mut [f64]| dx[0] = -x[0], &[1.0], 0.0, 1.0,
//!                      &SolverConfig::rk4(0.1)).unwrap();
//! assert!((traj.final_state()[0] - (-1.0f64).exp()).abs() < 1e-6);
//! ```

mod dense;
mod solve;
mod step;

pub use dense::DenseTrajectory;
pub use solve::{integrate_final, solve_ivp, solve_ivp_weighted, FinalState};
pub(crate) use solve::fixed_step_count;
pub use step::{step_adaptive, step_euler, step_rk4, AdaptiveStep};

use std::ops::{Add, AddAssign};

use thiserror::Error;

/// Errors raised by the solvers and by trajectory evaluation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum OdeError {
    /// The state or a stage value became NaN or infinite.
    #[error("solution diverged (non-finite state) at t = {t}")]
    Divergence { t: f64 },
    /// The adaptive controller shrank the step below `min_step`.
    #[error("stiffness/accuracy failure at t = {t}: step size underflow (err_norm = {err_norm:e})")]
    StepSizeUnderflow { t: f64, err_norm: f64 },
    #[error("maximum number of steps ({max_steps}) exceeded at t = {t}")]
    MaxStepsExceeded { max_steps: usize, t: f64 },
    /// Dense output is never extrapolated.
    #[error("t = {t} outside trajectory span [{lo}, {hi}]")]
    OutOfRange { t: f64, lo: f64, hi: f64 },
    #[error("invalid solver input: {0}")]
    Invalid(String),
}

/// Integration method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Euler,
    Rk4,
    /// Dormand–Prince 5(4) with elementary step-size control.
    Adaptive,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Euler => "euler",
            Method::Rk4 => "rk4",
            Method::Adaptive => "adaptive",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "euler" => Ok(Method::Euler),
            "rk4" => Ok(Method::Rk4),
            "adaptive" | "dopri5" => Ok(Method::Adaptive),
            other => Err(format!("unknown solver method `{other}`")),
        }
    }
}

/// Solver settings. Fixed-step methods use `step_size`; the adaptive method
/// uses `abstol`/`reltol` and treats `step_size` as unused.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub method: Method,
    pub step_size: f64,
    pub abstol: f64,
    pub reltol: f64,
    pub max_steps: usize,
    /// Smallest admissible adaptive step. `None` means `1e-10 * |t1 - t0|`.
    pub min_step: Option<f64>,
    /// First adaptive trial step. `None` selects one automatically at the
    /// price of one extra right-hand-side evaluation.
    pub initial_step: Option<f64>,
}

pub const DEFAULT_MAX_STEPS: usize = 1_000_000;

impl SolverConfig {
    pub fn euler(step_size: f64) -> Self {
        Self::fixed(Method::Euler, step_size)
    }

    pub fn rk4(step_size: f64) -> Self {
        Self::fixed(Method::Rk4, step_size)
    }

    pub fn adaptive(abstol: f64, reltol: f64) -> Self {
        Self {
            method: Method::Adaptive,
            step_size: f64::NAN,
            abstol,
            reltol,
            max_steps: DEFAULT_MAX_STEPS,
            min_step: None,
            initial_step: None,
        }
    }

    fn fixed(method: Method, step_size: f64) -> Self {
        Self {
            method,
            step_size,
            abstol: f64::NAN,
            reltol: f64::NAN,
            max_steps: DEFAULT_MAX_STEPS,
            min_step: None,
            initial_step: None,
        }
    }

    pub fn with_max_steps(mut self, max_steps: usize) -> Self {
        self.max_steps = max_steps;
        self
    }

    /// A short stable description, e.g. `rk4(h=0.01)` or `adaptive(atol=1e-6,rtol=1e-6)`.
    pub fn fingerprint(&self) -> String {
        match self.method {
            Method::Euler | Method::Rk4 => format!("{}(h={:e})", self.method.name(), self.step_size),
            Method::Adaptive => format!("adaptive(atol={:e},rtol={:e})", self.abstol, self.reltol),
        }
    }

    pub(crate) fn validate(&self) -> Result<(), OdeError> {
        if self.max_steps == 0 {
            return Err(OdeError::Invalid("max_steps must be positive".into()));
        }
        match self.method {
            Method::Euler | Method::Rk4 => {
                if !(self.step_size > 0.0 && self.step_size.is_finite()) {
                    return Err(OdeError::Invalid(format!(
                        "step_size must be positive, got {}",
                        self.step_size
                    )));
                }
            }
            Method::Adaptive => {
                if !(self.abstol > 0.0 && self.reltol > 0.0) {
                    return Err(OdeError::Invalid("tolerances must be positive".into()));
                }
            }
        }
        if let Some(m) = self.min_step {
            if !(m > 0.0) {
                return Err(OdeError::Invalid("min_step must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Counts of oracle evaluations: dynamics `f`, and the Jacobians `∂f/∂x`
/// and `∂f/∂u`. Their sum is the hardware-independent cost of an estimate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct NfeCounter {
    pub n_f: u64,
    pub n_dfdx: u64,
    pub n_dfdu: u64,
}

impl NfeCounter {
    pub fn total(&self) -> u64 {
        self.n_f + self.n_dfdx + self.n_dfdu
    }
}

impl AddAssign for NfeCounter {
    fn add_assign(&mut self, rhs: Self) {
        self.n_f += rhs.n_f;
        self.n_dfdx += rhs.n_dfdx;
        self.n_dfdu += rhs.n_dfdu;
    }
}

impl Add for NfeCounter {
    type Output = NfeCounter;

    fn add(mut self, rhs: Self) -> Self {
        self += rhs;
        self
    }
}

impl std::iter::Sum for NfeCounter {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(NfeCounter::default(), Add::add)
    }
}

/// Bookkeeping returned with every solve.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SolveStats {
    /// Right-hand-side evaluations, rejected trials included.
    pub rhs_evals: u64,
    pub accepted: usize,
    pub rejected: usize,
}

pub(crate) fn all_finite(x: &[f64]) -> bool {
    x.iter().all(|v| v.is_finite())
}
