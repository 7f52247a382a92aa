//! Minibatch policy optimization with Adam.
//!
//! Every iteration draws `batch_size` starting states from the environment's
//! initial-state distribution, estimates `∂L/∂θ` for each, averages the
//! successful estimates in sample order, optionally clips, and takes one Adam
//! step. Starting states come from their own seeded stream, so runs that
//! differ only in the estimator see the same sequence of states.

mod adam;

pub use adam::{adam_step, clip_grad, AdamConfig, AdamState};

use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::env::{Environment, InitialStateDist};
use crate::grad::{bptt_gradient, ctpg_gradient, node_gradient, CtpgConfig, GradError, GradientEstimate};
use crate::ode::{NfeCounter, SolverConfig};
use crate::policy::{init_params, FlatParams, MlpArch, Policy};
use crate::rng::{stream, Stream};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite gradient component at index {index}")]
    NonFiniteGradient { index: usize },
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

/// Which gradient estimator drives training, with its settings.
#[derive(Debug, Clone, PartialEq)]
pub enum Estimator {
    Ctpg(CtpgConfig),
    /// Euler with fixed step `h`.
    Bptt { step_size: f64 },
    Node(SolverConfig),
}

impl Estimator {
    pub fn name(&self) -> &'static str {
        match self {
            Estimator::Ctpg(_) => "ctpg",
            Estimator::Bptt { .. } => "bptt",
            Estimator::Node(_) => "node",
        }
    }

    pub fn fingerprint(&self) -> String {
        match self {
            Estimator::Ctpg(c) => format!("ctpg[{}]", c.fingerprint()),
            Estimator::Bptt { step_size } => format!("bptt[h={step_size:e}]"),
            Estimator::Node(c) => format!("node[{}]", c.fingerprint()),
        }
    }

    pub fn estimate(
        &self,
        env: &dyn Environment,
        policy: &dyn Policy,
        params: &[f64],
        x0: &[f64],
    ) -> Result<GradientEstimate, GradError> {
        match self {
            Estimator::Ctpg(c) => ctpg_gradient(env, policy, params, x0, c),
            Estimator::Bptt { step_size } => bptt_gradient(env, policy, params, x0, *step_size),
            Estimator::Node(c) => node_gradient(env, policy, params, x0, c),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub estimator: Estimator,
    pub batch_size: usize,
    pub iterations: usize,
    pub adam: AdamConfig,
    /// Element-wise clamp of the averaged gradient.
    pub grad_clip: Option<f64>,
    pub seed: u64,
    /// 0 or 1 evaluates the batch on the calling thread.
    pub threads: usize,
}

impl TrainConfig {
    pub fn new(estimator: Estimator, step_size: f64) -> Self {
        Self {
            estimator,
            batch_size: 1,
            iterations: 100,
            adam: AdamConfig::new(step_size),
            grad_clip: None,
            seed: 0,
            threads: 0,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        if self.iterations == 0 {
            return Err(TrainError::Config("iterations must be at least 1".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(TrainError::Config(format!("grad_clip must be positive, got {c}")));
            }
        }
        if let Estimator::Bptt { step_size } = self.estimator {
            if !(step_size > 0.0 && step_size.is_finite()) {
                return Err(TrainError::Config(format!("bptt step size must be positive, got {step_size}")));
            }
        }
        self.adam.validate()
    }
}

/// One row of training history. Loss, gradient norm and aux refer to the
/// parameters before this iteration's update; nfe and wallclock are running
/// totals including this iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Mean over the batch members that succeeded; NaN if none did.
    pub mean_loss: f64,
    pub nfe: NfeCounter,
    pub wallclock: f64,
    /// 2-norm of the averaged gradient before clipping.
    pub grad_norm: f64,
    /// Neural ODE only: mean reconstruction discrepancy.
    pub aux_mean: Option<f64>,
    /// Largest `|Δθ_i|` applied by this iteration's update.
    pub max_update: f64,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleFailure {
    pub iteration: usize,
    pub sample: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<IterationRecord>,
    pub failures: Vec<SampleFailure>,
}

impl TrainHistory {
    pub fn final_loss(&self) -> Option<f64> {
        self.records.iter().rev().map(|r| r.mean_loss).find(|l| l.is_finite())
    }

    pub fn total_nfe(&self) -> NfeCounter {
        self.records.last().map(|r| r.nfe).unwrap_or_default()
    }
}

/// `n` draws from `dist`, advancing `rng` by exactly `n` samples.
pub fn sample_initial_states<R: Rng + ?Sized>(dist: &InitialStateDist, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..n).map(|_| dist.sample(rng)).collect()
}

/// Trains an MLP whose initial parameters are drawn from the run's parameter
/// stream.
pub fn train_mlp(
    env: &dyn Environment,
    arch: &MlpArch,
    config: &TrainConfig,
) -> Result<(FlatParams, TrainHistory), TrainError> {
    let policy = crate::policy::Mlp::new(arch.clone());
    let params = init_params(arch, config.seed);
    train_policy(env, &policy, params, config)
}

pub fn train_policy(
    env: &dyn Environment,
    policy: &dyn Policy,
    mut params: FlatParams,
    config: &TrainConfig,
) -> Result<(FlatParams, TrainHistory), TrainError> {
    config.validate()?;
    check_setup(env, policy, &params)?;
    let pool = if config.threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(config.threads)
                .build()
                .map_err(|e| TrainError::ThreadPool(e.to_string()))?,
        )
    } else {
        None
    };

    let mut rng = stream(config.seed, Stream::InitialStates);
    let mut adam = AdamState::new(params.len());
    let mut history = TrainHistory::default();
    let mut nfe = NfeCounter::default();
    let mut wallclock = 0.0;
    let n = params.len();

    for iteration in 0..config.iterations {
        let started = Instant::now();
        let states = sample_initial_states(env.initial_dist(), config.batch_size, &mut rng);
        let eval = |x0: &Vec<f64>| config.estimator.estimate(env, policy, &params, x0);
        let results: Vec<_> = match &pool {
            Some(pool) => pool.install(|| states.par_iter().map(eval).collect()),
            None => states.iter().map(eval).collect(),
        };

        let mut grad = vec![0.0; n];
        let mut loss = 0.0;
        let mut ok = 0usize;
        let mut aux = 0.0;
        let mut aux_count = 0usize;
        for (sample, result) in results.into_iter().enumerate() {
            let failure = match result {
                Ok(est) => {
                    nfe += est.nfe;
                    if let Some(a) = est.aux {
                        aux += a;
                        aux_count += 1;
                    }
                    if est.diverged {
                        Some("reverse reconstruction diverged".to_string())
                    } else if let Some(i) = est.grad.iter().position(|g| !g.is_finite()) {
                        Some(format!("non-finite gradient component at index {i}"))
                    } else {
                        for (g, e) in grad.iter_mut().zip(&est.grad) {
                            *g += e;
                        }
                        loss += est.loss;
                        ok += 1;
                        None
                    }
                }
                Err(e) => Some(e.to_string()),
            };
            if let Some(message) = failure {
                history.failures.push(SampleFailure { iteration, sample, message });
            }
        }

        let mut grad_norm = f64::NAN;
        let mut max_update = 0.0f64;
        if ok > 0 {
            let inv = 1.0 / ok as f64;
            grad.iter_mut().for_each(|g| *g *= inv);
            loss *= inv;
            grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if let Some(c) = config.grad_clip {
                clip_grad(&mut grad, c);
            }
            let before = params.clone();
            adam_step(&mut adam, &config.adam, &mut params, &grad)?;
            max_update = before.iter().zip(params.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        } else {
            loss = f64::NAN;
        }

        wallclock += started.elapsed().as_secs_f64();
        history.records.push(IterationRecord {
            iteration,
            mean_loss: loss,
            nfe,
            wallclock,
            grad_norm,
            aux_mean: (aux_count > 0).then(|| aux / aux_count as f64),
            max_update,
            failed: config.batch_size - ok,
        });
    }
    Ok((params, history))
}

fn check_setup(env: &dyn Environment, policy: &dyn Policy, params: &[f64]) -> Result<(), TrainError> {
    if policy.input_dim() != env.feature_dim() || policy.output_dim() != env.dim_u() {
        return Err(TrainError::Config(format!(
            "policy {} does not fit {} ({} features, {} controls)",
            policy.describe(),
            env.name(),
            env.feature_dim(),
            env.dim_u()
        )));
    }
    if params.len() != policy.num_params() {
        return Err(TrainError::Config(format!(
            "{} parameters given, policy has {}",
            params.len(),
            policy.num_params()
        )));
    }
    Ok(())
}
