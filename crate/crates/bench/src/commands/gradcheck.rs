//! Gradient correctness against independent references.
//!
//! * `bptt-exact`: BPTT against central differences of the same Euler
//!   discretization on the diff-drive task.
//! * `ctpg-vs-oracle`: CTPG against central differences of a fine RK4
//!   rollout, on the diff-drive task and on LQR.
//! * `fused-vs-two-pass`: the single backward solve against the two-pass
//!   (adjoint, then quadrature) variant.
//! * `lqr-closed-form`: loss and `dL/dk` of `u = -k x` on LQR, where
//!   `L(k) = |x₀|² (1 + k²)(1 − e^{−2kT}) / (2k)`.
//!
//! | key | default |
//! |---|---|
//! | `seed` | `0` |
//! | `gradcheck.horizon` | `1` (diff-drive horizon) |
//! | `gradcheck.hidden` | `8` |
//! | `gradcheck.step_size` | `0.01` (BPTT) |
//! | `gradcheck.ctpg_tol` | `1e-8` |
//! | `gradcheck.fusion_tol` | `1e-10` (both sides of `fused-vs-two-pass`) |
//! | `gradcheck.fine_h` | `1e-3` (oracle RK4 step) |
//! | `gradcheck.eps` | `1e-5` (oracle perturbation) |
//! | `gradcheck.tolerance` | none; replaces every threshold when set |
//! | `gradcheck.omit_feedback` | `false`; drop the policy feedback term from the adjoint |

use std::path::Path;

use ctpg::env::{DiffDriveEnv, Environment, LqrEnv};
use ctpg::grad::{
    bptt_gradient, ctpg_gradient, ctpg_gradient_two_pass, fd_gradient_discrete, fd_gradient_oracle, relative_error,
    CtpgConfig, GradError,
};
use ctpg::policy::{init_params, Mlp, MlpArch, Policy, ScalarGain};
use ctpg::rng::{stream, Stream};

use crate::config::Config;
use crate::output::{num, Table};
use crate::{BenchError, Check, OutputOptions};

#[derive(Debug, Clone)]
pub struct GradRow {
    pub check: String,
    pub case: String,
    pub value: f64,
    pub threshold: f64,
}

impl GradRow {
    pub fn passed(&self) -> bool {
        self.value < self.threshold
    }
}

#[derive(Debug)]
pub struct GradcheckReport {
    pub rows: Vec<GradRow>,
    pub checks: Vec<Check>,
    pub fingerprint: String,
}

/// Closed-form LQR loss and its derivative for `A = 0`, `B = Q = R = I`.
pub fn lqr_scalar_gain_loss(k: f64, x0_norm2: f64, horizon: f64) -> (f64, f64) {
    let e = (-2.0 * k * horizon).exp();
    let c = x0_norm2 / 2.0;
    let loss = c * (1.0 + k * k) / k * (1.0 - e);
    let dloss = c * ((1.0 - 1.0 / (k * k)) * (1.0 - e) + (1.0 + k * k) / k * 2.0 * horizon * e);
    (loss, dloss)
}

struct Case<'a> {
    name: &'static str,
    env: &'a dyn Environment,
    policy: &'a dyn Policy,
    params: Vec<f64>,
    x0: Vec<f64>,
}

pub fn run(cfg: &Config, out: Option<&Path>) -> Result<GradcheckReport, BenchError> {
    let seed: u64 = cfg.get_or("seed", 0)?;
    let horizon: f64 = cfg.get_or("gradcheck.horizon", 1.0)?;
    let hidden: usize = cfg.get_or("gradcheck.hidden", 8)?;
    let h: f64 = cfg.get_or("gradcheck.step_size", 0.01)?;
    let ctpg_tol: f64 = cfg.get_or("gradcheck.ctpg_tol", 1e-8)?;
    let fusion_tol: f64 = cfg.get_or("gradcheck.fusion_tol", 1e-10)?;
    let fine_h: f64 = cfg.get_or("gradcheck.fine_h", 1e-3)?;
    let eps: f64 = cfg.get_or("gradcheck.eps", 1e-5)?;
    let tolerance: Option<f64> = cfg.get_opt("gradcheck.tolerance")?;
    let omit_feedback: bool = cfg.get_or("gradcheck.omit_feedback", false)?;
    let output = OutputOptions::read(cfg, out)?;
    cfg.finish()?;
    if !(horizon > 0.0) || hidden == 0 {
        return Err(cfg.value_error("gradcheck", "horizon and hidden width must be positive").into());
    }
    let threshold = |default: f64| tolerance.unwrap_or(default);
    let run_err = |e: GradError| BenchError::Run(e.to_string());
    let mut ctpg_cfg = CtpgConfig::tolerance(ctpg_tol);
    ctpg_cfg.omit_feedback = omit_feedback;
    let mut fusion_cfg = CtpgConfig::tolerance(fusion_tol);
    fusion_cfg.omit_feedback = omit_feedback;

    let diffdrive = DiffDriveEnv::default().with_horizon(horizon);
    let dd_arch = MlpArch::new(vec![diffdrive.feature_dim(), hidden, diffdrive.dim_u()], 1.0)
        .map_err(|e| BenchError::Run(e.to_string()))?;
    let dd_policy = Mlp::new(dd_arch.clone());
    let lqr = LqrEnv::standard();
    let lqr_arch = MlpArch::new(vec![lqr.feature_dim(), hidden, lqr.dim_u()], 1.0)
        .map_err(|e| BenchError::Run(e.to_string()))?;
    let lqr_policy = Mlp::new(lqr_arch.clone());
    let mut rng = stream(seed, Stream::InitialStates);
    let cases = [
        Case {
            name: "diffdrive",
            env: &diffdrive,
            policy: &dd_policy,
            params: init_params(&dd_arch, seed).into_inner(),
            x0: diffdrive.initial_dist().sample(&mut rng),
        },
        Case {
            name: "lqr",
            env: &lqr,
            policy: &lqr_policy,
            params: init_params(&lqr_arch, seed).into_inner(),
            x0: lqr.initial_dist().sample(&mut rng),
        },
    ];

    let mut rows = Vec::new();
    let dd = &cases[0];
    let bptt = bptt_gradient(dd.env, dd.policy, &dd.params, &dd.x0, h).map_err(run_err)?;
    let discrete = fd_gradient_discrete(dd.env, dd.policy, &dd.params, &dd.x0, h, eps).map_err(run_err)?;
    rows.push(GradRow {
        check: "bptt-exact".into(),
        case: dd.name.into(),
        value: relative_error(&bptt.grad, &discrete, 1e-8),
        threshold: threshold(1e-5),
    });

    for c in &cases {
        let fused = ctpg_gradient(c.env, c.policy, &c.params, &c.x0, &ctpg_cfg).map_err(run_err)?;
        let oracle = fd_gradient_oracle(c.env, c.policy, &c.params, &c.x0, fine_h, eps).map_err(run_err)?;
        rows.push(GradRow {
            check: "ctpg-vs-oracle".into(),
            case: c.name.into(),
            value: relative_error(&fused.grad, &oracle, 1e-8),
            threshold: threshold(1e-3),
        });
        let fused = ctpg_gradient(c.env, c.policy, &c.params, &c.x0, &fusion_cfg).map_err(run_err)?;
        let two_pass = ctpg_gradient_two_pass(c.env, c.policy, &c.params, &c.x0, &fusion_cfg).map_err(run_err)?;
        rows.push(GradRow {
            check: "fused-vs-two-pass".into(),
            case: c.name.into(),
            value: relative_error(&fused.grad, &two_pass.grad, 1e-8),
            threshold: threshold(1e-6),
        });
    }

    let gain = ScalarGain::new(lqr.dim_x());
    let x0 = [1.0, 1.0];
    let x0_norm2 = 2.0;
    for (k, check_loss) in [(2.0, true), (1.0, false)] {
        let est = ctpg_gradient(&lqr, &gain, &[k], &x0, &ctpg_cfg).map_err(run_err)?;
        let (loss, dloss) = lqr_scalar_gain_loss(k, x0_norm2, lqr.horizon());
        if check_loss {
            rows.push(GradRow {
                check: "lqr-closed-form".into(),
                case: format!("loss k={k}"),
                value: (est.loss - loss).abs(),
                threshold: threshold(1e-4),
            });
        }
        rows.push(GradRow {
            check: "lqr-closed-form".into(),
            case: format!("dloss k={k}"),
            value: (est.grad[0] - dloss).abs(),
            threshold: threshold(if k == 1.0 { 1e-4 } else { 1e-3 }),
        });
    }

    let mut checks: Vec<Check> = Vec::new();
    for name in ["bptt-exact", "ctpg-vs-oracle", "fused-vs-two-pass", "lqr-closed-form"] {
        let group: Vec<&GradRow> = rows.iter().filter(|r| r.check == name).collect();
        let detail = group
            .iter()
            .map(|r| format!("{} {:.2e} (< {:.0e})", r.case, r.value, r.threshold))
            .collect::<Vec<_>>()
            .join(", ");
        checks.push(Check::new(name, group.iter().all(|r| r.passed()), detail));
    }
    let fingerprint = cfg.fingerprint();
    output.write(&table(&rows), &fingerprint, PLOT)?;
    Ok(GradcheckReport { rows, checks, fingerprint })
}

fn table(rows: &[GradRow]) -> Table {
    let mut t = Table::new(&["check", "case", "error", "threshold", "pass"]);
    for r in rows {
        t.push(vec![r.check.clone(), r.case.clone(), num(r.value), num(r.threshold), r.passed().to_string()]);
    }
    t
}

const PLOT: &str = r#"labels = df["check"] + "\n" + df["case"]
fig, ax = plt.subplots(figsize=(8, 4))
ax.bar(range(len(df)), df["error"], color=["tab:green" if p else "tab:red" for p in df["pass"]])
ax.scatter(range(len(df)), df["threshold"], marker="_", s=400, color="k", label="threshold")
ax.set_xticks(range(len(df)))
ax.set_xticklabels(labels, fontsize=7)
ax.set_yscale("log")
ax.set_ylabel("error")
ax.legend()"#;
