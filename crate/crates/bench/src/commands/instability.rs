//! Training with the Neural ODE estimator, which reconstructs the state by
//! integrating backward from `x(T)`, next to a CTPG twin with the same seed.
//!
//! Keys (besides `env.*`, `policy.*`, `output.*`):
//!
//! | key | default |
//! |---|---|
//! | `seed` | `0` |
//! | `train.iterations` | `1000` |
//! | `train.lr` | `0.001` |
//! | `train.batch_size` | `1` |
//! | `node.tol` | `1e-8` (abstol = reltol) |
//! | `ctpg.tol` | `1e-6` |
//! | `check.aux_growth` | `1e3` |
//! | `check.ctpg_after` | `50` |

use std::path::Path;

use ctpg::grad::CtpgConfig;
use ctpg::ode::SolverConfig;
use ctpg::train::{train_policy, Estimator, TrainConfig, TrainHistory};

use crate::config::Config;
use crate::output::{num, opt_num, Table};
use crate::setup::{build_env, build_policy};
use crate::{BenchError, Check, OutputOptions};

#[derive(Debug)]
pub struct InstabilityReport {
    pub node: TrainHistory,
    pub ctpg: TrainHistory,
    pub checks: Vec<Check>,
    pub fingerprint: String,
}

pub fn run(cfg: &Config, out: Option<&Path>, threads: usize) -> Result<InstabilityReport, BenchError> {
    let built = build_env(cfg, "lqr")?;
    let spec = build_policy(cfg, &built, "mlp", &[32])?;
    let seed: u64 = cfg.get_or("seed", 0)?;
    let iterations: usize = cfg.get_or("train.iterations", 1000)?;
    let lr: f64 = cfg.get_or("train.lr", 0.001)?;
    let batch_size: usize = cfg.get_or("train.batch_size", 1)?;
    let node_tol: f64 = cfg.get_or("node.tol", 1e-8)?;
    let ctpg_tol: f64 = cfg.get_or("ctpg.tol", 1e-6)?;
    let growth: f64 = cfg.get_or("check.aux_growth", 1e3)?;
    let after: usize = cfg.get_or("check.ctpg_after", 50)?;
    let output = OutputOptions::read(cfg, out)?;
    cfg.finish()?;

    let env = built.env.as_ref();
    let policy = spec.policy();
    let train = |estimator| {
        let mut c = TrainConfig::new(estimator, lr);
        c.iterations = iterations;
        c.batch_size = batch_size;
        c.seed = seed;
        c.threads = threads;
        train_policy(env, &policy, spec.params(seed), &c).map(|(_, h)| h).map_err(|e| BenchError::Run(e.to_string()))
    };
    let node = train(Estimator::Node(SolverConfig::adaptive(node_tol, node_tol)))?;
    let ctpg = train(Estimator::Ctpg(CtpgConfig::tolerance(ctpg_tol)))?;

    let x0_norm2 = match env.initial_dist() {
        ctpg::env::InitialStateDist::Fixed(x) => x.iter().map(|v| v * v).sum::<f64>(),
        ctpg::env::InitialStateDist::Uniform { lo, hi } => {
            lo.iter().zip(hi).map(|(l, h)| l.abs().max(h.abs()).powi(2)).sum::<f64>()
        }
    };
    let checks = evaluate(&node, &ctpg, x0_norm2, growth, after);
    let fingerprint = cfg.fingerprint();
    output.write(&table(&node, &ctpg, output.timing), &fingerprint, PLOT)?;
    Ok(InstabilityReport { node, ctpg, checks, fingerprint })
}

pub fn evaluate(node: &TrainHistory, ctpg: &TrainHistory, x0_norm2: f64, growth: f64, after: usize) -> Vec<Check> {
    let first = &node.records[0];
    let last = node.records.last().unwrap();
    let aux0 = first.aux_mean.unwrap_or(f64::NAN);
    let aux1 = last.aux_mean.unwrap_or(f64::NAN);
    let ratio = aux1 / aux0;
    let c_first = ctpg.records[0].mean_loss;
    let worst_after = ctpg.records.iter().skip(after + 1).map(|r| r.mean_loss).fold(f64::NEG_INFINITY, f64::max);
    let c_final = ctpg.final_loss().unwrap_or(f64::NAN);
    let n_final = node.final_loss().unwrap_or(f64::NAN);
    vec![
        Check::new(
            "node-initial-discrepancy-small",
            aux0 < 1e-3 * x0_norm2,
            format!("aux at iteration 0 = {aux0:.3e} vs |x0|² = {x0_norm2}"),
        ),
        Check::new(
            "node-discrepancy-grows",
            ratio > growth,
            format!("final/initial aux = {aux1:.3e}/{aux0:.3e} = {ratio:.3e} (need > {growth:e})"),
        ),
        Check::new(
            "node-loss-decreases",
            last.mean_loss < first.mean_loss,
            format!("loss {:.4} → {:.4}", first.mean_loss, last.mean_loss),
        ),
        Check::new(
            "ctpg-bounded-by-initial-loss",
            worst_after <= c_first,
            format!("max loss after iteration {after} = {worst_after:.4}, initial = {c_first:.4}"),
        ),
        Check::new(
            "ctpg-beats-node",
            c_final < n_final,
            format!("final loss ctpg {c_final:.4} vs node {n_final:.4}"),
        ),
    ]
}

fn table(node: &TrainHistory, ctpg: &TrainHistory, timing: bool) -> Table {
    let mut header = vec!["estimator", "iteration", "loss", "aux", "nfe_total", "grad_norm"];
    if timing {
        header.push("wallclock");
    }
    let mut t = Table::new(&header);
    for (name, h) in [("node", node), ("ctpg", ctpg)] {
        for r in &h.records {
            let mut row = vec![
                name.to_string(),
                r.iteration.to_string(),
                num(r.mean_loss),
                opt_num(r.aux_mean),
                r.nfe.total().to_string(),
                num(r.grad_norm),
            ];
            if timing {
                row.push(num(r.wallclock));
            }
            t.push(row);
        }
    }
    t
}

const PLOT: &str = r#"fig, axes = plt.subplots(1, 2, figsize=(10, 4), sharey=True)
for ax, name in zip(axes, ["node", "ctpg"]):
    g = df[df["estimator"] == name]
    ax.plot(g["iteration"], g["loss"], color="tab:blue", label="loss")
    if g["aux"].notna().any():
        ax.plot(g["iteration"], g["aux"], color="tab:red", label="|x(0) - x~(0)|^2")
    ax.set_yscale("log")
    ax.set_xlabel("iteration")
    ax.set_title(name)
    ax.legend()"#;
