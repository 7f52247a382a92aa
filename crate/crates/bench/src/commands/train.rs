//! Policy training runs, one per seed, with history CSV and parameter files.
//!
//! Keys (besides `env.*`, `policy.*`, `output.*`):
//!
//! | key | default |
//! |---|---|
//! | `seeds` | `0, 1, 2, 3, 4` |
//! | `train.estimator` | `ctpg`, `bptt` or `node` |
//! | `train.tol` | `1e-3` (ctpg and node) |
//! | `train.step_size` | `0.01` (bptt) |
//! | `train.lr` | `0.01` |
//! | `train.batch_size` | `16` |
//! | `train.iterations` | `200` |
//! | `train.grad_clip` | `1.0`; `none` disables |
//! | `output.params` | `true`: write `<out>.seed<N>.params` per seed |
//! | `output.trajectory_grid` | `0`; `n > 0` dumps `n × n` evaluation rollouts to `<out>.traj.csv` |
//! | `output.trajectory_dt` | `0.05` |

use std::path::Path;

use ctpg::env::{Environment, InitialStateDist};
use ctpg::grad::{rollout_loss, CtpgConfig};
use ctpg::ode::{NfeCounter, SolverConfig};
use ctpg::policy::{save_params, FlatParams, Mlp, ParamsMeta, Policy};
use ctpg::train::{train_policy, Estimator, TrainConfig, TrainHistory};

use crate::config::Config;
use crate::output::{num, opt_num, sibling, Table};
use crate::setup::{build_env, build_policy};
use crate::{io_err, BenchError, Check, OutputOptions};

#[derive(Debug)]
pub struct TrainRun {
    pub seed: u64,
    pub params: FlatParams,
    pub history: TrainHistory,
}

#[derive(Debug)]
pub struct TrainReport {
    pub runs: Vec<TrainRun>,
    pub checks: Vec<Check>,
    pub fingerprint: String,
}

pub fn read_estimator(cfg: &Config) -> Result<Estimator, BenchError> {
    let name = cfg.str_or("train.estimator", "ctpg");
    let tol: f64 = cfg.get_or("train.tol", 1e-3)?;
    let h: f64 = cfg.get_or("train.step_size", 0.01)?;
    Ok(match name.as_str() {
        "ctpg" => Estimator::Ctpg(CtpgConfig::tolerance(tol)),
        "bptt" => Estimator::Bptt { step_size: h },
        "node" => Estimator::Node(SolverConfig::adaptive(tol, tol)),
        other => return Err(cfg.value_error("train.estimator", format!("unknown estimator `{other}`")).into()),
    })
}

pub fn run(cfg: &Config, out: Option<&Path>, threads: usize) -> Result<TrainReport, BenchError> {
    let built = build_env(cfg, "diffdrive")?;
    let spec = build_policy(cfg, &built, "mlp", &[64, 64])?;
    let seeds: Vec<u64> = cfg.list_or("seeds", &[0, 1, 2, 3, 4])?;
    let estimator = read_estimator(cfg)?;
    let mut base = TrainConfig::new(estimator, cfg.get_or("train.lr", 0.01)?);
    base.batch_size = cfg.get_or("train.batch_size", 16)?;
    base.iterations = cfg.get_or("train.iterations", 200)?;
    base.grad_clip = cfg.opt_or("train.grad_clip", Some(1.0))?;
    base.threads = threads;
    let write_params: bool = cfg.get_or("output.params", true)?;
    let grid: usize = cfg.get_or("output.trajectory_grid", 0)?;
    let traj_dt: f64 = cfg.get_or("output.trajectory_dt", 0.05)?;
    let output = OutputOptions::read(cfg, out)?;
    cfg.finish()?;
    if seeds.is_empty() {
        return Err(cfg.value_error("seeds", "at least one seed is required").into());
    }
    base.validate().map_err(|e| cfg.value_error("train", e.to_string()))?;
    if grid > 0 && !(traj_dt > 0.0) {
        return Err(cfg.value_error("output.trajectory_dt", "must be positive").into());
    }

    let env = built.env.as_ref();
    let policy = spec.policy();
    let mut runs = Vec::new();
    for &seed in &seeds {
        let c = TrainConfig { seed, ..base.clone() };
        let (params, history) =
            train_policy(env, &policy, spec.params(seed), &c).map_err(|e| BenchError::Run(e.to_string()))?;
        runs.push(TrainRun { seed, params, history });
    }

    let checks: Vec<Check> = runs
        .iter()
        .map(|r| {
            let first = r.history.records[0].mean_loss;
            let last = r.history.final_loss();
            Check::new(
                format!("seed-{}-trained", r.seed),
                last.is_some(),
                format!(
                    "loss {first:.4} → {}, {} failed samples, {} oracle calls",
                    last.map_or("n/a".into(), |l| format!("{l:.4}")),
                    r.history.failures.len(),
                    r.history.total_nfe().total()
                ),
            )
        })
        .collect();

    let fingerprint = format!("{};estimator={}", cfg.fingerprint(), base.estimator.fingerprint());
    output.write(&history_table(&runs, output.timing), &fingerprint, PLOT)?;
    if let Some(path) = &output.path {
        if write_params {
            for r in &runs {
                let p = sibling(path, &format!(".seed{}.params", r.seed));
                save_params(&p, &r.params, &ParamsMeta { arch: spec.arch(), seed: r.seed }).map_err(|e| io_err(&p, e))?;
            }
        }
        if grid > 0 {
            let p = sibling(path, ".traj.csv");
            trajectory_table(env, &policy, &runs, grid, traj_dt)?.write(&p, &fingerprint).map_err(|e| io_err(&p, e))?;
        }
    }
    Ok(TrainReport { runs, checks, fingerprint })
}

fn history_table(runs: &[TrainRun], timing: bool) -> Table {
    let mut header = vec![
        "seed", "iteration", "mean_loss", "n_f", "n_dfdx", "n_dfdu", "nfe_total", "grad_norm", "aux_mean", "failed",
    ];
    if timing {
        header.push("wallclock");
    }
    let mut t = Table::new(&header);
    for run in runs {
        for r in &run.history.records {
            let mut row = vec![
                run.seed.to_string(),
                r.iteration.to_string(),
                num(r.mean_loss),
                r.nfe.n_f.to_string(),
                r.nfe.n_dfdx.to_string(),
                r.nfe.n_dfdu.to_string(),
                r.nfe.total().to_string(),
                num(r.grad_norm),
                opt_num(r.aux_mean),
                r.failed.to_string(),
            ];
            if timing {
                row.push(num(r.wallclock));
            }
            t.push(row);
        }
    }
    t
}

/// Evaluation starts on an `n × n` grid over the first two coordinates of
/// the initial-state box, remaining coordinates at the box midpoint.
pub fn evaluation_grid(dist: &InitialStateDist, n: usize) -> Vec<Vec<f64>> {
    match dist {
        InitialStateDist::Fixed(x) => vec![x.clone()],
        InitialStateDist::Uniform { lo, hi } => {
            let mid: Vec<f64> = lo.iter().zip(hi).map(|(l, h)| 0.5 * (l + h)).collect();
            let at = |i: usize, k: usize| {
                if n == 1 {
                    mid[k]
                } else {
                    lo[k] + (hi[k] - lo[k]) * i as f64 / (n - 1) as f64
                }
            };
            let mut out = Vec::new();
            for i in 0..n {
                for j in 0..n {
                    let mut x = mid.clone();
                    x[0] = at(i, 0);
                    if x.len() > 1 {
                        x[1] = at(j, 1);
                    }
                    out.push(x);
                }
            }
            out
        }
    }
}

fn trajectory_table(
    env: &dyn Environment,
    policy: &Mlp,
    runs: &[TrainRun],
    grid: usize,
    dt: f64,
) -> Result<Table, BenchError> {
    let d = env.dim_x();
    let mut header = vec!["seed".to_string(), "start".to_string(), "t".to_string()];
    header.extend((0..d).map(|i| format!("x{i}")));
    let mut t = Table { header, rows: Vec::new() };
    let starts = evaluation_grid(env.initial_dist(), grid);
    let solver = SolverConfig::adaptive(1e-8, 1e-8);
    let horizon = env.horizon();
    let steps = (horizon / dt).ceil() as usize;
    let mut x = vec![0.0; d];
    for run in runs {
        for (k, x0) in starts.iter().enumerate() {
            let roll = rollout_loss(env, policy as &dyn Policy, &run.params, x0, &solver)
                .map_err(|e| BenchError::Run(format!("trajectory dump: {e}")))?;
            for s in 0..=steps {
                let time = (s as f64 * dt).min(horizon);
                match &roll.trajectory {
                    Some(tr) => tr.eval_into(time, &mut x).map_err(|e| BenchError::Run(e.to_string()))?,
                    None => x[..d].copy_from_slice(x0),
                }
                let mut row = vec![run.seed.to_string(), k.to_string(), num(time)];
                row.extend(x[..d].iter().map(|v| num(*v)));
                t.rows.push(row);
            }
        }
    }
    Ok(t)
}

/// How cheaply one set of runs reaches another's final loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Efficiency {
    /// Reference final loss: mean over the last `window` iterations of the
    /// seed-averaged reference curve.
    pub target: f64,
    /// First iteration whose trailing `window`-mean of the candidate's
    /// seed-averaged curve is at or below `target`.
    pub reached_at: Option<usize>,
    pub candidate_nfe: u64,
    pub reference_nfe: u64,
    pub ratio: Option<f64>,
}

fn mean_curve(runs: &[&TrainHistory]) -> Vec<f64> {
    let n = runs.iter().map(|h| h.records.len()).min().unwrap_or(0);
    (0..n).map(|i| runs.iter().map(|h| h.records[i].mean_loss).sum::<f64>() / runs.len() as f64).collect()
}

fn nfe_at(runs: &[&TrainHistory], i: usize) -> u64 {
    runs.iter().map(|h| h.records[i].nfe).sum::<NfeCounter>().total()
}

pub fn efficiency(candidate: &[&TrainHistory], reference: &[&TrainHistory], window: usize) -> Efficiency {
    let rc = mean_curve(reference);
    let cc = mean_curve(candidate);
    let w = window.max(1).min(rc.len());
    let target = rc[rc.len() - w..].iter().sum::<f64>() / w as f64;
    let reference_nfe = nfe_at(reference, rc.len() - 1);
    let reached_at = (0..cc.len()).find(|&i| {
        let lo = (i + 1).saturating_sub(w);
        cc[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64 <= target
    });
    let candidate_nfe = reached_at.map_or(nfe_at(candidate, cc.len() - 1), |i| nfe_at(candidate, i));
    Efficiency {
        target,
        reached_at,
        candidate_nfe,
        reference_nfe,
        ratio: reached_at.map(|_| candidate_nfe as f64 / reference_nfe as f64),
    }
}

const PLOT: &str = r#"fig, axes = plt.subplots(1, 2, figsize=(10, 4))
for seed, g in df.groupby("seed"):
    axes[0].plot(g["iteration"], g["mean_loss"], label=f"seed {seed}")
    axes[1].plot(g["nfe_total"], g["mean_loss"], label=f"seed {seed}")
axes[0].set_xlabel("iteration")
axes[1].set_xlabel("cumulative oracle calls")
axes[1].set_xscale("log")
for ax in axes:
    ax.set_ylabel("mean batch loss")
    ax.legend()"#;
