//! Accuracy against cost for BPTT step sizes, CTPG tolerances and Neural
//! ODE tolerances on one policy.
//!
//! Keys (besides `env.*`, `policy.*`, `output.*`):
//!
//! | key | default |
//! |---|---|
//! | `seeds` | `0` |
//! | `bptt.step_sizes` | `0.5, 0.25, 0.1, 0.05, 0.02, 0.01` |
//! | `ctpg.tolerances` | `1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8` |
//! | `node.tolerances` | `1e-4, 1e-6, 1e-8` |
//! | `oracle.fine_h`, `oracle.eps` | `1e-3`, `1e-5` |
//! | `oracle.cache` | `true` (stored next to the output) |
//! | `pareto.error_floor` | `1.0`: errors are `‖g − g*‖ / max(‖g*‖, floor)` |
//! | `pareto.check_dominance` | `true` |

use std::path::Path;

use rayon::prelude::*;

use ctpg::env::Environment;
use ctpg::grad::{
    bptt_gradient, ctpg_gradient, fd_gradient_oracle, node_gradient, relative_error, CtpgConfig, GradientEstimate,
};
use ctpg::ode::{NfeCounter, SolverConfig};
use ctpg::policy::Policy;
use ctpg::rng::{stream, Stream};

use crate::config::Config;
use crate::oracle_cache::{digest_f64, OracleCache};
use crate::output::{num, opt_num, Table};
use crate::setup::{build_env, build_policy};
use crate::{with_threads, BenchError, Check, OutputOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Kind {
    Bptt,
    Ctpg,
    Node,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Bptt => "bptt",
            Kind::Ctpg => "ctpg",
            Kind::Node => "node",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParetoRow {
    pub kind: Kind,
    /// Step size for BPTT, tolerance otherwise.
    pub value: f64,
    pub setting: String,
    pub seed: u64,
    pub rel_error: f64,
    pub nfe: NfeCounter,
    pub loss: f64,
    pub aux: Option<f64>,
    pub status: String,
    pub wallclock: f64,
}

#[derive(Debug)]
pub struct ParetoReport {
    pub rows: Vec<ParetoRow>,
    pub checks: Vec<Check>,
    pub fingerprint: String,
}

struct Point {
    kind: Kind,
    index: usize,
    value: f64,
    seed: u64,
}

/// `(seed, θ, x₀, oracle gradient)`.
type SeedOracle = (u64, Vec<f64>, Vec<f64>, Vec<f64>);

pub fn run(cfg: &Config, out: Option<&Path>, threads: usize) -> Result<ParetoReport, BenchError> {
    let built = build_env(cfg, "lqr")?;
    let spec = build_policy(cfg, &built, "lqr_optimal", &[])?;
    let seeds: Vec<u64> = cfg.list_or("seeds", &[0])?;
    let bptt_h: Vec<f64> = cfg.list_or("bptt.step_sizes", &[0.5, 0.25, 0.1, 0.05, 0.02, 0.01])?;
    let ctpg_tol: Vec<f64> = cfg.list_or("ctpg.tolerances", &[1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8])?;
    let node_tol: Vec<f64> = cfg.list_or("node.tolerances", &[1e-4, 1e-6, 1e-8])?;
    let fine_h: f64 = cfg.get_or("oracle.fine_h", 1e-3)?;
    let eps: f64 = cfg.get_or("oracle.eps", 1e-5)?;
    let use_cache: bool = cfg.get_or("oracle.cache", true)?;
    let floor: f64 = cfg.get_or("pareto.error_floor", 1.0)?;
    let check_dominance: bool = cfg.get_or("pareto.check_dominance", true)?;
    let output = OutputOptions::read(cfg, out)?;
    cfg.finish()?;

    if seeds.is_empty() {
        return Err(cfg.value_error("seeds", "at least one seed is required").into());
    }
    for (key, values) in [("bptt.step_sizes", &bptt_h), ("ctpg.tolerances", &ctpg_tol), ("node.tolerances", &node_tol)] {
        if values.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(cfg.value_error(key, "values must be positive").into());
        }
    }

    let cache = match (&output.path, use_cache) {
        (Some(p), true) => OracleCache::new(Some(p.parent().unwrap_or(Path::new(".")).join("oracle-cache"))),
        _ => OracleCache::disabled(),
    };
    let env = built.env.as_ref();
    let policy = spec.policy();

    let mut points = Vec::new();
    for &seed in &seeds {
        for (kind, values) in [(Kind::Bptt, &bptt_h), (Kind::Ctpg, &ctpg_tol), (Kind::Node, &node_tol)] {
            points.extend(values.iter().enumerate().map(|(index, &value)| Point { kind, index, value, seed }));
        }
    }

    let oracles: Vec<SeedOracle> = seeds
        .iter()
        .map(|&seed| {
            let params = spec.params(seed).into_inner();
            let x0 = env.initial_dist().sample(&mut stream(seed, Stream::InitialStates));
            let fp = format!(
                "{} | {} | theta={} | x0={} | rk4(h={fine_h:e}) | eps={eps:e}",
                env.describe(),
                policy.describe(),
                digest_f64(&params),
                digest_f64(&x0)
            );
            let oracle = cache
                .get_or_compute(&fp, || fd_gradient_oracle(env, &policy, &params, &x0, fine_h, eps))
                .map_err(|e| BenchError::Run(format!("oracle for seed {seed}: {e}")))?;
            Ok((seed, params, x0, oracle))
        })
        .collect::<Result<_, BenchError>>()?;

    let eval = |p: &Point| {
        let (_, params, x0, oracle) = oracles.iter().find(|o| o.0 == p.seed).unwrap();
        evaluate(env, &policy, params, x0, oracle, floor, p)
    };
    let mut rows: Vec<(usize, ParetoRow)> =
        with_threads(threads, || points.par_iter().map(|p| (p.index, eval(p))).collect::<Vec<_>>())?;
    rows.sort_by_key(|(index, r)| (r.kind, *index, r.seed));
    let rows: Vec<ParetoRow> = rows.into_iter().map(|(_, r)| r).collect();

    let mut checks = vec![monotone_check(&rows, &seeds)];
    if check_dominance {
        checks.push(dominance_check(&rows, &seeds));
    }
    let fingerprint = cfg.fingerprint();
    output.write(&table(&rows, output.timing), &fingerprint, PLOT)?;
    Ok(ParetoReport { rows, checks, fingerprint })
}

fn evaluate(
    env: &dyn Environment,
    policy: &dyn Policy,
    params: &[f64],
    x0: &[f64],
    oracle: &[f64],
    floor: f64,
    p: &Point,
) -> ParetoRow {
    let (setting, result): (String, Result<GradientEstimate, _>) = match p.kind {
        Kind::Bptt => (format!("euler(h={:e})", p.value), bptt_gradient(env, policy, params, x0, p.value)),
        Kind::Ctpg => {
            let c = CtpgConfig::tolerance(p.value);
            (c.fingerprint(), ctpg_gradient(env, policy, params, x0, &c))
        }
        Kind::Node => {
            let c = SolverConfig::adaptive(p.value, p.value);
            (c.fingerprint(), node_gradient(env, policy, params, x0, &c))
        }
    };
    let base = ParetoRow {
        kind: p.kind,
        value: p.value,
        setting,
        seed: p.seed,
        rel_error: f64::INFINITY,
        nfe: NfeCounter::default(),
        loss: f64::NAN,
        aux: None,
        status: String::new(),
        wallclock: 0.0,
    };
    match result {
        Ok(est) => ParetoRow {
            rel_error: if est.diverged { f64::INFINITY } else { relative_error(&est.grad, oracle, floor) },
            nfe: est.nfe,
            loss: est.loss,
            aux: est.aux,
            status: if est.diverged { "diverged".into() } else { "ok".into() },
            wallclock: est.wallclock,
            ..base
        },
        Err(e) => ParetoRow { status: format!("failed: {e}"), ..base },
    }
}

fn monotone_check(rows: &[ParetoRow], seeds: &[u64]) -> Check {
    let mut bad = Vec::new();
    for &seed in seeds {
        let mut bptt: Vec<&ParetoRow> = rows.iter().filter(|r| r.kind == Kind::Bptt && r.seed == seed).collect();
        bptt.sort_by(|a, b| b.value.total_cmp(&a.value));
        for w in bptt.windows(2) {
            if !(w[1].rel_error < w[0].rel_error) {
                bad.push(format!("seed {seed}: h={} error {:.3e} ≥ h={} error {:.3e}", w[1].value, w[1].rel_error, w[0].value, w[0].rel_error));
            }
        }
    }
    let detail = if bad.is_empty() { "BPTT error decreases with h".to_string() } else { bad.join("; ") };
    Check::new("bptt-monotone", bad.is_empty(), detail)
}

/// Every BPTT row must be beaten by some CTPG row of the same seed: error no
/// larger and strictly fewer oracle calls.
pub fn dominance_check(rows: &[ParetoRow], seeds: &[u64]) -> Check {
    let mut undominated = Vec::new();
    let mut count = 0;
    for &seed in seeds {
        let ctpg: Vec<&ParetoRow> = rows.iter().filter(|r| r.kind == Kind::Ctpg && r.seed == seed).collect();
        for b in rows.iter().filter(|r| r.kind == Kind::Bptt && r.seed == seed && r.rel_error.is_finite()) {
            count += 1;
            let beaten = ctpg.iter().any(|c| c.rel_error <= b.rel_error && c.nfe.total() < b.nfe.total());
            if !beaten {
                let cheapest = ctpg
                    .iter()
                    .filter(|c| c.rel_error <= b.rel_error)
                    .min_by_key(|c| c.nfe.total())
                    .map(|c| format!("cheapest CTPG at that accuracy: {} with {} calls", c.setting, c.nfe.total()))
                    .unwrap_or_else(|| "no CTPG row reaches that accuracy".into());
                undominated.push(format!(
                    "seed {seed} h={} (error {:.3e}, {} calls; {cheapest})",
                    b.value,
                    b.rel_error,
                    b.nfe.total()
                ));
            }
        }
    }
    let detail = if undominated.is_empty() {
        format!("all {count} BPTT points dominated by CTPG")
    } else {
        format!("{} of {count} BPTT points not dominated: {}", undominated.len(), undominated.join("; "))
    };
    Check::new("ctpg-dominates-bptt", undominated.is_empty(), detail)
}

fn table(rows: &[ParetoRow], timing: bool) -> Table {
    let mut header = vec![
        "experiment", "estimator", "setting", "seed", "rel_error", "n_f", "n_dfdx", "n_dfdu", "nfe_total", "loss", "aux",
        "status",
    ];
    if timing {
        header.push("wallclock");
    }
    let mut t = Table::new(&header);
    for r in rows {
        let mut row = vec![
            "pareto".to_string(),
            r.kind.name().to_string(),
            r.setting.clone(),
            r.seed.to_string(),
            num(r.rel_error),
            r.nfe.n_f.to_string(),
            r.nfe.n_dfdx.to_string(),
            r.nfe.n_dfdu.to_string(),
            r.nfe.total().to_string(),
            num(r.loss),
            opt_num(r.aux),
            r.status.clone(),
        ];
        if timing {
            row.push(num(r.wallclock));
        }
        t.push(row);
    }
    t
}

const PLOT: &str = r#"fig, ax = plt.subplots(figsize=(6, 4))
for name, g in df.groupby("estimator"):
    g = g[g["status"] == "ok"].groupby("setting", sort=False)[["nfe_total", "rel_error"]].mean()
    g = g.sort_values("nfe_total")
    ax.plot(g["nfe_total"], g["rel_error"], marker="o", label=name)
ax.set_xscale("log")
ax.set_yscale("log")
ax.set_xlabel("oracle calls (f + df/dx + df/du)")
ax.set_ylabel("relative gradient error")
ax.legend()"#;
