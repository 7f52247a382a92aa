//! Spectrum of the reverse-time `(x̃, α, g)` process at probe points.
//!
//! Probes: the LQR closed loop under `u = -x` (a one-parameter gain), an
//! optional `f ≡ 0` probe, and random linear systems under random tanh
//! policies. Each probe passes if the spectrum pairs as `{±λ} ∪ {0}^{n_θ}`
//! within `eigs.tolerance` and, whenever the forward closed loop is strictly
//! stable, the reverse process has an eigenvalue with positive real part.
//!
//! | key | default |
//! |---|---|
//! | `seed` | `0` |
//! | `eigs.lqr` | `true` |
//! | `eigs.zero_probe` | `true` |
//! | `eigs.random_systems` | `10` |
//! | `eigs.random_dim` | `3` |
//! | `eigs.random_controls` | `2` |
//! | `eigs.random_hidden` | `4` |
//! | `eigs.tolerance` | `1e-6` |

use std::path::Path;

use nalgebra::{Complex, DMatrix};
use rand::Rng;

use ctpg::env::{Environment, InitialStateDist, LqrEnv};
use ctpg::grad::{pairing_residual, reverse_jacobian, GradError};
use ctpg::policy::{init_params, Mlp, MlpArch, Policy, ScalarGain};
use ctpg::rng::{stream, Stream};

use crate::config::Config;
use crate::output::{num, Table};
use crate::{BenchError, Check, OutputOptions};

#[derive(Debug, Clone)]
pub struct Probe {
    pub name: String,
    pub eigs: Vec<Complex<f64>>,
    pub n_params: usize,
    pub residual: f64,
    pub forward_stable: bool,
    pub max_real: f64,
    pub passed: bool,
}

#[derive(Debug)]
pub struct EigsReport {
    pub probes: Vec<Probe>,
    pub checks: Vec<Check>,
    pub fingerprint: String,
}

/// Spectrum and verdict for one `(env, policy, θ, x)`, probed with `α = 1`.
pub fn probe(
    name: &str,
    env: &dyn Environment,
    policy: &dyn Policy,
    params: &[f64],
    x: &[f64],
    tol: f64,
) -> Result<Probe, GradError> {
    let d = env.dim_x();
    let n = params.len();
    let jac = reverse_jacobian(env, policy, params, x, &vec![1.0; d])?;
    let eigs: Vec<Complex<f64>> = jac.complex_eigenvalues().iter().copied().collect();
    // The top-left block is minus the forward closed-loop Jacobian.
    let forward: DMatrix<f64> = -jac.view((0, 0), (d, d)).into_owned();
    let forward_stable = forward.complex_eigenvalues().iter().all(|l| l.re < 0.0);
    let residual = pairing_residual(&eigs, n);
    let max_real = eigs.iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max);
    let passed = residual < tol && (!forward_stable || max_real > 0.0);
    Ok(Probe { name: name.to_string(), eigs, n_params: n, residual, forward_stable, max_real, passed })
}

fn uniform_matrix<R: Rng>(rng: &mut R, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| scale * (2.0 * rng.random::<f64>() - 1.0))
}

pub fn run(cfg: &Config, out: Option<&Path>) -> Result<EigsReport, BenchError> {
    let seed: u64 = cfg.get_or("seed", 0)?;
    let lqr: bool = cfg.get_or("eigs.lqr", true)?;
    let zero: bool = cfg.get_or("eigs.zero_probe", true)?;
    let count: usize = cfg.get_or("eigs.random_systems", 10)?;
    let dim: usize = cfg.get_or("eigs.random_dim", 3)?;
    let controls: usize = cfg.get_or("eigs.random_controls", 2)?;
    let hidden: usize = cfg.get_or("eigs.random_hidden", 4)?;
    let tol: f64 = cfg.get_or("eigs.tolerance", 1e-6)?;
    let output = OutputOptions::read(cfg, out)?;
    cfg.finish()?;
    if dim == 0 || controls == 0 || hidden == 0 {
        return Err(cfg.value_error("eigs", "random system sizes must be positive").into());
    }

    let run_err = |e: GradError| BenchError::Run(e.to_string());
    let mut probes = Vec::new();
    if lqr {
        let env = LqrEnv::standard();
        probes.push(probe("lqr-u=-x", &env, &ScalarGain::new(2), &[1.0], &[1.0, 1.0], tol).map_err(run_err)?);
    }
    if zero {
        let z = DMatrix::zeros(2, 2);
        let i = DMatrix::identity(2, 2);
        let env = LqrEnv::new(z.clone(), z, i.clone(), i, 1.0, InitialStateDist::Fixed(vec![0.0, 0.0]))
            .map_err(|e| BenchError::Run(e.to_string()))?;
        probes.push(probe("zero-field", &env, &ScalarGain::new(2), &[1.0], &[0.3, -0.2], tol).map_err(run_err)?);
    }

    let mut rng = stream(seed, Stream::InitialStates);
    let arch = MlpArch::new(vec![dim, hidden, controls], 1.0).map_err(|e| BenchError::Run(e.to_string()))?;
    let policy = Mlp::new(arch.clone());
    for k in 0..count {
        let a = uniform_matrix(&mut rng, dim, dim, 1.0);
        let b = uniform_matrix(&mut rng, dim, controls, 1.0);
        let x = uniform_matrix(&mut rng, dim, 1, 1.0);
        let env = LqrEnv::new(
            a,
            b,
            DMatrix::identity(dim, dim),
            DMatrix::identity(controls, controls),
            1.0,
            InitialStateDist::Fixed(vec![0.0; dim]),
        )
        .map_err(|e| BenchError::Run(e.to_string()))?;
        let params = init_params(&arch, seed.wrapping_mul(1000).wrapping_add(k as u64));
        probes.push(probe(&format!("random-{k}"), &env, &policy, &params, x.as_slice(), tol).map_err(run_err)?);
    }

    let failed: Vec<&str> = probes.iter().filter(|p| !p.passed).map(|p| p.name.as_str()).collect();
    let worst = probes.iter().map(|p| p.residual).fold(0.0, f64::max);
    let stable = probes.iter().filter(|p| p.forward_stable).count();
    let checks = vec![Check::new(
        "reverse-spectrum-pairs",
        failed.is_empty(),
        if failed.is_empty() {
            format!("{} probes, worst pairing residual {worst:.2e}, {stable} with stable forward loop", probes.len())
        } else {
            format!("failing probes: {}", failed.join(", "))
        },
    )];
    let fingerprint = cfg.fingerprint();
    output.write(&table(&probes), &fingerprint, PLOT)?;
    Ok(EigsReport { probes, checks, fingerprint })
}

fn table(probes: &[Probe]) -> Table {
    let mut t = Table::new(&[
        "probe", "index", "re", "im", "n_params", "pairing_residual", "forward_stable", "max_real", "pass",
    ]);
    for p in probes {
        let mut eigs = p.eigs.clone();
        eigs.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
        for (i, l) in eigs.iter().enumerate() {
            t.push(vec![
                p.name.clone(),
                i.to_string(),
                num(l.re),
                num(l.im),
                p.n_params.to_string(),
                num(p.residual),
                p.forward_stable.to_string(),
                num(p.max_real),
                p.passed.to_string(),
            ]);
        }
    }
    t
}

const PLOT: &str = r#"probes = list(df["probe"].unique())
fig, axes = plt.subplots(1, len(probes), figsize=(2.5 * len(probes), 2.8), squeeze=False)
for ax, name in zip(axes[0], probes):
    g = df[df["probe"] == name]
    ax.axvline(0, color="0.7", lw=0.8)
    ax.axhline(0, color="0.7", lw=0.8)
    ax.scatter(g["re"], g["im"], s=12)
    ax.set_title(name, fontsize=8)
    ax.set_xlabel("Re")
axes[0][0].set_ylabel("Im")"#;
