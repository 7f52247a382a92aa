//! Building environments, policies and estimators from config keys.
//!
//! | key | meaning | default |
//! |---|---|---|
//! | `env.name` | `lqr`, `diffdrive` or `electric` | per command |
//! | `env.horizon` | horizon `T` | the environment's own |
//! | `env.fd_eps` | wrap the dynamics in the finite-difference adapter | none |
//! | `policy.kind` | `mlp` or `lqr_optimal` (linear network holding the Riccati gain) | per command |
//! | `policy.hidden` | hidden layer widths; empty means a linear network | per command |
//! | `policy.last_layer_scale` | initial scale of the output layer | 0.1 |

use ctpg::env::{DiffDriveEnv, ElectricEnv, ElectricParams, Environment, FiniteDifferenceEnv, LqrEnv};
use ctpg::policy::{init_params, linear_policy, FlatParams, Mlp, MlpArch};

use crate::config::{Config, ConfigError};

pub struct BuiltEnv {
    pub env: Box<dyn Environment>,
    /// The unwrapped LQR problem, when `env.name = lqr`.
    pub lqr: Option<LqrEnv>,
}

pub fn build_env(cfg: &Config, default_name: &str) -> Result<BuiltEnv, ConfigError> {
    let name = cfg.str_or("env.name", default_name);
    let horizon: Option<f64> = cfg.get_opt("env.horizon")?;
    let fd_eps: Option<f64> = cfg.get_opt("env.fd_eps")?;
    let invalid = |e: ctpg::env::EnvError| cfg.value_error("env", e.to_string());
    if let Some(t) = horizon {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(cfg.value_error("env.horizon", format!("must be non-negative, got {t}")));
        }
    }

    let (env, lqr): (Box<dyn Environment>, Option<LqrEnv>) = match name.as_str() {
        "lqr" => {
            let mut e = LqrEnv::standard();
            if let Some(t) = horizon {
                e = e.with_horizon(t);
            }
            (Box::new(e.clone()), Some(e))
        }
        "diffdrive" => {
            let mut e = DiffDriveEnv::default();
            if let Some(t) = horizon {
                e = e.with_horizon(t);
            }
            (Box::new(e), None)
        }
        "electric" => {
            let mut p = ElectricParams::default();
            if let Some(t) = horizon {
                p.horizon = t;
            }
            (Box::new(ElectricEnv::new(p).map_err(invalid)?), None)
        }
        other => return Err(cfg.value_error("env.name", format!("unknown environment `{other}`"))),
    };
    let env = match fd_eps {
        Some(eps) => Box::new(FiniteDifferenceEnv::new(env, eps).map_err(invalid)?) as Box<dyn Environment>,
        None => env,
    };
    Ok(BuiltEnv { env, lqr })
}

pub enum PolicySpec {
    /// Randomly initialized MLP; parameters depend on the seed.
    Mlp(MlpArch),
    /// Fixed linear policy `u = -K x`.
    Fixed(Mlp, FlatParams),
}

impl PolicySpec {
    pub fn policy(&self) -> Mlp {
        match self {
            PolicySpec::Mlp(arch) => Mlp::new(arch.clone()),
            PolicySpec::Fixed(p, _) => p.clone(),
        }
    }

    pub fn params(&self, seed: u64) -> FlatParams {
        match self {
            PolicySpec::Mlp(arch) => init_params(arch, seed),
            PolicySpec::Fixed(_, theta) => theta.clone(),
        }
    }

    pub fn arch(&self) -> MlpArch {
        match self {
            PolicySpec::Mlp(arch) => arch.clone(),
            PolicySpec::Fixed(p, _) => p.arch().clone(),
        }
    }
}

pub fn build_policy(
    cfg: &Config,
    built: &BuiltEnv,
    default_kind: &str,
    default_hidden: &[usize],
) -> Result<PolicySpec, ConfigError> {
    let kind = cfg.str_or("policy.kind", default_kind);
    let hidden: Vec<usize> = cfg.list_or("policy.hidden", default_hidden)?;
    let scale: f64 = cfg.get_or("policy.last_layer_scale", 0.1)?;
    match kind.as_str() {
        "mlp" => {
            let mut sizes = vec![built.env.feature_dim()];
            sizes.extend(hidden);
            sizes.push(built.env.dim_u());
            let arch = MlpArch::new(sizes, scale).map_err(|e| cfg.value_error("policy.hidden", e.to_string()))?;
            Ok(PolicySpec::Mlp(arch))
        }
        "lqr_optimal" => {
            let lqr = built
                .lqr
                .as_ref()
                .ok_or_else(|| cfg.value_error("policy.kind", "lqr_optimal requires env.name = lqr"))?;
            let gain = lqr.optimal_gain().map_err(|e| cfg.value_error("policy.kind", e.to_string()))?;
            let (p, theta) = linear_policy(&gain);
            Ok(PolicySpec::Fixed(p, theta))
        }
        other => Err(cfg.value_error("policy.kind", format!("unknown policy kind `{other}`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builds_each_environment() {
        for (name, d) in [("lqr", 2), ("diffdrive", 5), ("electric", 5)] {
            let cfg = Config::parse(&format!("env.name = {name}\nenv.horizon = 1.5\n"), "t").unwrap();
            let b = build_env(&cfg, "lqr").unwrap();
            assert_eq!(b.env.dim_x(), d);
            assert_eq!(b.env.horizon(), 1.5);
            cfg.finish().unwrap();
        }
    }

    #[test]
    fn fd_wrapping_and_errors() {
        let cfg = Config::parse("env.fd_eps = 1e-6\n", "t").unwrap();
        let b = build_env(&cfg, "lqr").unwrap();
        assert!(b.env.describe().starts_with("fd("));
        assert!(b.lqr.is_some());
        let bad = Config::parse("env.name = cartpole\n", "t").unwrap();
        assert!(build_env(&bad, "lqr").is_err());
    }

    #[test]
    fn policy_shapes_follow_the_environment() {
        let cfg = Config::parse("env.name = diffdrive\npolicy.hidden = 8, 8\n", "t").unwrap();
        let b = build_env(&cfg, "lqr").unwrap();
        let spec = build_policy(&cfg, &b, "mlp", &[]).unwrap();
        assert_eq!(spec.arch().layer_sizes, vec![7, 8, 8, 2]);
        assert_eq!(spec.params(1), spec.params(1));
        assert_ne!(spec.params(1), spec.params(2));

        let opt = Config::parse("policy.kind = lqr_optimal\n", "t").unwrap();
        let b = build_env(&opt, "lqr").unwrap();
        let spec = build_policy(&opt, &b, "mlp", &[]).unwrap();
        assert_eq!(&*spec.params(0), &[-1.0, 0.0, 0.0, -1.0, 0.0, 0.0][..]);

        let wrong = Config::parse("env.name = diffdrive\npolicy.kind = lqr_optimal\n", "t").unwrap();
        let b = build_env(&wrong, "lqr").unwrap();
        assert!(build_policy(&wrong, &b, "mlp", &[]).is_err());
    }
}
