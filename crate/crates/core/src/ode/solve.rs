use super::dense::DenseTrajectory;
use super::step::{dopri_trial, error_norm, euler_into, rk4_into, step_factor, DopriWork, Rk4Work};
use super::{all_finite, Method, OdeError, SolveStats, SolverConfig};

/// Integrates `dx/dt = rhs(t, x)` from `t0` to `t1` and keeps every accepted
/// knot together with the derivative there.
///
/// `t1 < t0` runs the solve backward in time. The final step is truncated so
/// the last knot sits exactly on `t1`.
pub fn solve_ivp<F>(
    rhs: F,
    x0: &[f64],
    t0: f64,
    t1: f64,
    config: &SolverConfig,
) -> Result<DenseTrajectory, OdeError>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    solve_dense(rhs, x0, t0, t1, config, None)
}

/// [`solve_ivp`] with per-component weights in the adaptive error norm.
/// Ignored by the fixed-step methods.
pub fn solve_ivp_weighted<F>(
    rhs: F,
    x0: &[f64],
    t0: f64,
    t1: f64,
    config: &SolverConfig,
    weights: &[f64],
) -> Result<DenseTrajectory, OdeError>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    if weights.len() != x0.len() {
        return Err(OdeError::Invalid(format!(
            "{} error weights for a {}-dimensional state",
            weights.len(),
            x0.len()
        )));
    }
    solve_dense(rhs, x0, t0, t1, config, Some(weights))
}

/// End point of a solve that stores nothing along the way.
#[derive(Debug, Clone, PartialEq)]
pub struct FinalState {
    pub x: Vec<f64>,
    pub stats: SolveStats,
}

/// Like [`solve_ivp`] but keeps only the final state (constant memory).
pub fn integrate_final<F>(
    rhs: F,
    x0: &[f64],
    t0: f64,
    t1: f64,
    config: &SolverConfig,
    weights: Option<&[f64]>,
) -> Result<FinalState, OdeError>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let (x, stats) = drive(rhs, x0, t0, t1, config, weights, |_, _, _| {})?;
    Ok(FinalState { x, stats })
}

fn solve_dense<F>(
    rhs: F,
    x0: &[f64],
    t0: f64,
    t1: f64,
    config: &SolverConfig,
    weights: Option<&[f64]>,
) -> Result<DenseTrajectory, OdeError>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let mut times = Vec::new();
    let mut states = Vec::new();
    let mut derivs = Vec::new();
    let (_, stats) = drive(rhs, x0, t0, t1, config, weights, |t, x, dx| {
        times.push(t);
        states.extend_from_slice(x);
        derivs.extend_from_slice(dx);
    })?;
    DenseTrajectory::from_parts(x0.len(), times, states, derivs, stats)
}

/// Number of fixed steps of size `h` covering `span`, the last one possibly short.
pub(crate) fn fixed_step_count(span: f64, h: f64) -> usize {
    let r = span / h;
    let n = if (r - r.round()).abs() <= 1e-9 * r.max(1.0) { r.round() } else { r.ceil() };
    (n as usize).max(1)
}

fn drive<F, K>(
    mut rhs: F,
    x0: &[f64],
    t0: f64,
    t1: f64,
    config: &SolverConfig,
    weights: Option<&[f64]>,
    mut on_knot: K,
) -> Result<(Vec<f64>, SolveStats), OdeError>
where
    F: FnMut(f64, &[f64], &mut [f64]),
    K: FnMut(f64, &[f64], &[f64]),
{
    config.validate()?;
    if t0 == t1 || !t0.is_finite() || !t1.is_finite() {
        return Err(OdeError::Invalid(format!("degenerate time span [{t0}, {t1}]")));
    }
    if !all_finite(x0) {
        return Err(OdeError::Divergence { t: t0 });
    }
    match config.method {
        Method::Euler | Method::Rk4 => drive_fixed(&mut rhs, x0, t0, t1, config, &mut on_knot),
        Method::Adaptive => drive_adaptive(&mut rhs, x0, t0, t1, config, weights, &mut on_knot),
    }
}

fn drive_fixed<F, K>(
    rhs: &mut F,
    x0: &[f64],
    t0: f64,
    t1: f64,
    config: &SolverConfig,
    on_knot: &mut K,
) -> Result<(Vec<f64>, SolveStats), OdeError>
where
    F: FnMut(f64, &[f64], &mut [f64]),
    K: FnMut(f64, &[f64], &[f64]),
{
    let span = t1 - t0;
    let dir = span.signum();
    let h = config.step_size;
    let steps = fixed_step_count(span.abs(), h);
    if steps > config.max_steps {
        return Err(OdeError::MaxStepsExceeded { max_steps: config.max_steps, t: t0 });
    }
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut x_new = vec![0.0; n];
    let mut euler_k = vec![0.0; n];
    let mut rk4 = Rk4Work::new(n);
    let mut t = t0;
    for i in 0..steps {
        // Knot times are computed from t0, not accumulated, so they do not drift.
        let t_next = if i + 1 == steps { t1 } else { t0 + dir * (i + 1) as f64 * h };
        let hi = t_next - t;
        match config.method {
            Method::Euler => {
                euler_into(rhs, t, &x, hi, &mut euler_k, &mut x_new);
                on_knot(t, &x, &euler_k);
            }
            _ => {
                rk4_into(rhs, t, &x, hi, t_next, &mut rk4, &mut x_new);
                on_knot(t, &x, &rk4.k[0]);
            }
        }
        if !all_finite(&x_new) {
            return Err(OdeError::Divergence { t });
        }
        std::mem::swap(&mut x, &mut x_new);
        t = t_next;
    }
    // The end knot reuses the last slope (Euler) or last stage (RK4, the
    // endpoint derivative of its natural continuous extension), so an
    // n-step solve costs exactly n (resp. 4n) evaluations.
    let (end_slope, per_step) = match config.method {
        Method::Euler => (&euler_k, 1),
        _ => (&rk4.k[3], 4),
    };
    on_knot(t1, &x, end_slope);
    let stats = SolveStats { rhs_evals: per_step * steps as u64, accepted: steps, rejected: 0 };
    Ok((x, stats))
}

fn weighted_rms(v: &[f64], scale: &[f64], weights: Option<&[f64]>) -> f64 {
    let mut acc = 0.0;
    let mut wsum = 0.0;
    for i in 0..v.len() {
        let w = weights.map_or(1.0, |w| w[i]);
        let s = w * v[i] / scale[i];
        acc += s * s;
        wsum += w * w;
    }
    if wsum == 0.0 {
        0.0
    } else {
        (acc / wsum).sqrt()
    }
}

/// Starting step for a fifth-order method (Hairer, Nørsett & Wanner, II.4).
/// Costs one right-hand-side evaluation.
fn initial_step<F>(
    rhs: &mut F,
    t0: f64,
    x0: &[f64],
    f0: &[f64],
    span: f64,
    config: &SolverConfig,
    weights: Option<&[f64]>,
) -> f64
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let dir = span.signum();
    let scale: Vec<f64> = x0.iter().map(|v| config.abstol + config.reltol * v.abs()).collect();
    let d0 = weighted_rms(x0, &scale, weights);
    let d1 = weighted_rms(f0, &scale, weights);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 }.min(span.abs());
    let x1: Vec<f64> = x0.iter().zip(f0).map(|(x, f)| x + dir * h0 * f).collect();
    let mut f1 = vec![0.0; x0.len()];
    rhs(t0 + dir * h0, &x1, &mut f1);
    if !all_finite(&f1) {
        return dir * h0;
    }
    let df: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = weighted_rms(&df, &scale, weights) / h0;
    let dmax = d1.max(d2);
    let h1 = if dmax <= 1e-15 { (h0 * 1e-3).max(1e-6) } else { (0.01 / dmax).powf(0.2) };
    dir * (100.0 * h0).min(h1).min(span.abs())
}

fn drive_adaptive<F, K>(
    rhs: &mut F,
    x0: &[f64],
    t0: f64,
    t1: f64,
    config: &SolverConfig,
    weights: Option<&[f64]>,
    on_knot: &mut K,
) -> Result<(Vec<f64>, SolveStats), OdeError>
where
    F: FnMut(f64, &[f64], &mut [f64]),
    K: FnMut(f64, &[f64], &[f64]),
{
    let span = t1 - t0;
    let dir = span.signum();
    let min_step = config.min_step.unwrap_or(1e-10 * span.abs());
    let n = x0.len();
    let mut ws = DopriWork::new(n);
    let mut stats = SolveStats::default();

    rhs(t0, x0, &mut ws.k[0]);
    stats.rhs_evals += 1;
    if !all_finite(&ws.k[0]) {
        return Err(OdeError::Divergence { t: t0 });
    }
    let mut h = match config.initial_step {
        Some(h0) => dir * h0.abs().min(span.abs()),
        None => {
            stats.rhs_evals += 1;
            let f0 = ws.k[0].clone();
            initial_step(rhs, t0, x0, &f0, span, config, weights)
        }
    };
    on_knot(t0, x0, &ws.k[0]);

    let mut x = x0.to_vec();
    let mut x_new = vec![0.0; n];
    let mut t = t0;
    let mut attempts = 0usize;
    loop {
        if attempts >= config.max_steps {
            return Err(OdeError::MaxStepsExceeded { max_steps: config.max_steps, t });
        }
        attempts += 1;
        let remaining = t1 - t;
        let last = (h - remaining) * dir >= -1e-12 * span.abs();
        let t_new = if last {
            h = remaining;
            t1
        } else {
            t + h
        };
        dopri_trial(rhs, t, &x, h, t_new, &mut ws, &mut x_new);
        stats.rhs_evals += 6;
        let err = error_norm(&ws.err, &x, &x_new, config.abstol, config.reltol, weights);
        if err <= 1.0 && all_finite(&x_new) && all_finite(&ws.k[6]) {
            stats.accepted += 1;
            t = t_new;
            std::mem::swap(&mut x, &mut x_new);
            ws.k.swap(0, 6);
            on_knot(t, &x, &ws.k[0]);
            if last {
                return Ok((x, stats));
            }
            h *= step_factor(err);
        } else {
            stats.rejected += 1;
            h *= step_factor(err).min(1.0);
            if h.abs() < min_step {
                return Err(OdeError::StepSizeUnderflow { t, err_norm: err });
            }
        }
    }
}
