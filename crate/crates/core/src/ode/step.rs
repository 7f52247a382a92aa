use super::{all_finite, OdeError};

/// `x + h f(t, x)`. One right-hand-side evaluation.
pub fn step_euler<F>(mut rhs: F, x: &[f64], t: f64, h: f64) -> Result<Vec<f64>, OdeError>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    check_step(h)?;
    let mut k = vec![0.0; x.len()];
    let mut out = vec![0.0; x.len()];
    euler_into(&mut rhs, t, x, h, &mut k, &mut out);
    if !all_finite(&out) {
        return Err(OdeError::Divergence { t });
    }
    Ok(out)
}

/// Classical four-stage Runge–Kutta step. Four right-hand-side evaluations.
pub fn step_rk4<F>(mut rhs: F, x: &[f64], t: f64, h: f64) -> Result<Vec<f64>, OdeError>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    check_step(h)?;
    let mut ws = Rk4Work::new(x.len());
    let mut out = vec![0.0; x.len()];
    rk4_into(&mut rhs, t, x, h, t + h, &mut ws, &mut out);
    if !all_finite(&out) {
        return Err(OdeError::Divergence { t });
    }
    Ok(out)
}

/// Outcome of [`step_adaptive`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveStep {
    pub x_next: Vec<f64>,
    /// Signed size of the accepted step.
    pub h_used: f64,
    /// Proposed size of the following step.
    pub h_next: f64,
    /// Scaled error of the accepted step, always `<= 1`.
    pub err_norm: f64,
    /// Right-hand-side evaluations spent, rejected trials included.
    pub rhs_evals: u64,
    pub rejected: usize,
}

/// One accepted Dormand–Prince 5(4) step starting from `h_try`, retrying
/// with a shrunk step after every rejection.
pub fn step_adaptive<F>(
    mut rhs: F,
    x: &[f64],
    t: f64,
    h_try: f64,
    abstol: f64,
    reltol: f64,
    min_step: f64,
) -> Result<AdaptiveStep, OdeError>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    check_step(h_try)?;
    if !(abstol > 0.0 && reltol > 0.0) {
        return Err(OdeError::Invalid("tolerances must be positive".into()));
    }
    let n = x.len();
    let mut ws = DopriWork::new(n);
    let mut out = vec![0.0; n];
    rhs(t, x, &mut ws.k[0]);
    let mut evals = 1;
    let mut rejected = 0;
    let mut h = h_try;
    loop {
        dopri_trial(&mut rhs, t, x, h, t + h, &mut ws, &mut out);
        evals += 6;
        let err_norm = error_norm(&ws.err, x, &out, abstol, reltol, None);
        if err_norm <= 1.0 {
            return Ok(AdaptiveStep {
                x_next: out,
                h_used: h,
                h_next: h * step_factor(err_norm),
                err_norm,
                rhs_evals: evals,
                rejected,
            });
        }
        rejected += 1;
        h *= step_factor(err_norm).min(1.0);
        if h.abs() < min_step {
            return Err(OdeError::StepSizeUnderflow { t, err_norm });
        }
    }
}

fn check_step(h: f64) -> Result<(), OdeError> {
    if h == 0.0 || !h.is_finite() {
        return Err(OdeError::Invalid(format!("step size must be finite and nonzero, got {h}")));
    }
    Ok(())
}

/// `h_next / h = clamp(0.9 err^(-1/5), 0.2, 5)`; non-finite errors shrink maximally.
pub(crate) fn step_factor(err_norm: f64) -> f64 {
    if !err_norm.is_finite() {
        return 0.2;
    }
    if err_norm == 0.0 {
        return 5.0;
    }
    (0.9 * err_norm.powf(-0.2)).clamp(0.2, 5.0)
}

/// Weighted RMS of `err_i / (abstol + reltol * max(|x_i|, |x_new_i|))`.
/// With weights `w` the norm is `sqrt(sum (w_i s_i)^2 / sum w_i^2)`.
pub(crate) fn error_norm(
    err: &[f64],
    x: &[f64],
    x_new: &[f64],
    abstol: f64,
    reltol: f64,
    weights: Option<&[f64]>,
) -> f64 {
    let mut acc = 0.0;
    let mut wsum = 0.0;
    for i in 0..err.len() {
        let sc = abstol + reltol * x[i].abs().max(x_new[i].abs());
        let w = weights.map_or(1.0, |w| w[i]);
        let s = w * err[i] / sc;
        acc += s * s;
        wsum += w * w;
    }
    if wsum == 0.0 {
        return 0.0;
    }
    let norm = (acc / wsum).sqrt();
    if norm.is_nan() {
        f64::INFINITY
    } else {
        norm
    }
}

pub(crate) fn euler_into<F>(rhs: &mut F, t: f64, x: &[f64], h: f64, k: &mut [f64], out: &mut [f64])
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    rhs(t, x, k);
    for i in 0..x.len() {
        out[i] = x[i] + h * k[i];
    }
}

pub(crate) struct Rk4Work {
    pub k: [Vec<f64>; 4],
    tmp: Vec<f64>,
}

impl Rk4Work {
    pub fn new(n: usize) -> Self {
        Self {
            k: std::array::from_fn(|_| vec![0.0; n]),
            tmp: vec![0.0; n],
        }
    }
}

/// RK4 step; `t_end` is passed separately so the last stage can sit exactly
/// on a truncated endpoint.
pub(crate) fn rk4_into<F>(
    rhs: &mut F,
    t: f64,
    x: &[f64],
    h: f64,
    t_end: f64,
    ws: &mut Rk4Work,
    out: &mut [f64],
) where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = x.len();
    let t_mid = t + 0.5 * h;
    let [k1, k2, k3, k4] = &mut ws.k;
    let tmp = &mut ws.tmp;
    rhs(t, x, k1);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k1[i];
    }
    rhs(t_mid, tmp, k2);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k2[i];
    }
    rhs(t_mid, tmp, k3);
    for i in 0..n {
        tmp[i] = x[i] + h * k3[i];
    }
    rhs(t_end, tmp, k4);
    for i in 0..n {
        out[i] = x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

// Dormand–Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A2: [f64; 1] = [1.0 / 5.0];
const A3: [f64; 2] = [3.0 / 40.0, 9.0 / 40.0];
const A4: [f64; 3] = [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0];
const A5: [f64; 4] = [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0];
const A6: [f64; 5] = [
    9017.0 / 3168.0,
    -355.0 / 33.0,
    46732.0 / 5247.0,
    49.0 / 176.0,
    -5103.0 / 18656.0,
];
// Fifth-order weights; also the coefficients of the FSAL stage.
const B: [f64; 6] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0];
// Fifth- minus fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

pub(crate) struct DopriWork {
    /// `k[0]` must hold `f(t, x)` before a trial; after an accepted trial
    /// `k[6]` holds `f(t + h, x_new)`.
    pub k: [Vec<f64>; 7],
    pub err: Vec<f64>,
    tmp: Vec<f64>,
}

impl DopriWork {
    pub fn new(n: usize) -> Self {
        Self {
            k: std::array::from_fn(|_| vec![0.0; n]),
            err: vec![0.0; n],
            tmp: vec![0.0; n],
        }
    }
}

fn stage<F>(rhs: &mut F, t: f64, x: &[f64], h: f64, coeffs: &[f64], ws: &mut DopriWork, into: usize)
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    for i in 0..x.len() {
        let mut acc = 0.0;
        for (j, a) in coeffs.iter().enumerate() {
            acc += a * ws.k[j][i];
        }
        ws.tmp[i] = x[i] + h * acc;
    }
    rhs(t, &ws.tmp, &mut ws.k[into]);
}

/// Six new stages (k2..k7), the fifth-order solution in `out` and the
/// embedded error estimate in `ws.err`.
pub(crate) fn dopri_trial<F>(
    rhs: &mut F,
    t: f64,
    x: &[f64],
    h: f64,
    t_end: f64,
    ws: &mut DopriWork,
    out: &mut [f64],
) where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    stage(rhs, t + C[1] * h, x, h, &A2, ws, 1);
    stage(rhs, t + C[2] * h, x, h, &A3, ws, 2);
    stage(rhs, t + C[3] * h, x, h, &A4, ws, 3);
    stage(rhs, t + C[4] * h, x, h, &A5, ws, 4);
    stage(rhs, t_end, x, h, &A6, ws, 5);
    for i in 0..x.len() {
        let mut acc = 0.0;
        for (j, b) in B.iter().enumerate() {
            acc += b * ws.k[j][i];
        }
        out[i] = x[i] + h * acc;
    }
    rhs(t_end, out, &mut ws.k[6]);
    for i in 0..x.len() {
        let mut acc = 0.0;
        for (j, e) in E.iter().enumerate() {
            acc += e * ws.k[j][i];
        }
        ws.err[i] = h * acc;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay(_t: f64, x: &[f64], dx: &mut [f64]) {
        for (d, v) in dx.iter_mut().zip(x) {
            *d = -v;
        }
    }

    #[test]
    fn euler_single_step() {
        let x = step_euler(decay, &[1.0], 0.0, 0.1).unwrap();
        assert_eq!(x, vec![0.9]);
    }

    #[test]
    fn zero_field_is_fixed_point() {
        let zero = |_t: f64, _x: &[f64], dx: &mut [f64]| dx.fill(0.0);
        assert_eq!(step_euler(zero, &[3.0, 4.0], 0.0, 0.7).unwrap(), vec![3.0, 4.0]);
        assert_eq!(step_rk4(zero, &[3.0, 4.0], 0.0, -0.3).unwrap(), vec![3.0, 4.0]);
        let s = step_adaptive(zero, &[3.0, 4.0], 0.0, 0.5, 1e-6, 1e-6, 1e-12).unwrap();
        assert_eq!(s.err_norm, 0.0);
        assert_eq!(s.rejected, 0);
        assert_eq!(s.h_used, 0.5);
        assert_eq!(s.x_next, vec![3.0, 4.0]);
    }

    #[test]
    fn euler_repeated_matches_closed_form() {
        let mut x = vec![1.0];
        for i in 0..100 {
            x = step_euler(decay, &x, i as f64 * 0.01, 0.01).unwrap();
        }
        assert!((x[0] - 0.99f64.powi(100)).abs() < 1e-14);
        assert!((x[0] - 0.3660).abs() < 1e-4);
    }

    #[test]
    fn rk4_half_step_hand_expanded() {
        // k1 = -1, k2 = -0.75, k3 = -0.8125, k4 = -0.59375
        // x1 = 1 + 0.5/6 * (k1 + 2k2 + 2k3 + k4) = 0.6067708333...
        let x = step_rk4(decay, &[1.0], 0.0, 0.5).unwrap();
        assert!((x[0] - 0.606_770_833_333_333_3).abs() < 1e-15);
    }

    #[test]
    fn rk4_long_horizon_matches_stability_polynomial() {
        // One RK4 step on x' = -x multiplies by R(-h) = 1 - h + h^2/2 - h^3/6 + h^4/24,
        // which is 0.375 at h = 1 (e^-1 = 0.3679), so 25 steps overshoot e^-25 by ~61%.
        let mut x = vec![1.0, 1.0];
        for i in 0..25 {
            x = step_rk4(decay, &x, i as f64, 1.0).unwrap();
        }
        let expected = 0.375f64.powi(25);
        let exact = (-25.0f64).exp();
        for v in x {
            assert!(((v - expected) / expected).abs() < 1e-12);
            assert!(((v - exact) / exact - 0.6152).abs() < 1e-3);
        }
    }

    #[test]
    fn adaptive_accepted_steps_meet_tolerance() {
        let mut x = vec![1.0];
        let mut t: f64 = 0.0;
        let mut h: f64 = 0.1;
        while t < 5.0 {
            let s = step_adaptive(decay, &x, t, h.min(5.0 - t), 1e-6, 1e-6, 1e-12).unwrap();
            assert!(s.err_norm <= 1.0);
            t += s.h_used;
            h = s.h_next;
            x = s.x_next;
        }
        assert!((x[0] - (-t).exp()).abs() < 1e-5);
    }

    #[test]
    fn adaptive_rejects_then_accepts_oversized_step() {
        let s = step_adaptive(decay, &[1.0], 0.0, 20.0, 1e-8, 1e-8, 1e-12).unwrap();
        assert!(s.rejected > 0);
        assert!(s.h_used < 20.0);
        assert_eq!(s.rhs_evals, 1 + 6 * (s.rejected as u64 + 1));
    }

    #[test]
    fn adaptive_min_step_failure() {
        let err = step_adaptive(decay, &[1.0], 0.0, 20.0, 1e-12, 1e-12, 1.0).unwrap_err();
        assert!(matches!(err, OdeError::StepSizeUnderflow { .. }));
    }

    #[test]
    fn euler_divergence_reported() {
        let blow = |_t: f64, _x: &[f64], dx: &mut [f64]| dx[0] = f64::INFINITY;
        assert_eq!(step_euler(blow, &[1.0], 2.5, 0.1), Err(OdeError::Divergence { t: 2.5 }));
    }

    #[test]
    fn zero_step_rejected() {
        assert!(matches!(step_euler(decay, &[1.0], 0.0, 0.0), Err(OdeError::Invalid(_))));
    }

    #[test]
    fn controller_clamps() {
        assert_eq!(step_factor(0.0), 5.0);
        assert_eq!(step_factor(1e30), 0.2);
        assert_eq!(step_factor(f64::NAN), 0.2);
        assert!((step_factor(1.0) - 0.9).abs() < 1e-15);
    }

    #[test]
    fn weighted_norm_reduces_to_rms() {
        let e = [1e-6, 2e-6];
        let x = [0.0, 0.0];
        let plain = error_norm(&e, &x, &x, 1e-6, 1e-6, None);
        let ones = error_norm(&e, &x, &x, 1e-6, 1e-6, Some(&[1.0, 1.0]));
        assert_eq!(plain, ones);
        assert!((plain - (2.5f64).sqrt()).abs() < 1e-12);
    }
}
