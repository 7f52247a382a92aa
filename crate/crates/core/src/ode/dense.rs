use std::ops::Range;

use super::{OdeError, SolveStats};

/// Knots of a solve (times, states, derivatives) with cubic Hermite
/// interpolation in between.
///
/// Knot times are strictly increasing for forward solves and strictly
/// decreasing for backward ones. Evaluating exactly at a knot time returns
/// the stored state bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTrajectory {
    dim: usize,
    times: Vec<f64>,
    states: Vec<f64>,
    derivs: Vec<f64>,
    stats: SolveStats,
}

impl DenseTrajectory {
    /// Builds a trajectory from per-knot states and derivatives.
    pub fn new(times: Vec<f64>, states: Vec<Vec<f64>>, derivs: Vec<Vec<f64>>) -> Result<Self, OdeError> {
        let dim = states.first().map_or(0, Vec::len);
        if states.iter().chain(&derivs).any(|v| v.len() != dim) {
            return Err(OdeError::Invalid("knot vectors have inconsistent dimensions".into()));
        }
        Self::from_parts(dim, times, states.concat(), derivs.concat(), SolveStats::default())
    }

    pub(crate) fn from_parts(
        dim: usize,
        times: Vec<f64>,
        states: Vec<f64>,
        derivs: Vec<f64>,
        stats: SolveStats,
    ) -> Result<Self, OdeError> {
        let n = times.len();
        if n < 2 {
            return Err(OdeError::Invalid("a trajectory needs at least two knots".into()));
        }
        if states.len() != n * dim || derivs.len() != n * dim {
            return Err(OdeError::Invalid("knot arrays do not match the number of knot times".into()));
        }
        let increasing = times[1] > times[0];
        let monotone = times
            .windows(2)
            .all(|w| if increasing { w[1] > w[0] } else { w[1] < w[0] });
        if !monotone {
            return Err(OdeError::Invalid("knot times must be strictly monotone".into()));
        }
        Ok(Self { dim, times, states, derivs, stats })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of knots.
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn knot_state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn knot_deriv(&self, k: usize) -> &[f64] {
        &self.derivs[k * self.dim..(k + 1) * self.dim]
    }

    pub fn t_start(&self) -> f64 {
        self.times[0]
    }

    pub fn t_end(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    pub fn final_state(&self) -> &[f64] {
        self.knot_state(self.len() - 1)
    }

    pub fn stats(&self) -> SolveStats {
        self.stats
    }

    /// Keeps only the state coordinates in `range`.
    pub fn project(&self, range: Range<usize>) -> DenseTrajectory {
        assert!(range.end <= self.dim, "projection out of bounds");
        let pick = |flat: &[f64]| -> Vec<f64> {
            flat.chunks(self.dim).flat_map(|c| c[range.clone()].iter().copied()).collect()
        };
        DenseTrajectory {
            dim: range.len(),
            times: self.times.clone(),
            states: pick(&self.states),
            derivs: pick(&self.derivs),
            stats: self.stats,
        }
    }

    pub fn eval(&self, t: f64) -> Result<Vec<f64>, OdeError> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(t, &mut out)?;
        Ok(out)
    }

    /// Cubic Hermite interpolation on the knot interval bracketing `t`.
    pub fn eval_into(&self, t: f64, out: &mut [f64]) -> Result<(), OdeError> {
        let n = self.times.len();
        let (lo, hi) = if self.times[0] <= self.times[n - 1] {
            (self.times[0], self.times[n - 1])
        } else {
            (self.times[n - 1], self.times[0])
        };
        // Stage times of a solve that ends exactly on the boundary can miss it
        // by an ulp or two.
        let slack = 1e-12 * (hi - lo);
        if !(t >= lo - slack && t <= hi + slack) {
            return Err(OdeError::OutOfRange { t, lo, hi });
        }
        let t = t.clamp(lo, hi);

        let increasing = self.times[1] > self.times[0];
        let idx = if increasing {
            self.times.partition_point(|&s| s <= t)
        } else {
            self.times.partition_point(|&s| s >= t)
        };
        // idx is the first knot strictly past t.
        let k = idx.saturating_sub(1).min(n - 2);
        if self.times[k] == t {
            out.copy_from_slice(self.knot_state(k));
            return Ok(());
        }
        if self.times[k + 1] == t {
            out.copy_from_slice(self.knot_state(k + 1));
            return Ok(());
        }
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        let h = t1 - t0;
        let s = (t - t0) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        let (x0, x1) = (self.knot_state(k), self.knot_state(k + 1));
        let (d0, d1) = (self.knot_deriv(k), self.knot_deriv(k + 1));
        for i in 0..self.dim {
            out[i] = h00 * x0[i] + h10 * h * d0[i] + h01 * x1[i] + h11 * h * d1[i];
        }
        Ok(())
    }
}
