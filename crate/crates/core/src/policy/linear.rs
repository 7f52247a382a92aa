use nalgebra::DMatrix;

use super::{Policy, Tape};

/// `u = -k z` with a single scalar gain `k`; input and output share one
/// dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScalarGain {
    pub dim: usize,
}

impl ScalarGain {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl Policy for ScalarGain {
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn output_dim(&self) -> usize {
        self.dim
    }

    fn num_params(&self) -> usize {
        1
    }

    fn forward(&self, params: &[f64], z: &[f64], tape: &mut Tape, u: &mut [f64]) {
        tape.layers.resize(1, Vec::new());
        tape.layers[0].clear();
        tape.layers[0].extend_from_slice(z);
        for (ui, zi) in u.iter_mut().zip(z) {
            *ui = -params[0] * zi;
        }
    }

    fn input_jacobian(&self, params: &[f64], _tape: &Tape, jac: &mut DMatrix<f64>) {
        jac.fill(0.0);
        jac.fill_diagonal(-params[0]);
    }

    fn accumulate_param_vjp(&self, _params: &[f64], tape: &Tape, v: &[f64], scale: f64, out: &mut [f64]) {
        let dot: f64 = v.iter().zip(tape.input()).map(|(a, b)| a * b).sum();
        out[0] -= scale * dot;
    }

    fn describe(&self) -> String {
        format!("scalar_gain[{}]", self.dim)
    }
}
