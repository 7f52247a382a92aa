use nalgebra::DMatrix;
use rand::Rng;

use super::{check_dim, FlatParams, Policy, PolicyError, Tape};
use crate::rng::{stream, Stream};

/// Layer sizes `[input, hidden.., output]`, tanh on hidden layers and
/// identity on the output.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpArch {
    pub layer_sizes: Vec<usize>,
    /// Multiplier applied to the initial output-layer weights.
    pub last_layer_scale: f64,
}

impl MlpArch {
    pub fn new(layer_sizes: Vec<usize>, last_layer_scale: f64) -> Result<Self, PolicyError> {
        if layer_sizes.len() < 2 {
            return Err(PolicyError::Arch("need at least input and output sizes".into()));
        }
        if layer_sizes.contains(&0) {
            return Err(PolicyError::Arch("layer sizes must be positive".into()));
        }
        if !(last_layer_scale > 0.0 && last_layer_scale.is_finite()) {
            return Err(PolicyError::Arch("last_layer_scale must be positive".into()));
        }
        Ok(Self { layer_sizes, last_layer_scale })
    }

    /// `Σ (fan_in · fan_out + fan_out)` over layers.
    pub fn num_params(&self) -> usize {
        self.layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }
}

/// Draws θ: weights `U(-1/√fan_in, 1/√fan_in)`, biases zero, output-layer
/// weights multiplied by `last_layer_scale`. Deterministic in `(arch, seed)`.
pub fn init_params(arch: &MlpArch, seed: u64) -> FlatParams {
    let mut rng = stream(seed, Stream::Params);
    let mut theta = Vec::with_capacity(arch.num_params());
    let layers = arch.num_layers();
    for (l, w) in arch.layer_sizes.windows(2).enumerate() {
        let (fan_in, fan_out) = (w[0], w[1]);
        let bound = 1.0 / (fan_in as f64).sqrt();
        let scale = if l + 1 == layers { arch.last_layer_scale } else { 1.0 };
        for _ in 0..fan_in * fan_out {
            theta.push(rng.random_range(-bound..bound) * scale);
        }
        theta.extend(std::iter::repeat_n(0.0, fan_out));
    }
    FlatParams::new(theta)
}

/// The single-layer network `u = -K z`, with zero bias.
pub fn linear_policy(gain: &DMatrix<f64>) -> (Mlp, FlatParams) {
    let (k, m) = gain.shape();
    let arch = MlpArch { layer_sizes: vec![m, k], last_layer_scale: 1.0 };
    let mut theta = Vec::with_capacity(k * m + k);
    for i in 0..k {
        for j in 0..m {
            theta.push(-gain[(i, j)]);
        }
    }
    theta.extend(std::iter::repeat_n(0.0, k));
    (Mlp::new(arch), FlatParams::new(theta))
}

/// Feed-forward tanh network over a flat parameter vector laid out as
/// `(W₁ row-major, b₁, W₂, b₂, ..)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    arch: MlpArch,
    /// Offset of each layer's weight block in θ.
    offsets: Vec<usize>,
}

impl Mlp {
    pub fn new(arch: MlpArch) -> Self {
        let mut offsets = Vec::with_capacity(arch.num_layers());
        let mut off = 0;
        for w in arch.layer_sizes.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }
        Self { arch, offsets }
    }

    pub fn arch(&self) -> &MlpArch {
        &self.arch
    }

    fn layer<'a>(&self, params: &'a [f64], l: usize) -> (usize, usize, &'a [f64], &'a [f64]) {
        let (fan_in, fan_out) = (self.arch.layer_sizes[l], self.arch.layer_sizes[l + 1]);
        let off = self.offsets[l];
        let w = &params[off..off + fan_in * fan_out];
        let b = &params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
        (fan_in, fan_out, w, b)
    }

    fn check(&self, params: &[f64], z: &[f64]) -> Result<(), PolicyError> {
        check_dim("parameters", self.num_params(), params.len())?;
        check_dim("policy input", self.input_dim(), z.len())
    }

    /// Checked forward pass.
    pub fn mlp_forward(&self, params: &[f64], z: &[f64]) -> Result<Vec<f64>, PolicyError> {
        self.check(params, z)?;
        let mut tape = Tape::new();
        let mut u = vec![0.0; self.output_dim()];
        self.forward(params, z, &mut tape, &mut u);
        Ok(u)
    }

    /// Checked `∂π/∂z`.
    pub fn mlp_jacobian_x(&self, params: &[f64], z: &[f64]) -> Result<DMatrix<f64>, PolicyError> {
        self.check(params, z)?;
        let mut tape = Tape::new();
        let mut u = vec![0.0; self.output_dim()];
        self.forward(params, z, &mut tape, &mut u);
        let mut jac = DMatrix::zeros(self.output_dim(), self.input_dim());
        self.input_jacobian(params, &tape, &mut jac);
        Ok(jac)
    }

    /// Checked `vᵀ ∂π/∂θ`.
    pub fn mlp_vjp_params(&self, params: &[f64], z: &[f64], v: &[f64]) -> Result<Vec<f64>, PolicyError> {
        self.check(params, z)?;
        check_dim("cotangent", self.output_dim(), v.len())?;
        let mut tape = Tape::new();
        let mut u = vec![0.0; self.output_dim()];
        self.forward(params, z, &mut tape, &mut u);
        let mut out = vec![0.0; params.len()];
        self.accumulate_param_vjp(params, &tape, v, 1.0, &mut out);
        Ok(out)
    }

    /// Back-propagates `delta` (a cotangent on layer `l`'s output) through
    /// layers `l, l-1, .., 0`, calling `visit(layer, delta_out)` on the way.
    /// Returns the cotangent on the network input.
    fn backward<V>(&self, params: &[f64], tape: &Tape, mut delta: Vec<f64>, mut visit: V) -> Vec<f64>
    where
        V: FnMut(usize, &[f64]),
    {
        for l in (0..self.arch.num_layers()).rev() {
            let (fan_in, fan_out, w, _) = self.layer(params, l);
            visit(l, &delta);
            let mut prev = vec![0.0; fan_in];
            for o in 0..fan_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &w[o * fan_in..(o + 1) * fan_in];
                for (p, wv) in prev.iter_mut().zip(row) {
                    *p += wv * d;
                }
            }
            if l > 0 {
                // tanh' = 1 - tanh²
                for (p, a) in prev.iter_mut().zip(&tape.layers[l]) {
                    *p *= 1.0 - a * a;
                }
            }
            delta = prev;
        }
        delta
    }
}

impl Policy for Mlp {
    fn input_dim(&self) -> usize {
        self.arch.layer_sizes[0]
    }

    fn output_dim(&self) -> usize {
        *self.arch.layer_sizes.last().unwrap()
    }

    fn num_params(&self) -> usize {
        self.arch.num_params()
    }

    fn forward(&self, params: &[f64], z: &[f64], tape: &mut Tape, u: &mut [f64]) {
        debug_assert_eq!(z.len(), self.input_dim());
        let layers = self.arch.num_layers();
        tape.layers.resize(layers + 1, Vec::new());
        tape.layers[0].clear();
        tape.layers[0].extend_from_slice(z);
        for l in 0..layers {
            let (fan_in, fan_out, w, b) = self.layer(params, l);
            let (done, rest) = tape.layers.split_at_mut(l + 1);
            let input = &done[l];
            let out = &mut rest[0];
            out.clear();
            for o in 0..fan_out {
                let row = &w[o * fan_in..(o + 1) * fan_in];
                let pre = b[o] + row.iter().zip(input).map(|(a, x)| a * x).sum::<f64>();
                out.push(if l + 1 < layers { pre.tanh() } else { pre });
            }
        }
        u.copy_from_slice(&tape.layers[layers]);
    }

    fn input_jacobian(&self, params: &[f64], tape: &Tape, jac: &mut DMatrix<f64>) {
        let k = self.output_dim();
        for i in 0..k {
            let mut seed = vec![0.0; k];
            seed[i] = 1.0;
            let row = self.backward(params, tape, seed, |_, _| {});
            for (j, v) in row.into_iter().enumerate() {
                jac[(i, j)] = v;
            }
        }
    }

    fn accumulate_param_vjp(&self, params: &[f64], tape: &Tape, v: &[f64], scale: f64, out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.output_dim());
        let seed: Vec<f64> = v.iter().map(|x| x * scale).collect();
        self.backward(params, tape, seed, |l, delta| {
            let fan_in = self.arch.layer_sizes[l];
            let off = self.offsets[l];
            let input = &tape.layers[l];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &mut out[off + o * fan_in..off + (o + 1) * fan_in];
                for (g, x) in row.iter_mut().zip(input) {
                    *g += d * x;
                }
            }
            let boff = off + fan_in * delta.len();
            for (g, d) in out[boff..boff + delta.len()].iter_mut().zip(delta) {
                *g += d;
            }
        });
    }

    fn describe(&self) -> String {
        let sizes: Vec<String> = self.arch.layer_sizes.iter().map(|s| s.to_string()).collect();
        format!("mlp[{}]x{}", sizes.join(","), self.arch.last_layer_scale)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arch(sizes: &[usize]) -> MlpArch {
        MlpArch::new(sizes.to_vec(), 1.0).unwrap()
    }

    /// Independent forward pass written directly from the layer equations.
    fn reference_forward(sizes: &[usize], theta: &[f64], x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        let mut off = 0;
        for l in 0..sizes.len() - 1 {
            let (n_in, n_out) = (sizes[l], sizes[l + 1]);
            let mut next = Vec::new();
            for o in 0..n_out {
                let mut s = theta[off + n_in * n_out + o];
                for i in 0..n_in {
                    s += theta[off + o * n_in + i] * a[i];
                }
                next.push(if l + 2 < sizes.len() { s.tanh() } else { s });
            }
            off += n_in * n_out + n_out;
            a = next;
        }
        a
    }

    #[test]
    fn param_count_layout() {
        assert_eq!(arch(&[2, 32, 2]).num_params(), 2 * 32 + 32 + 32 * 2 + 2);
        assert_eq!(arch(&[2, 32, 2]).num_params(), 162);
        assert_eq!(arch(&[2, 3, 1]).num_params(), 13);
    }

    #[test]
    fn init_is_deterministic() {
        let a = arch(&[3, 8, 2]);
        assert_eq!(init_params(&a, 7), init_params(&a, 7));
        assert_ne!(init_params(&a, 7), init_params(&a, 8));
    }

    #[test]
    fn init_bounds_and_zero_biases() {
        let a = arch(&[4, 16, 2]);
        let p = init_params(&a, 3);
        let w1 = &p[..64];
        assert!(w1.iter().all(|w| w.abs() < 0.5));
        assert!(p[64..80].iter().all(|&b| b == 0.0));
        assert!(p[80 + 32..].iter().all(|&b| b == 0.0));
    }

    #[test]
    fn last_layer_scaling_is_exact() {
        let full = init_params(&MlpArch::new(vec![2, 32, 2], 1.0).unwrap(), 0);
        let scaled = init_params(&MlpArch::new(vec![2, 32, 2], 0.1).unwrap(), 0);
        assert_eq!(&full[..96], &scaled[..96]);
        for i in 96..160 {
            assert!((full[i] - 10.0 * scaled[i]).abs() <= 1e-15 * full[i].abs().max(1e-300));
        }
    }

    #[test]
    fn invalid_arch() {
        assert!(MlpArch::new(vec![3], 1.0).is_err());
        assert!(MlpArch::new(vec![3, 0, 1], 1.0).is_err());
        assert!(MlpArch::new(vec![3, 1], 0.0).is_err());
    }

    #[test]
    fn zero_params_zero_output() {
        let net = Mlp::new(arch(&[3, 5, 2]));
        let theta = vec![0.0; net.num_params()];
        assert_eq!(net.mlp_forward(&theta, &[1.0, -4.0, 9.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(net.mlp_jacobian_x(&theta, &[1.0, 2.0, 3.0]).unwrap(), DMatrix::zeros(2, 3));
    }

    #[test]
    fn single_affine_layer() {
        let net = Mlp::new(arch(&[1, 1]));
        assert_eq!(net.mlp_forward(&[2.5, -0.5], &[3.0]).unwrap(), vec![7.0]);
        let net = Mlp::new(arch(&[3, 2]));
        let theta = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 0.5, -0.5];
        let jac = net.mlp_jacobian_x(&theta, &[0.3, 0.1, -2.0]).unwrap();
        assert_eq!(jac, DMatrix::from_row_slice(2, 3, &theta[..6]));
        let g = net.mlp_vjp_params(&theta, &[0.3, 0.1, -2.0], &[1.0, 0.0]).unwrap();
        assert_eq!(g, vec![0.3, 0.1, -2.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn forward_matches_reference() {
        let a = arch(&[2, 3, 1]);
        let net = Mlp::new(a.clone());
        let theta = init_params(&a, 0);
        let u = net.mlp_forward(&theta, &[1.0, -1.0]).unwrap();
        let r = reference_forward(&[2, 3, 1], &theta, &[1.0, -1.0]);
        assert!((u[0] - r[0]).abs() < 1e-15);
    }

    #[test]
    fn dimension_errors() {
        let net = Mlp::new(arch(&[2, 3, 1]));
        let theta = vec![0.0; 13];
        assert!(net.mlp_forward(&theta, &[1.0]).is_err());
        assert!(net.mlp_forward(&theta[..12], &[1.0, 2.0]).is_err());
        assert!(net.mlp_vjp_params(&theta, &[1.0, 2.0], &[1.0, 1.0]).is_err());
    }

    fn fd_jacobian(sizes: &[usize], theta: &[f64], x: &[f64]) -> DMatrix<f64> {
        let eps = 1e-6;
        let k = *sizes.last().unwrap();
        let mut jac = DMatrix::zeros(k, x.len());
        for j in 0..x.len() {
            let (mut xp, mut xm) = (x.to_vec(), x.to_vec());
            xp[j] += eps;
            xm[j] -= eps;
            let (up, um) = (reference_forward(sizes, theta, &xp), reference_forward(sizes, theta, &xm));
            for i in 0..k {
                jac[(i, j)] = (up[i] - um[i]) / (2.0 * eps);
            }
        }
        jac
    }

    fn fd_vjp(sizes: &[usize], theta: &[f64], x: &[f64], v: &[f64]) -> Vec<f64> {
        let eps = 1e-6;
        let f = |th: &[f64]| -> f64 {
            reference_forward(sizes, th, x).iter().zip(v).map(|(a, b)| a * b).sum()
        };
        (0..theta.len())
            .map(|i| {
                let (mut tp, mut tm) = (theta.to_vec(), theta.to_vec());
                tp[i] += eps;
                tm[i] -= eps;
                (f(&tp) - f(&tm)) / (2.0 * eps)
            })
            .collect()
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let a = arch(&[2, 3, 2]);
        let theta = init_params(&a, 0);
        let x = [0.5, -0.2];
        let jac = Mlp::new(a).mlp_jacobian_x(&theta, &x).unwrap();
        let fd = fd_jacobian(&[2, 3, 2], &theta, &x);
        assert!((jac - fd).abs().max() < 1e-6);
    }

    #[test]
    fn vjp_matches_finite_differences_all_13_params() {
        let a = arch(&[2, 3, 1]);
        let theta = init_params(&a, 0);
        let x = [1.0, -1.0];
        let g = Mlp::new(a).mlp_vjp_params(&theta, &x, &[0.7]).unwrap();
        let fd = fd_vjp(&[2, 3, 1], &theta, &x, &[0.7]);
        assert_eq!(g.len(), 13);
        for (a, b) in g.iter().zip(&fd) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn hidden_activations_bounded() {
        let a = MlpArch::new(vec![2, 16, 16, 1], 1.0).unwrap();
        let net = Mlp::new(a.clone());
        let theta: Vec<f64> = init_params(&a, 1).iter().map(|w| w * 50.0).collect();
        let mut tape = Tape::new();
        let mut u = [0.0];
        net.forward(&theta, &[3.0, -7.0], &mut tape, &mut u);
        for layer in &tape.layers[1..3] {
            assert!(layer.iter().all(|a| a.abs() <= 1.0));
        }
    }

    fn sizes_strategy() -> impl Strategy<Value = Vec<usize>> {
        prop::collection::vec(1usize..6, 2..5)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn vjp_and_jacobian_agree_with_fd(sizes in sizes_strategy(), seed in 0u64..1000,
                                          xs in prop::collection::vec(-1.5f64..1.5, 6),
                                          vs in prop::collection::vec(-1.0f64..1.0, 6)) {
            let a = arch(&sizes);
            let net = Mlp::new(a.clone());
            let theta = init_params(&a, seed);
            let x = &xs[..sizes[0]];
            let v = &vs[..*sizes.last().unwrap()];
            let g = net.mlp_vjp_params(&theta, x, v).unwrap();
            let fd = fd_vjp(&sizes, &theta, x, v);
            for (a, b) in g.iter().zip(&fd) {
                prop_assert!((a - b).abs() <= 1e-5 * (1.0 + b.abs()), "{} vs {}", a, b);
            }
            let jac = net.mlp_jacobian_x(&theta, x).unwrap();
            let fdj = fd_jacobian(&sizes, &theta, x);
            for (a, b) in jac.iter().zip(fdj.iter()) {
                prop_assert!((a - b).abs() <= 1e-5 * (1.0 + b.abs()));
            }
        }

        #[test]
        fn vjp_is_linear_in_cotangent(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0,
                                      v1 in prop::collection::vec(-1.0f64..1.0, 2),
                                      v2 in prop::collection::vec(-1.0f64..1.0, 2)) {
            let ar = arch(&[3, 4, 2]);
            let net = Mlp::new(ar.clone());
            let theta = init_params(&ar, seed);
            let x = [0.2, -0.4, 0.9];
            let combo: Vec<f64> = v1.iter().zip(&v2).map(|(p, q)| a * p + b * q).collect();
            let lhs = net.mlp_vjp_params(&theta, &x, &combo).unwrap();
            let g1 = net.mlp_vjp_params(&theta, &x, &v1).unwrap();
            let g2 = net.mlp_vjp_params(&theta, &x, &v2).unwrap();
            for i in 0..lhs.len() {
                let rhs = a * g1[i] + b * g2[i];
                prop_assert!((lhs[i] - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
            }
        }
    }

    #[test]
    fn linear_policy_applies_negative_gain() {
        let gain = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 2.0, 0.5, -1.0, 0.0]);
        let (net, theta) = linear_policy(&gain);
        assert_eq!(net.mlp_forward(&theta, &[1.0, 2.0, 3.0]).unwrap(), vec![-7.0, 1.5]);
    }

    #[test]
    fn zero_cotangent_zero_vjp() {
        let a = arch(&[2, 4, 3]);
        let theta = init_params(&a, 5);
        let g = Mlp::new(a).mlp_vjp_params(&theta, &[0.1, 0.2], &[0.0; 3]).unwrap();
        assert!(g.iter().all(|&x| x == 0.0));
    }
}
