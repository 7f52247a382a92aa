use super::TrainError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(step_size: f64) -> Self {
        Self { step_size, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub(crate) fn validate(&self) -> Result<(), TrainError> {
        let ok = self.step_size > 0.0
            && self.step_size.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(TrainError::Config(format!("invalid Adam settings {self:?}")))
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }
}

/// One bias-corrected Adam update of `params` in place. Nothing is modified
/// if `grad` contains a non-finite value.
pub fn adam_step(state: &mut AdamState, cfg: &AdamConfig, params: &mut [f64], grad: &[f64]) -> Result<(), TrainError> {
    if grad.len() != params.len() || state.m.len() != params.len() {
        return Err(TrainError::Config(format!(
            "Adam shapes disagree: {} params, {} grad, {} moments",
            params.len(),
            grad.len(),
            state.m.len()
        )));
    }
    if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
        return Err(TrainError::NonFiniteGradient { index });
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..params.len() {
        let g = grad[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= cfg.step_size * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

/// Element-wise clamp to `[-c, c]`.
pub fn clip_grad(grad: &mut [f64], c: f64) {
    for g in grad {
        *g = g.clamp(-c, c);
    }
}
