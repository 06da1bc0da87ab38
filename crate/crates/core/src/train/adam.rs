use crate::autodiff::ParamSet;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.99,
            epsilon: 1e-8,
        }
    }
}

/// Moment estimates for one parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn matches(&self, params: &ParamSet) -> bool {
        self.m.len() == params.len()
            && self.v.len() == params.len()
            && params
                .iter()
                .zip(self.m.iter().zip(&self.v))
                .all(|(p, (m, v))| m.shape() == p.value.shape() && v.shape() == p.value.shape())
    }
}

/// Fails with the offending parameter name if any gradient is not finite.
pub fn check_grads(params: &ParamSet) -> Result<()> {
    match params.iter().find(|p| !p.grad.is_finite()) {
        Some(p) => Err(Error::NonFinite(format!("gradient of {}", p.name))),
        None => Ok(()),
    }
}

/// Global L2 norm of all gradients.
pub fn grad_norm(sets: &[&ParamSet]) -> f64 {
    sets.iter()
        .flat_map(|s| s.iter())
        .map(|p| p.grad.data().iter().map(|g| g * g).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// One bias-corrected ADAM update using the gradients stored in `params`.
pub fn adam_step(params: &mut ParamSet, state: &mut AdamState, lr: f64, cfg: &AdamConfig) -> Result<()> {
    if !state.matches(params) {
        return Err(Error::Contract("optimizer state does not match parameters".into()));
    }
    check_grads(params)?;
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let (m, v) = (state.m[i].data_mut(), state.v[i].data_mut());
        let theta = p.value.data_mut();
        for (j, &g) in p.grad.data().iter().enumerate() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            theta[j] -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}
