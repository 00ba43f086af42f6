use serde::{Deserialize, Serialize};

use super::{ParamStore, Real};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.98, eps: 1e-9 }
    }
}

/// Moment estimates for one parameter array.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Real = f32> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
    pub config: AdamConfig,
}

impl<T: Real> AdamState<T> {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self { m: vec![T::zero(); len], v: vec![T::zero(); len], step: 0, config }
    }
}

/// One bias-corrected Adam update. `name` identifies the parameter in errors.
pub fn adam_step<T: Real>(
    name: &str,
    params: &mut [T],
    grads: &[T],
    state: &mut AdamState<T>,
    learning_rate: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || state.v.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "adam `{name}`: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if !(learning_rate.is_finite() && learning_rate > 0.0) {
        return Err(Error::Config(format!("learning rate must be finite and positive, got {learning_rate}")));
    }
    if grads.iter().any(|g| g.is_nan()) {
        return Err(Error::NonFiniteGradient(name.to_string()));
    }
    let AdamConfig { beta1, beta2, eps } = state.config;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i].wide();
        let m = beta1 * state.m[i].wide() + (1.0 - beta1) * g;
        let v = beta2 * state.v[i].wide() + (1.0 - beta2) * g * g;
        state.m[i] = T::narrow(m);
        state.v[i] = T::narrow(v);
        let update = learning_rate * (m / c1) / ((v / c2).sqrt() + eps);
        params[i] = T::narrow(params[i].wide() - update);
    }
    Ok(())
}

/// Adam over every tensor of a [`ParamStore`], reading the stored gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T: Real = f32> {
    pub states: Vec<AdamState<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(params: &ParamStore<T>, config: AdamConfig) -> Self {
        Self { states: params.iter().map(|(_, _, t)| AdamState::new(t.len(), config)).collect() }
    }

    pub fn step(&mut self, params: &mut ParamStore<T>, learning_rate: f64) -> Result<()> {
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let name = params.name(id).to_string();
            let tensor = params.get_mut(id);
            let grad = tensor
                .grad()
                .map(<[T]>::to_vec)
                .ok_or_else(|| Error::Contract(format!("parameter `{name}` has no gradient")))?;
            adam_step(&name, tensor.data_mut(), &grad, &mut self.states[id.0], learning_rate)?;
        }
        Ok(())
    }

    pub fn steps_taken(&self) -> u64 {
        self.states.first().map_or(0, |s| s.step)
    }
}
