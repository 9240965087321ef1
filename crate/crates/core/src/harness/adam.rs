//! Adam with bias correction and optional decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Element, ParamRef, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// First and second moment buffers for one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(numel: usize) -> Self {
        AdamState {
            m: vec![0.0; numel],
            v: vec![0.0; numel],
            step: 0,
        }
    }
}

/// One update of `params` in place. Moments are kept in f64.
pub fn adam_step<T: Element>(params: &mut [T], grads: &[T], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::State(format!(
            "adam buffers disagree: params {}, grads {}, moments {}/{}",
            params.len(),
            grads.len(),
            state.m.len(),
            state.v.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let decay = 1.0 - cfg.lr * cfg.weight_decay;
    for i in 0..params.len() {
        let g = grads[i].to_f64_lossy();
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        let mut p = params[i].to_f64_lossy();
        if cfg.weight_decay > 0.0 {
            p *= decay;
        }
        p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        params[i] = T::from_f64_lossy(p);
    }
    Ok(())
}

/// Adam over a fixed parameter list. Frozen parameters and parameters
/// without a gradient are skipped, and their step counters do not advance.
pub struct Adam<T: Element> {
    params: Vec<ParamRef<T>>,
    states: Vec<AdamState>,
    pub cfg: AdamConfig,
}

impl<T: Element> Adam<T> {
    pub fn new(params: &[ParamRef<T>], cfg: AdamConfig) -> Self {
        let states = params.iter().map(|p| AdamState::new(p.numel())).collect();
        Adam {
            params: params.to_vec(),
            states,
            cfg,
        }
    }

    pub fn step(&mut self) -> Result<()> {
        for (p, s) in self.params.iter().zip(&mut self.states) {
            if !p.requires_grad() {
                continue;
            }
            let grad: Tensor<T> = match p.grad() {
                Some(g) => g,
                None => continue,
            };
            if !grad.all_finite() {
                return Err(Error::Numeric(format!("non-finite gradient for {}", p.name())));
            }
            let mut value = p.value_mut();
            adam_step(value.data_mut(), grad.data(), s, &self.cfg)?;
        }
        Ok(())
    }
}
