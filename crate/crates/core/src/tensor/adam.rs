use crate::error::{Error, Result};

use super::{Gradients, ParamSet, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment accumulators for every parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &ParamSet, config: AdamConfig) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect();
        Self { config, step: 0, m: zeros.clone(), v: zeros }
    }
}

/// Rescales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut Gradients, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
    norm
}

/// One bias-corrected Adam update. Every parameter must have a gradient;
/// the gradients are cleared afterwards.
pub fn adam_step(params: &mut ParamSet, grads: &mut Gradients, state: &mut AdamState) -> Result<()> {
    if let Some(id) = params.ids().find(|&id| grads.get(id).is_none()) {
        return Err(Error::MissingGradient(params.name(id).to_string()));
    }
    state.step += 1;
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    let bc1 = 1.0 - beta1.powi(state.step as i32);
    let bc2 = 1.0 - beta2.powi(state.step as i32);
    for id in params.ids() {
        let g = grads.get(id).expect("checked above").data().to_vec();
        let i = id.index();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let p = params.get_mut(id).data_mut();
        for k in 0..g.len() {
            m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
            v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            p[k] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    grads.clear();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64) -> (ParamSet, super::super::ParamId) {
        let mut set = ParamSet::new();
        let id = set.register("w", Tensor::row(&[value]));
        (set, id)
    }

    #[test]
    fn first_step_moves_by_lr() {
        let (mut set, id) = single(1.0);
        let mut state = AdamState::new(&set, AdamConfig::with_lr(0.1));
        let mut grads = Gradients::empty(1);
        grads.set(id, Tensor::row(&[1.0]));
        adam_step(&mut set, &mut grads, &mut state).unwrap();
        assert!((set.get(id).item() - 0.9).abs() < 1e-6);
        assert!(grads.get(id).is_none());
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let (mut set, id) = single(2.5);
        let mut state = AdamState::new(&set, AdamConfig::with_lr(0.1));
        let mut grads = Gradients::zeros_like(&set);
        adam_step(&mut set, &mut grads, &mut state).unwrap();
        assert_eq!(set.get(id).item(), 2.5);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let (mut set, _) = single(1.0);
        let mut state = AdamState::new(&set, AdamConfig::default());
        let mut grads = Gradients::empty(1);
        assert!(matches!(adam_step(&mut set, &mut grads, &mut state), Err(Error::MissingGradient(n)) if n == "w"));
    }

    #[test]
    fn quadratic_bowl_descends_monotonically_after_warmup() {
        let mut set = ParamSet::new();
        let id = set.register("w", Tensor::row(&[3.0, -2.0, 1.5]));
        let mut state = AdamState::new(&set, AdamConfig::with_lr(0.01));
        let loss = |s: &ParamSet| s.get(id).data().iter().map(|x| x * x).sum::<f64>();
        let start = loss(&set);
        let mut prev = start;
        for step in 0..100 {
            let mut grads = Gradients::empty(1);
            grads.set(id, Tensor::row(&set.get(id).data().iter().map(|x| 2.0 * x).collect::<Vec<_>>()));
            adam_step(&mut set, &mut grads, &mut state).unwrap();
            let now = loss(&set);
            if step >= 5 {
                assert!(now < prev, "step {step}: {now} >= {prev}");
            }
            prev = now;
        }
        assert!(prev < 0.5 * start, "final loss {prev}");
    }

    #[test]
    fn clipping_caps_global_norm() {
        let (set, id) = single(0.0);
        let mut grads = Gradients::zeros_like(&set);
        grads.set(id, Tensor::row(&[80.0]));
        let before = clip_grad_norm(&mut grads, 40.0);
        assert_eq!(before, 80.0);
        assert!((grads.global_norm() - 40.0).abs() < 1e-12);
    }
}
