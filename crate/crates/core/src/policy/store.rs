use std::sync::{Arc, Mutex, MutexGuard};

use crate::error::{Error, Result};
use crate::tensor::{adam_step, clip_grad_norm, AdamConfig, AdamState, Gradients, ParamSet};

/// Update rule applied by the store.
#[derive(Clone, Debug)]
pub enum Optimizer {
    Adam(AdamState),
    /// Plain gradient descent; updates commute, which makes concurrent
    /// application order observable only through rounding.
    Sgd { lr: f64 },
}

/// A consistent view of the parameters at one version.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub params: Arc<ParamSet>,
    pub version: u64,
}

#[derive(Debug)]
struct Inner {
    params: Arc<ParamSet>,
    optimizer: Optimizer,
    version: u64,
}

/// Parameters shared by all workers.
///
/// Reads hand out an immutable snapshot; a submitted gradient is clipped,
/// applied and versioned under one lock, so no reader ever observes a
/// half-updated parameter set.
#[derive(Debug)]
pub struct ParameterStore {
    inner: Mutex<Inner>,
    clip: Option<f64>,
}

impl ParameterStore {
    pub fn new(params: ParamSet, optimizer: Optimizer, clip: Option<f64>) -> Self {
        Self { inner: Mutex::new(Inner { params: Arc::new(params), optimizer, version: 0 }), clip }
    }

    /// Adam with global-norm clipping at `clip`.
    pub fn with_adam(params: ParamSet, config: AdamConfig, clip: f64) -> Self {
        let state = AdamState::new(&params, config);
        Self::new(params, Optimizer::Adam(state), Some(clip))
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn snapshot(&self) -> Snapshot {
        let inner = self.lock();
        Snapshot { params: Arc::clone(&inner.params), version: inner.version }
    }

    pub fn version(&self) -> u64 {
        self.lock().version
    }

    /// Applies one gradient atomically and returns the new version.
    pub fn apply(&self, mut grads: Gradients) -> Result<u64> {
        let mut inner = self.lock();
        if grads.len() != inner.params.len() {
            return Err(Error::InvalidArgument(format!(
                "gradient for {} parameters, store holds {}",
                grads.len(),
                inner.params.len()
            )));
        }
        if let Some(max) = self.clip {
            clip_grad_norm(&mut grads, max);
        }
        let Inner { params, optimizer, version } = &mut *inner;
        let params = Arc::make_mut(params);
        match optimizer {
            Optimizer::Adam(state) => adam_step(params, &mut grads, state)?,
            Optimizer::Sgd { lr } => {
                if let Some(id) = params.ids().find(|&id| grads.get(id).is_none()) {
                    return Err(Error::MissingGradient(params.name(id).to_string()));
                }
                let ids: Vec<_> = params.ids().collect();
                for id in ids {
                    let g = grads.get(id).expect("checked above").data().to_vec();
                    params.get_mut(id).data_mut().iter_mut().zip(g).for_each(|(p, g)| *p -= *lr * g);
                }
            }
        }
        *version += 1;
        Ok(*version)
    }

    /// Replaces parameters, optimizer state and version in one step.
    pub fn restore(&self, params: ParamSet, optimizer: Optimizer, version: u64) {
        let mut inner = self.lock();
        *inner = Inner { params: Arc::new(params), optimizer, version };
    }

    /// Copies of the current parameters, optimizer and version, taken under
    /// one lock.
    pub fn export(&self) -> (ParamSet, Optimizer, u64) {
        let inner = self.lock();
        ((*inner.params).clone(), inner.optimizer.clone(), inner.version)
    }

    pub fn set_learning_rate(&self, lr: f64) {
        match &mut self.lock().optimizer {
            Optimizer::Adam(state) => state.config.lr = lr,
            Optimizer::Sgd { lr: l } => *l = lr,
        }
    }
}
