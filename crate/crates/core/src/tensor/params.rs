use std::collections::HashMap;
use std::ops::{Deref, DerefMut};

use crate::error::{Error, Result};

use super::{Tape, Tensor, Var};

/// Index of a parameter inside its [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered, named parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    lookup: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a new parameter. Panics on a duplicate name, which can only
    /// come from a model-construction bug.
    pub fn register(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.lookup.contains_key(&name), "duplicate parameter name `{name}`");
        self.lookup.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(value);
        ParamId(self.names.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.lookup.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    /// Replaces a tensor, keeping the registered shape.
    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let current = &self.tensors[id.0];
        if current.shape() != value.shape() {
            return Err(Error::ParameterShape {
                name: self.names[id.0].clone(),
                expected: current.shape().to_vec(),
                found: value.shape().to_vec(),
            });
        }
        self.tensors[id.0] = value;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

/// Per-parameter gradients aligned with a [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn empty(len: usize) -> Self {
        Self { grads: vec![None; len] }
    }

    /// All-zero gradients matching `params`.
    pub fn zeros_like(params: &ParamSet) -> Self {
        Self { grads: params.tensors.iter().map(|t| Some(Tensor::zeros(t.shape()))).collect() }
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    pub fn set(&mut self, id: ParamId, grad: Tensor) {
        self.grads[id.0] = Some(grad);
    }

    pub fn clear(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    /// Adds `other` into `self`; a missing entry on either side is treated as zero.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (mine, theirs) in self.grads.iter_mut().zip(&other.grads) {
            match (mine.as_mut(), theirs) {
                (Some(m), Some(t)) => m.data_mut().iter_mut().zip(t.data()).for_each(|(a, b)| *a += b),
                (None, Some(t)) => *mine = Some(t.clone()),
                _ => {}
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .flat_map(|g| g.data().iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

/// A tape plus lazily bound parameters for one forward/backward pass.
///
/// Parameters are copied onto the tape the first time a module asks for
/// them. In inference mode they are bound as constants, so nothing is
/// tracked for backward.
pub struct Graph<'p> {
    tape: Tape,
    params: &'p ParamSet,
    bound: Vec<Option<Var>>,
    track: bool,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Self { tape: Tape::new(), params, bound: vec![None; params.len()], track: true }
    }

    pub fn inference(params: &'p ParamSet) -> Self {
        Self { track: false, ..Self::new(params) }
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    /// Tape handle of parameter `id`.
    pub fn p(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let value = self.params.get(id).clone();
        let v = if self.track { self.tape.leaf(value) } else { self.tape.constant(value) };
        self.bound[id.0] = Some(v);
        v
    }

    pub fn is_bound(&self, id: ParamId) -> bool {
        self.bound[id.0].is_some()
    }

    /// Gradients of every bound parameter after [`Tape::backward`]. Parameters
    /// that were never used in the pass have no entry.
    pub fn gradients(&self) -> Gradients {
        let grads = self
            .bound
            .iter()
            .zip(&self.params.tensors)
            .map(|(v, t)| v.map(|v| self.tape.grad(v).unwrap_or_else(|| Tensor::zeros(t.shape()))))
            .collect();
        Gradients { grads }
    }

    pub fn into_tape(self) -> Tape {
        self.tape
    }
}

impl Deref for Graph<'_> {
    type Target = Tape;

    fn deref(&self) -> &Tape {
        &self.tape
    }
}

impl DerefMut for Graph<'_> {
    fn deref_mut(&mut self) -> &mut Tape {
        &mut self.tape
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unused_parameters_have_no_gradient() {
        let mut set = ParamSet::new();
        let a = set.register("a", Tensor::row(&[1.0, 2.0]));
        let b = set.register("b", Tensor::row(&[5.0]));
        let mut g = Graph::new(&set);
        let va = g.p(a);
        let s = g.sum(va);
        g.backward(s).unwrap();
        let grads = g.gradients();
        assert_eq!(grads.get(a).unwrap().data(), &[1.0, 1.0]);
        assert!(grads.get(b).is_none());
    }

    #[test]
    fn set_rejects_shape_change() {
        let mut set = ParamSet::new();
        let a = set.register("a", Tensor::row(&[1.0, 2.0]));
        assert!(set.set(a, Tensor::row(&[1.0])).is_err());
    }

    #[test]
    fn inference_graph_tracks_nothing() {
        let mut set = ParamSet::new();
        let a = set.register("a", Tensor::row(&[1.0, 2.0]));
        let mut g = Graph::inference(&set);
        let va = g.p(a);
        assert!(!g.requires_grad(va));
    }
}
