use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::Array;

/// Handle into a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(&self) -> usize {
        self.0
    }
}

/// A named learnable array with its gradient buffer.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Array,
    pub grad: Array,
    pub trainable: bool,
}

/// Owns every learnable array of a model, in insertion order. Insertion
/// order is what makes optimizer updates and checkpoint layout stable.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array, trainable: bool) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let grad = Array::zeros(value.shape());
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter {
            name,
            value,
            grad,
            trainable,
        });
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Array {
        &self.params[id.0].value
    }

    pub fn by_name(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Resets every gradient buffer to zero.
    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Adds `grads` into the per-parameter gradient buffers. Parameters the
    /// tape never touched are left as they are (zero after a reset).
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (id, g) in grads.iter() {
            self.params[id.0].grad.axpy(1.0, g);
        }
    }

    /// Total number of scalar entries across all trainable parameters.
    pub fn trainable_numel(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.numel())
            .sum()
    }
}

/// Gradients produced by one backward pass, keyed by parameter id.
#[derive(Debug, Clone)]
pub struct Gradients {
    slots: Vec<Option<Array>>,
}

impl Gradients {
    pub fn new(n_params: usize) -> Self {
        Gradients {
            slots: vec![None; n_params],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Array> {
        self.slots.get(id.0).and_then(|s| s.as_ref())
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, g: &Array) {
        match &mut self.slots[id.0] {
            Some(existing) => existing.axpy(1.0, g),
            slot => *slot = Some(g.clone()),
        }
    }

    /// Adds another gradient set into this one. Used when per-sample
    /// gradients are reduced in a fixed order across a batch.
    pub fn merge(&mut self, other: &Gradients) {
        assert_eq!(self.slots.len(), other.slots.len());
        for (i, g) in other.slots.iter().enumerate() {
            if let Some(g) = g {
                match &mut self.slots[i] {
                    Some(existing) => existing.axpy(1.0, g),
                    slot => *slot = Some(g.clone()),
                }
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for slot in self.slots.iter_mut().flatten() {
            for v in slot.data_mut() {
                *v *= c;
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Array)> {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.as_ref().map(|g| (ParamId(i), g)))
    }

    /// Gradient for `id`, or a zero array of the given shape if the
    /// parameter never appeared on the tape.
    pub fn get_or_zeros(&self, id: ParamId, shape: &[usize]) -> Array {
        match self.get(id) {
            Some(g) => g.clone(),
            None => Array::zeros(shape),
        }
    }

    pub fn bits_equal(&self, other: &Gradients) -> bool {
        if self.slots.len() != other.slots.len() {
            return false;
        }
        self.slots.iter().zip(&other.slots).all(|(a, b)| match (a, b) {
            (None, None) => true,
            (Some(a), Some(b)) => {
                a.shape() == b.shape()
                    && a.data()
                        .iter()
                        .zip(b.data())
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            }
            _ => false,
        })
    }
}

/// Fails when any parameter value or gradient is non-finite.
pub fn ensure_finite(store: &ParamStore) -> Result<()> {
    for (_, p) in store.iter() {
        if !p.value.is_finite() {
            return Err(Error::NonFinite(format!("parameter {}", p.name)));
        }
    }
    Ok(())
}
