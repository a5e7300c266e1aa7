//! Named parameter storage shared by layers, the optimizer, and checkpoints.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numcore::tensor::Tensor;

/// Handle to one parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    /// Position of this parameter in registration order.
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
struct Param {
    name: String,
    value: Tensor,
}

/// Flat registry of named parameter tensors.
///
/// Layers register their weights here at construction and keep only
/// [`ParamId`] handles; the optimizer and checkpoint code walk the store by
/// name. Registration order is deterministic, so a fixed seed yields a
/// byte-identical initial model.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor under a unique name and returns its handle.
    pub fn add(&mut self, name: impl Into<String>, mut value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(
            self.params.iter().all(|p| p.name != name),
            "duplicate parameter name {name}"
        );
        value.requires_grad = true;
        value.grad = None;
        self.params.push(Param { name, value });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    /// Looks a parameter up by name.
    pub fn id_by_name(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// All parameter ids in registration order.
    pub fn ids(&self) -> Vec<ParamId> {
        (0..self.params.len()).map(ParamId).collect()
    }

    /// Ids of parameters whose name starts with any of the given prefixes.
    pub fn ids_with_prefix(&self, prefixes: &[&str]) -> Vec<ParamId> {
        (0..self.params.len())
            .filter(|i| prefixes.iter().any(|p| self.params[*i].name.starts_with(p)))
            .map(ParamId)
            .collect()
    }

    /// Clears every gradient buffer.
    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.value.grad = None;
        }
    }

    /// Adds `delta` into the gradient buffer of `id`.
    pub fn accumulate_grad(&mut self, id: ParamId, delta: &[f64]) {
        let value = &mut self.params[id.0].value;
        debug_assert_eq!(delta.len(), value.data.len());
        let grad = value
            .grad
            .get_or_insert_with(|| vec![0.0; value.data.len()]);
        for (g, d) in grad.iter_mut().zip(delta) {
            *g += d;
        }
    }

    /// Total scalar count across all parameters.
    pub fn total_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Snapshot of all parameters, sorted by name, for serialization.
    pub fn export(&self) -> BTreeMap<String, Tensor> {
        self.params
            .iter()
            .map(|p| {
                let mut t = p.value.clone();
                t.grad = None;
                (p.name.clone(), t)
            })
            .collect()
    }

    /// Overwrites parameter values from an exported snapshot. Every entry in
    /// the store must be present with a matching shape.
    pub fn import(&mut self, snapshot: &BTreeMap<String, Tensor>) -> Result<()> {
        for p in &mut self.params {
            let src = snapshot.get(&p.name).ok_or_else(|| {
                Error::data(format!("checkpoint missing parameter `{}`", p.name))
            })?;
            if src.shape != p.value.shape {
                return Err(Error::DimMismatch {
                    op: "ParamStore::import",
                    lhs: p.value.shape.clone(),
                    rhs: src.shape.clone(),
                });
            }
            p.value.data = src.data.clone();
            p.value.grad = None;
        }
        Ok(())
    }
}
