//! Named parameter storage and per-forward tape bindings.
//!
//! Parameters live outside any tape. Each forward pass binds them as leaves
//! on a fresh tape; after backward, gradients are read back through the
//! binding table in insertion order, which keeps reductions deterministic.

use std::collections::HashMap;

use crate::scalar::Scalar;
use crate::tape::{GradStore, Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

struct Entry<T> {
    name: String,
    tensor: Tensor<T>,
    trainable: bool,
}

/// Ordered collection of named tensors: trainable parameters plus
/// non-trainable buffers (running statistics and the like).
pub struct ParamSet<T> {
    entries: Vec<Entry<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor<T>, trainable: bool) -> ParamId {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name {name}"
        );
        let id = ParamId(self.entries.len());
        self.index.insert(name.to_string(), id.0);
        self.entries.push(Entry {
            name: name.to_string(),
            tensor,
            trainable,
        });
        id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].tensor
    }

    pub fn set(&mut self, id: ParamId, tensor: Tensor<T>) {
        assert_eq!(self.entries[id.0].tensor.shape(), tensor.shape());
        self.entries[id.0].tensor = tensor;
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn trainable_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.trainable)
            .map(|(i, _)| ParamId(i))
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        let mut out = ParamSet::new();
        for e in &self.entries {
            out.insert(&e.name, e.tensor.cast::<U>(), e.trainable);
        }
        out
    }

    /// Total element count over trainable entries.
    pub fn trainable_numel(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.tensor.numel())
            .sum()
    }
}

/// Tape vars for bound parameters, indexed by [`ParamId`].
pub struct Bindings {
    vars: Vec<Option<Var>>,
}

impl Bindings {
    /// Bind every parameter as a leaf on the tape. Trainable entries require
    /// gradients. An optional override substitutes an existing var for one
    /// parameter (used by the finite-difference harness).
    pub fn bind_all<T: Scalar>(
        tape: &Tape<T>,
        params: &ParamSet<T>,
        override_var: Option<(ParamId, Var)>,
    ) -> Bindings {
        let mut vars = Vec::with_capacity(params.len());
        for id in params.ids() {
            if let Some((oid, v)) = override_var {
                if oid == id {
                    vars.push(Some(v));
                    continue;
                }
            }
            let v = tape.leaf(params.get(id).clone(), params.is_trainable(id));
            vars.push(Some(v));
        }
        Bindings { vars }
    }

    /// Bind every parameter as a non-differentiable constant; used by
    /// evaluation paths where no backward pass will run.
    pub fn bind_frozen<T: Scalar>(tape: &Tape<T>, params: &ParamSet<T>) -> Bindings {
        Self::bind_frozen_override(tape, params, None)
    }

    /// Frozen bindings with one parameter's value substituted (the
    /// finite-difference harness perturbs coordinates this way).
    pub fn bind_frozen_override<T: Scalar>(
        tape: &Tape<T>,
        params: &ParamSet<T>,
        override_tensor: Option<(ParamId, &Tensor<T>)>,
    ) -> Bindings {
        let mut vars = Vec::with_capacity(params.len());
        for id in params.ids() {
            let tensor = match override_tensor {
                Some((oid, t)) if oid == id => t.clone(),
                _ => params.get(id).clone(),
            };
            vars.push(Some(tape.constant(tensor)));
        }
        Bindings { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0].expect("parameter not bound")
    }

    /// Gradient for a bound parameter; zeros when it is off the loss path.
    pub fn grad_of<T: Scalar>(
        &self,
        store: &GradStore<T>,
        params: &ParamSet<T>,
        id: ParamId,
    ) -> Tensor<T> {
        store.or_zeros(self.var(id), params.get(id).shape())
    }
}
