use std::collections::HashMap;

use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tensor::Tensor;

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// One named trainable tensor plus its gradient accumulator.
#[derive(Clone, Debug)]
pub struct ParamEntry<F: Real> {
    pub name: String,
    pub value: Tensor<F>,
    pub grad: Tensor<F>,
    pub trainable: bool,
    /// Embedding tables reserve row 0 for padding; it stays all-zero and
    /// is never updated by the optimizer.
    pub freeze_row0: bool,
}

/// Owns every parameter of a model. Parameters are registered once, in a
/// fixed order, which makes optimizer traversal and checkpoint layout
/// deterministic.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<F: Real> {
    entries: Vec<ParamEntry<F>>,
    by_name: HashMap<String, usize>,
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<F>) -> Result<ParamId> {
        self.add_with(name, value, true, false)
    }

    pub fn add_with(
        &mut self,
        name: impl Into<String>,
        value: Tensor<F>,
        trainable: bool,
        freeze_row0: bool,
    ) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(TensorError::DuplicateParam { name });
        }
        let grad = Tensor::zeros(value.shape());
        let id = ParamId(self.entries.len());
        self.by_name.insert(name.clone(), id.0);
        self.entries.push(ParamEntry {
            name,
            value,
            grad,
            trainable,
            freeze_row0,
        });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn id_of(&self, name: &str) -> Result<ParamId> {
        self.by_name
            .get(name)
            .map(|&i| ParamId(i))
            .ok_or_else(|| TensorError::UnknownParam {
                name: name.to_string(),
            })
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<F> {
        &self.entries[id.0]
    }

    pub fn entry_mut(&mut self, id: ParamId) -> &mut ParamEntry<F> {
        &mut self.entries[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<F> {
        &self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<F> {
        &self.entries[id.0].grad
    }

    pub fn entries(&self) -> &[ParamEntry<F>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry<F>] {
        &mut self.entries
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            for g in e.grad.data_mut() {
                *g = F::ZERO;
            }
        }
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, delta: &[F]) {
        let g = self.entries[id.0].grad.data_mut();
        debug_assert_eq!(g.len(), delta.len());
        for (gi, di) in g.iter_mut().zip(delta) {
            *gi += *di;
        }
    }

    pub(crate) fn accumulate_grad_row(&mut self, id: ParamId, row: usize, delta: &[F]) {
        let cols = self.entries[id.0].grad.cols();
        debug_assert_eq!(cols, delta.len());
        let g = &mut self.entries[id.0].grad.data_mut()[row * cols..(row + 1) * cols];
        for (gi, di) in g.iter_mut().zip(delta) {
            *gi += *di;
        }
    }
}
