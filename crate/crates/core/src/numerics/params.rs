use super::{Float, Gradients, Tensor};
use crate::error::{contract, Result};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of trainable tensors.
///
/// Networks hold [`ParamId`]s into a store rather than owning their weights,
/// so one store can be checkpointed, optimized, or cast to another precision
/// as a unit.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore<F: Float = f32> {
    names: Vec<String>,
    tensors: Vec<Tensor<F>>,
}

impl<F: Float> ParamStore<F> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    /// Registers a tensor under `name`. Panics on duplicate names, which is
    /// always a construction bug.
    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<F>) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.tensors.push(tensor.with_grad());
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<F>] {
        &mut self.tensors
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Replaces a parameter's values, keeping its shape.
    pub fn assign(&mut self, id: ParamId, values: &Tensor<F>) -> Result<()> {
        let slot = &mut self.tensors[id.0];
        contract!(
            slot.shape() == values.shape(),
            "parameter {} has shape {:?}, got {:?}",
            self.names[id.0],
            slot.shape(),
            values.shape()
        );
        slot.data_mut().copy_from_slice(values.data());
        Ok(())
    }

    /// Writes the gradients of one backward pass into every parameter.
    /// Parameters that did not take part in the graph get zero gradient.
    pub fn set_grads(&mut self, grads: &Gradients<F>) {
        for (i, t) in self.tensors.iter_mut().enumerate() {
            let g = grads
                .param(ParamId(i))
                .map(|g| g.data().to_vec())
                .unwrap_or_else(|| vec![F::zero(); t.len()]);
            t.grad = Some(g);
        }
    }

    pub fn zero_grads(&mut self) {
        for t in &mut self.tensors {
            t.grad = None;
        }
    }

    pub fn cast<G: Float>(&self) -> ParamStore<G> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }
}
