//! Named parameter collections.
//!
//! A [`LayerStack`] owns every trainable tensor of one network under
//! stable names of the form `component.layer.kind` (e.g.
//! `genG.enc0.weight`). The checkpoint format and the optimizer both
//! depend on the insertion order staying fixed.

use crate::kernels::Scalar;
use crate::tape::{Binding, Gradients, Tape};
use crate::tensor::Tensor;
use std::collections::HashMap;

pub struct Param {
    pub name: String,
    pub tensor: Tensor,
}

pub struct LayerStack {
    component: String,
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

impl LayerStack {
    pub fn new(component: impl Into<String>) -> Self {
        LayerStack {
            component: component.into(),
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn component(&self) -> &str {
        &self.component
    }

    /// Registers a trainable tensor under `component.name` and returns its
    /// slot index.
    pub fn add(&mut self, name: &str, tensor: Tensor) -> usize {
        let full = format!("{}.{}", self.component, name);
        assert!(
            !self.index.contains_key(&full),
            "duplicate parameter name {full}"
        );
        let idx = self.params.len();
        self.index.insert(full.clone(), idx);
        self.params.push(Param {
            name: full,
            tensor: tensor.trainable(),
        });
        idx
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, idx: usize) -> &Tensor {
        &self.params[idx].tensor
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Tensor {
        &mut self.params[idx].tensor
    }

    pub fn by_name(&self, full_name: &str) -> Option<&Tensor> {
        self.index.get(full_name).map(|&i| &self.params[i].tensor)
    }

    pub fn by_name_mut(&mut self, full_name: &str) -> Option<&mut Tensor> {
        let i = *self.index.get(full_name)?;
        Some(&mut self.params[i].tensor)
    }

    pub fn params(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.params.iter_mut().map(|p| &mut p.tensor)
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.shape().len()).sum()
    }

    pub fn clear_grads(&mut self) {
        for p in &mut self.params {
            p.tensor.clear_grad();
        }
    }

    /// Inserts every parameter as a tape leaf, in slot order.
    pub fn bind<T: Scalar>(&self, tape: &mut Tape<T>) -> Binding {
        Binding::new(self.params.iter().map(|p| tape.leaf_tensor(&p.tensor)))
    }

    /// Harvests gradients of this stack's leaves from a backward pass into
    /// the parameters' gradient buffers.
    pub fn accumulate_grads<T: Scalar>(&mut self, binding: &Binding, grads: &mut Gradients<T>) {
        for (idx, p) in self.params.iter_mut().enumerate() {
            if let Some(g) = grads.take(binding.var(idx)) {
                p.tensor.accumulate_grad_from(&g);
            }
        }
    }
}
