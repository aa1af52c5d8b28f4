use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;
use crate::scalar::Scalar;

/// Handle into a [`ParameterSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    /// Present iff the entry is trainable. Running statistics and other
    /// buffers carry no gradient.
    pub grad: Option<Tensor<T>>,
}

impl<T: Scalar> Param<T> {
    pub fn trainable(&self) -> bool {
        self.grad.is_some()
    }
}

/// Named parameters in insertion order.
#[derive(Debug, Clone, Default)]
pub struct ParameterSet<T> {
    entries: Vec<Param<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParameterSet<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    fn insert(&mut self, name: &str, value: Tensor<T>, trainable: bool) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::invalid(format!("duplicate parameter name `{name}`")));
        }
        let id = self.entries.len();
        let grad = trainable.then(|| Tensor::zeros(value.shape()));
        self.entries.push(Param {
            name: name.to_string(),
            value,
            grad,
        });
        self.index.insert(name.to_string(), id);
        Ok(ParamId(id))
    }

    /// Registers a trainable tensor.
    pub fn add(&mut self, name: &str, value: Tensor<T>) -> Result<ParamId> {
        self.insert(name, value, true)
    }

    /// Registers a non-trainable buffer (e.g. batch-norm running statistics).
    pub fn add_buffer(&mut self, name: &str, value: Tensor<T>) -> Result<ParamId> {
        self.insert(name, value, false)
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index
            .get(name)
            .map(|&i| ParamId(i))
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.entries[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.entries[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.entries[id.0].grad.as_ref()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.entries.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    /// Trainable parameters whose name starts with `prefix`.
    pub fn trainable_with_prefix(&self, prefix: &str) -> Vec<ParamId> {
        self.iter()
            .filter(|(_, p)| p.trainable() && p.name.starts_with(prefix))
            .map(|(id, _)| id)
            .collect()
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.iter()
            .filter(|(_, p)| p.trainable())
            .map(|(id, _)| id)
            .collect()
    }

    pub fn num_trainable_values(&self) -> usize {
        self.entries
            .iter()
            .filter(|p| p.trainable())
            .map(|p| p.value.numel())
            .sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.entries {
            if let Some(g) = &mut p.grad {
                g.fill(T::zero());
            }
        }
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, delta: &[T]) {
        if let Some(g) = &mut self.entries[id.0].grad {
            for (a, &d) in g.data_mut().iter_mut().zip(delta) {
                *a += d;
            }
        }
    }

    /// Overwrites buffer values produced during a training-mode forward pass.
    pub fn apply_buffer_updates(&mut self, updates: Vec<(ParamId, Tensor<T>)>) {
        for (id, value) in updates {
            self.entries[id.0].value = value;
        }
    }

    /// Replaces values from `other` for every name present in both sets.
    pub fn load_values_from(&mut self, other: &ParameterSet<T>) -> Result<()> {
        for p in &mut self.entries {
            let src = other
                .index
                .get(&p.name)
                .map(|&i| &other.entries[i])
                .ok_or_else(|| Error::UnknownParameter(p.name.clone()))?;
            if src.value.shape() != p.value.shape() {
                return Err(Error::shape(
                    "load_values_from",
                    format!(
                        "`{}`: {:?} vs {:?}",
                        p.name,
                        p.value.shape(),
                        src.value.shape()
                    ),
                ));
            }
            p.value = src.value.clone();
        }
        Ok(())
    }
}
