//! Named parameter storage with deterministic (lexicographic) iteration.

use std::collections::BTreeMap;

use crate::element::Element;
use crate::error::{CoreError, Result};
use crate::tensor::Tensor;

/// Map from parameter path (e.g. `local.3.msa.wq`) to tensor.
///
/// Backed by a BTreeMap so iteration order is lexicographic and stable,
/// which the optimizer, checkpoint writer, and gradient checks all rely on.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T: Element> {
    entries: BTreeMap<String, Tensor<T>>,
}

impl<T: Element> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: BTreeMap::new(),
        }
    }

    /// Insert a parameter; the name must be new.
    pub fn insert(&mut self, name: impl Into<String>, mut tensor: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(CoreError::Contract {
                op: "ParamStore::insert",
                detail: format!("duplicate parameter name {name:?}"),
            });
        }
        tensor.set_requires_grad(true);
        self.entries.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.entries.get(name).ok_or_else(|| CoreError::Contract {
            op: "ParamStore::get",
            detail: format!("unknown parameter {name:?}"),
        })
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| CoreError::Contract {
                op: "ParamStore::get_mut",
                detail: format!("unknown parameter {name:?}"),
            })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total element count over all parameters.
    pub fn numel(&self) -> usize {
        self.entries.values().map(Tensor::numel).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Zero tensors with the same names and shapes.
    pub fn zeros_like(&self) -> ParamStore<T> {
        let entries = self
            .entries
            .iter()
            .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
            .collect();
        ParamStore { entries }
    }

    pub fn all_finite(&self) -> bool {
        self.entries.values().all(Tensor::all_finite)
    }
}
