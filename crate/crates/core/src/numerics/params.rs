use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::graph::{Gradients, Graph};
use crate::numerics::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    value: Tensor,
    grad: Tensor,
}

/// Named parameters with gradient accumulators of matching shape.
///
/// Names are dotted paths (`video.conv1.weight`); iteration order is the
/// lexicographic order of names, which fixes every reduction order downstream.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, Entry>,
}

/// Gradients keyed by parameter name, detached from any store.
pub type GradMap = BTreeMap<String, Tensor>;

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::ParamMismatch(format!("duplicate parameter {name}")));
        }
        let grad = Tensor::zeros(value.shape());
        self.entries.insert(name, Entry { value, grad });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.entries.values().map(|e| e.value.len()).sum()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn value(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name).map(|e| &e.value)
    }

    pub fn value_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name).map(|e| &mut e.value)
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name).map(|e| &e.grad)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, e)| (k.as_str(), &e.value))
    }

    pub fn grads(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, e)| (k.as_str(), &e.grad))
    }

    pub(crate) fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor, &Tensor)> {
        self.entries
            .iter_mut()
            .map(|(k, e)| (k.as_str(), &mut e.value, &e.grad))
    }

    pub fn zero_grads(&mut self) {
        for e in self.entries.values_mut() {
            e.grad.data_mut().fill(0.0);
        }
    }

    /// Adds the parameter gradients of one backward pass.
    pub fn accumulate(&mut self, graph: &Graph, grads: &Gradients) -> Result<()> {
        for (name, g) in graph.param_grads(grads) {
            self.accumulate_named(name, g)?;
        }
        Ok(())
    }

    pub fn accumulate_named(&mut self, name: &str, g: &Tensor) -> Result<()> {
        let entry = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::ParamMismatch(format!("unknown parameter {name}")))?;
        if entry.grad.shape() != g.shape() {
            return Err(Error::ParamMismatch(format!(
                "{name}: gradient {:?} vs parameter {:?}",
                g.shape(),
                entry.grad.shape()
            )));
        }
        entry.grad.add_assign(g);
        Ok(())
    }

    pub fn accumulate_map(&mut self, grads: &GradMap) -> Result<()> {
        for (name, g) in grads {
            self.accumulate_named(name, g)?;
        }
        Ok(())
    }

    /// Parameters whose name starts with `prefix`.
    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.names().filter(move |n| n.starts_with(prefix))
    }

    /// Inserts every parameter of `other`; names must not collide.
    pub fn merge_from(&mut self, other: &ParamStore) -> Result<()> {
        for (name, value) in other.iter() {
            self.insert(name, value.clone())?;
        }
        Ok(())
    }

    /// Subset of parameters whose name starts with `prefix`.
    pub fn subset(&self, prefix: &str) -> ParamStore {
        let entries = self
            .entries
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(k, e)| (k.clone(), e.clone()))
            .collect();
        ParamStore { entries }
    }

    /// Rounds every value through `f32`.
    pub fn round_to_f32(&mut self) {
        for e in self.entries.values_mut() {
            e.value.round_to_f32();
        }
    }
}

/// Collects the parameter gradients of one graph into a detached map.
pub fn collect_grads(graph: &Graph, grads: &Gradients) -> GradMap {
    let mut out = GradMap::new();
    for (name, g) in graph.param_grads(grads) {
        match out.get_mut(name) {
            Some(acc) => acc.add_assign(g),
            None => {
                out.insert(name.to_string(), g.clone());
            }
        }
    }
    out
}
