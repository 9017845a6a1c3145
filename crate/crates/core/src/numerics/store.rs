use std::collections::{BTreeMap, BTreeSet};

use super::tensor::{add_in_place, Tensor};
use crate::error::{Error, Result};
use crate::Real;

pub const ADAM_BETA1: Real = 0.9;
pub const ADAM_BETA2: Real = 0.999;
pub const ADAM_EPS: Real = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Real>,
    pub v: Vec<Real>,
    pub step: u64,
}

/// Named parameters with per-parameter trainable flags and Adam moments.
///
/// Iteration is lexicographic by name. Optimizer state only ever exists for
/// parameters that are currently trainable; freezing a parameter drops it.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterStore {
    entries: BTreeMap<String, Tensor>,
    trainable: BTreeMap<String, bool>,
    optimizer_state: BTreeMap<String, AdamState>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor, trainable: bool) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::State(format!("duplicate parameter `{name}`")));
        }
        self.trainable.insert(name.clone(), trainable);
        self.entries.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::State(format!("unknown parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::State(format!("unknown parameter `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.trainable.get(name).copied().unwrap_or(false)
    }

    pub fn trainable_names(&self) -> impl Iterator<Item = &str> {
        self.trainable.iter().filter(|(_, &t)| t).map(|(k, _)| k.as_str())
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<()> {
        let flag = self
            .trainable
            .get_mut(name)
            .ok_or_else(|| Error::State(format!("unknown parameter `{name}`")))?;
        *flag = trainable;
        if !trainable {
            self.optimizer_state.remove(name);
        }
        Ok(())
    }

    pub fn optimizer_state(&self, name: &str) -> Option<&AdamState> {
        self.optimizer_state.get(name)
    }

    pub fn optimizer_states(&self) -> impl Iterator<Item = (&str, &AdamState)> {
        self.optimizer_state.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub(crate) fn restore_optimizer_state(&mut self, name: &str, state: AdamState) -> Result<()> {
        if !self.is_trainable(name) {
            return Err(Error::State(format!(
                "optimizer state for non-trainable parameter `{name}`"
            )));
        }
        self.optimizer_state.insert(name.to_string(), state);
        Ok(())
    }

    pub fn reset_optimizer(&mut self) {
        self.optimizer_state.clear();
    }

    pub fn clear_grads(&mut self) {
        self.entries.values_mut().for_each(Tensor::clear_grad);
    }

    /// Adds `scale * grads` into the matching parameters' accumulators.
    pub fn accumulate(&mut self, grads: &GradBuffer, scale: Real) -> Result<()> {
        for (name, g) in &grads.grads {
            self.get_mut(name)?.accumulate_grad(g, scale)?;
        }
        Ok(())
    }

    /// Copies parameter values (not flags or optimizer state) from `other`.
    pub fn copy_values_from(&mut self, other: &ParameterStore) -> Result<()> {
        for (name, t) in &other.entries {
            let dst = self.get_mut(name)?;
            if dst.shape() != t.shape() {
                return Err(Error::dim(name.clone(), "shape differs between stores"));
            }
            dst.data_mut().copy_from_slice(t.data());
        }
        Ok(())
    }

    /// Largest absolute elementwise difference across all shared parameters.
    pub fn max_abs_diff(&self, other: &ParameterStore) -> Real {
        self.entries
            .iter()
            .filter_map(|(k, t)| other.entries.get(k).map(|o| t.max_abs_diff(o)))
            .fold(0.0, Real::max)
    }

    /// Bit-exact comparison of parameter values.
    pub fn values_bit_identical(&self, other: &ParameterStore, name: &str) -> bool {
        match (self.entries.get(name), other.entries.get(name)) {
            (Some(a), Some(b)) => {
                a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            _ => false,
        }
    }
}

/// Scratch gradients produced by one backward pass.
///
/// Only names in the requested set are collected, so backward passes can skip
/// weight gradients for frozen parameters.
#[derive(Clone, Debug, Default)]
pub struct GradBuffer {
    requested: BTreeSet<String>,
    grads: BTreeMap<String, Vec<Real>>,
}

impl GradBuffer {
    /// Requests every trainable parameter, pre-filled with zeros.
    pub fn for_trainable(store: &ParameterStore) -> Self {
        let mut buf = Self::default();
        for name in store.trainable_names() {
            buf.requested.insert(name.to_string());
            let n = store.entries[name].numel();
            buf.grads.insert(name.to_string(), vec![0.0; n]);
        }
        buf
    }

    /// Requests nothing; backward passes then only propagate input gradients.
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn wants(&self, name: &str) -> bool {
        self.requested.contains(name)
    }

    /// Any requested name starting with `prefix`.
    pub fn wants_prefix(&self, prefix: &str) -> bool {
        self.requested
            .range(prefix.to_string()..)
            .next()
            .is_some_and(|n| n.starts_with(prefix))
    }

    pub fn add(&mut self, name: &str, g: &[Real]) {
        if let Some(acc) = self.grads.get_mut(name) {
            add_in_place(acc, g);
        }
    }

    pub fn get(&self, name: &str) -> Option<&[Real]> {
        self.grads.get(name).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[Real])> {
        self.grads.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn all_finite(&self) -> bool {
        self.grads.values().all(|g| g.iter().all(|v| v.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParameterStore {
        let mut s = ParameterStore::new();
        s.insert("b.w", Tensor::zeros(&[2]), true).unwrap();
        s.insert("a.w", Tensor::zeros(&[3]), false).unwrap();
        s
    }

    #[test]
    fn iteration_is_lexicographic_and_names_unique() {
        let mut s = store();
        assert_eq!(s.names().collect::<Vec<_>>(), vec!["a.w", "b.w"]);
        assert!(s.insert("a.w", Tensor::zeros(&[1]), true).is_err());
    }

    #[test]
    fn grad_buffer_only_collects_requested() {
        let s = store();
        let mut buf = GradBuffer::for_trainable(&s);
        assert!(buf.wants("b.w") && !buf.wants("a.w"));
        assert!(buf.wants_prefix("b.") && !buf.wants_prefix("a."));
        buf.add("a.w", &[1.0, 1.0, 1.0]);
        buf.add("b.w", &[1.0, 2.0]);
        assert!(buf.get("a.w").is_none());
        assert_eq!(buf.get("b.w").unwrap(), &[1.0, 2.0]);
    }

    #[test]
    fn freezing_drops_optimizer_state() {
        let mut s = store();
        s.restore_optimizer_state(
            "b.w",
            AdamState {
                m: vec![0.0; 2],
                v: vec![0.0; 2],
                step: 1,
            },
        )
        .unwrap();
        assert!(s
            .restore_optimizer_state(
                "a.w",
                AdamState {
                    m: vec![],
                    v: vec![],
                    step: 0
                }
            )
            .is_err());
        s.set_trainable("b.w", false).unwrap();
        assert!(s.optimizer_state("b.w").is_none());
    }
}
