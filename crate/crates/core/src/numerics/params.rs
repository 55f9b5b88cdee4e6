use std::collections::BTreeMap;

use super::RealArray;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
struct Entry {
    weight: RealArray,
    grad: Option<Vec<f64>>,
}

/// Named weights with a parallel `f64` gradient slot per entry.
///
/// Iteration order is lexicographic by name, so serialization and
/// optimizer updates are deterministic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, Entry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, weight: RealArray) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter `{name}`")));
        }
        if !weight.is_finite() {
            return Err(Error::NonFinite(format!("parameter `{name}`")));
        }
        self.entries.insert(name.to_string(), Entry { weight, grad: None });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&RealArray> {
        self.entries.get(name).map(|e| &e.weight)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut RealArray> {
        self.entries.get_mut(name).map(|e| &mut e.weight)
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

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &RealArray)> {
        self.entries.iter().map(|(k, e)| (k.as_str(), &e.weight))
    }

    /// Total scalar count across all weights.
    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|e| e.weight.len()).sum()
    }

    pub fn grad(&self, name: &str) -> Option<&[f64]> {
        self.entries.get(name).and_then(|e| e.grad.as_deref())
    }

    pub fn zero_grads(&mut self) {
        for e in self.entries.values_mut() {
            e.grad = None;
        }
    }

    pub fn accumulate_grad(&mut self, name: &str, g: impl ExactSizeIterator<Item = f64>) -> Result<()> {
        let e = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter `{name}`")))?;
        if g.len() != e.weight.len() {
            return Err(Error::shape(name, e.weight.len(), g.len()));
        }
        let slot = e.grad.get_or_insert_with(|| vec![0.0; e.weight.len()]);
        for (s, v) in slot.iter_mut().zip(g) {
            *s += v;
        }
        Ok(())
    }

    /// Multiplies every present gradient by `c`.
    pub fn scale_grads(&mut self, c: f64) {
        for g in self.entries.values_mut().filter_map(|e| e.grad.as_mut()) {
            g.iter_mut().for_each(|v| *v *= c);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.entries
            .values()
            .filter_map(|e| e.grad.as_ref())
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Weights and gradient slots, mutably, for optimizer updates.
    pub(crate) fn entries_mut(&mut self) -> impl Iterator<Item = (&str, &mut RealArray, Option<&Vec<f64>>)> {
        self.entries
            .iter_mut()
            .map(|(k, e)| (k.as_str(), &mut e.weight, e.grad.as_ref()))
    }

    /// True when both stores hold the same names, shapes and bit patterns.
    pub fn bitwise_eq(&self, other: &ParamStore) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|((ka, a), (kb, b))| {
                ka == kb
                    && a.weight.shape() == b.weight.shape()
                    && a.weight
                        .data()
                        .iter()
                        .zip(b.weight.data())
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}
