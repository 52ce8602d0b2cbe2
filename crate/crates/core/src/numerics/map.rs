use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

/// Parameter id → tensor, iterated in key order so that flattening and CSV
/// output are deterministic.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TensorMap(BTreeMap<String, Tensor>);

/// Gradients (or weight deltas) keyed by parameter id.
pub type GradientSet = TensorMap;
/// Trainable parameters keyed by id.
pub type ParamSet = TensorMap;

impl TensorMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, value: Tensor) -> Option<Tensor> {
        self.0.insert(id.into(), value)
    }

    pub fn get(&self, id: &str) -> Option<&Tensor> {
        self.0.get(id)
    }

    pub fn require(&self, id: &str) -> Result<&Tensor> {
        self.0
            .get(id)
            .ok_or_else(|| Error::UnknownParameter(id.to_string()))
    }

    pub fn get_mut(&mut self, id: &str) -> Option<&mut Tensor> {
        self.0.get_mut(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.0.contains_key(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.0.iter()
    }

    pub fn keys(&self) -> impl Iterator<Item = &String> {
        self.0.keys()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn same_keys(&self, other: &Self) -> bool {
        self.0.keys().eq(other.0.keys())
    }

    /// Zero tensors with the same ids and shapes.
    pub fn zeros_like(&self) -> Self {
        Self(
            self.0
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect(),
        )
    }

    fn check_compatible(&self, other: &Self, op: &'static str) -> Result<()> {
        for (k, v) in &self.0 {
            let o = other.require(k)?;
            if o.shape() != v.shape() {
                return Err(Error::Shape {
                    op,
                    left: v.shape().to_vec(),
                    right: o.shape().to_vec(),
                });
            }
        }
        if self.len() != other.len() {
            let extra = other.keys().find(|k| !self.contains(k)).cloned();
            return Err(Error::UnknownParameter(extra.unwrap_or_default()));
        }
        Ok(())
    }

    /// `self + c · other`, entry by entry.
    pub fn add_scaled(&self, other: &Self, c: f64) -> Result<Self> {
        self.check_compatible(other, "add_scaled")?;
        self.0
            .iter()
            .map(|(k, v)| Ok((k.clone(), v.add(&other.0[k].scale(c)?)?)))
            .collect::<Result<BTreeMap<_, _>>>()
            .map(Self)
    }

    pub fn scale(&self, c: f64) -> Result<Self> {
        self.0
            .iter()
            .map(|(k, v)| Ok((k.clone(), v.scale(c)?)))
            .collect::<Result<BTreeMap<_, _>>>()
            .map(Self)
    }

    pub fn map(&self, f: impl Fn(&str, &Tensor) -> Result<Tensor>) -> Result<Self> {
        self.0
            .iter()
            .map(|(k, v)| Ok((k.clone(), f(k, v)?)))
            .collect::<Result<BTreeMap<_, _>>>()
            .map(Self)
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.check_compatible(other, "dot")?;
        self.0.iter().map(|(k, v)| v.dot(&other.0[k])).sum()
    }

    pub fn norm(&self) -> f64 {
        self.0.values().map(|v| v.norm().powi(2)).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.values().fold(0.0, |m, v| m.max(v.max_abs()))
    }

    pub fn num_values(&self) -> usize {
        self.0.values().map(Tensor::len).sum()
    }

    /// All values concatenated in key order.
    pub fn flatten(&self) -> Vec<f64> {
        self.0.values().flat_map(|v| v.data().iter().copied()).collect()
    }

    /// Inverse of [`TensorMap::flatten`], using `self` as the shape template.
    pub fn unflatten(&self, values: &[f64]) -> Result<Self> {
        if values.len() != self.num_values() {
            return Err(Error::Shape {
                op: "unflatten",
                left: vec![self.num_values()],
                right: vec![values.len()],
            });
        }
        let mut offset = 0;
        let mut out = BTreeMap::new();
        for (k, v) in &self.0 {
            let n = v.len();
            out.insert(
                k.clone(),
                Tensor::new(v.shape().to_vec(), values[offset..offset + n].to_vec())?,
            );
            offset += n;
        }
        Ok(Self(out))
    }
}

impl FromIterator<(String, Tensor)> for TensorMap {
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

impl<'a> IntoIterator for &'a TensorMap {
    type Item = (&'a String, &'a Tensor);
    type IntoIter = std::collections::btree_map::Iter<'a, String, Tensor>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}
