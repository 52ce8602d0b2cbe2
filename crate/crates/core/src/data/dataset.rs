use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{invalid, Result};
use crate::numerics::Tensor;

/// Labelled examples; `inputs` is `[N × T × D]` for sequences or `[N × D]`
/// for flat vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub class_count: usize,
}

/// A minibatch with the same layout as [`Dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

impl Dataset {
    pub fn new(inputs: Tensor, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if inputs.rank() < 2 || inputs.rows() != labels.len() {
            return Err(invalid(format!(
                "{} labels for inputs of shape {:?}",
                labels.len(),
                inputs.shape()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(invalid(format!(
                "label {bad} out of range for {class_count} classes"
            )));
        }
        Ok(Self {
            inputs,
            labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Examples at `indices`, in that order.
    pub fn gather(&self, indices: &[usize]) -> Result<Batch> {
        let row: usize = self.inputs.shape()[1..].iter().product();
        let mut data = Vec::with_capacity(indices.len() * row);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(invalid(format!("index {i} out of range for {} examples", self.len())));
            }
            data.extend_from_slice(&self.inputs.data()[i * row..(i + 1) * row]);
            labels.push(self.labels[i]);
        }
        let mut shape = self.inputs.shape().to_vec();
        shape[0] = indices.len();
        Ok(Batch {
            inputs: Tensor::new(shape, data)?,
            labels,
        })
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let b = self.gather(indices)?;
        Ok(Dataset {
            inputs: b.inputs,
            labels: b.labels,
            class_count: self.class_count,
        })
    }

    /// First `n` examples (or all of them).
    pub fn take(&self, n: usize) -> Result<Dataset> {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    pub fn as_batch(&self) -> Batch {
        Batch {
            inputs: self.inputs.clone(),
            labels: self.labels.clone(),
        }
    }

    /// Index batches covering every example exactly once, shuffled by `rng`.
    pub fn batch_indices(&self, batch_size: usize, rng: &mut impl Rng) -> Result<Vec<Vec<usize>>> {
        if batch_size == 0 {
            return Err(invalid("batch size must be at least 1"));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(rng);
        Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
    }

    /// In-order batches, for evaluation.
    pub fn sequential_batches(&self, batch_size: usize) -> Result<Vec<Batch>> {
        if batch_size == 0 {
            return Err(invalid("batch size must be at least 1"));
        }
        let order: Vec<usize> = (0..self.len()).collect();
        order.chunks(batch_size).map(|c| self.gather(c)).collect()
    }

    /// Deterministic split into `(first, rest)` after a seeded shuffle.
    pub fn split(&self, first: usize, rng: &mut impl Rng) -> Result<(Dataset, Dataset)> {
        if first > self.len() {
            return Err(invalid(format!("cannot take {first} of {} examples", self.len())));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(rng);
        Ok((self.subset(&order[..first])?, self.subset(&order[first..])?))
    }

    /// Number of examples per class.
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.class_count];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }
}
