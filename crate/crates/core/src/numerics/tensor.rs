//! Dense row-major `f64` tensors.
//!
//! Every public constructor and operation checks that the result is finite and
//! returns [`Error::NonFinite`] otherwise. Broadcasting is limited to
//! scalar-with-tensor; anything else goes through [`Tensor::expand_rows`].

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn checked(op: &'static str, shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op });
    }
    Ok(Tensor { shape, data })
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(invalid(format!(
                "shape {shape:?} holds {n} values but {} were given",
                data.len()
            )));
        }
        checked("new", shape, data)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    /// Panics if `value` is not finite.
    pub fn full(shape: &[usize], value: f64) -> Self {
        assert!(value.is_finite(), "Tensor::full needs a finite fill value");
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Result<Self> {
        Self::new(Vec::new(), vec![value])
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(invalid("ragged rows"));
        }
        Self::matrix(rows.len(), cols, rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.shape.iter().all(|&d| d == 1)
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::NonScalarLoss(self.shape.clone()));
        }
        Ok(self.data[0])
    }

    pub fn get(&self, index: &[usize]) -> Result<f64> {
        if index.len() != self.shape.len() || index.iter().zip(&self.shape).any(|(i, d)| i >= d) {
            return Err(invalid(format!(
                "index {index:?} out of bounds for shape {:?}",
                self.shape
            )));
        }
        let mut flat = 0;
        for (i, d) in index.iter().zip(&self.shape) {
            flat = flat * d + i;
        }
        Ok(self.data[flat])
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    pub fn cols(&self) -> usize {
        self.shape.get(1).copied().unwrap_or(1)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.len() {
            return Err(Error::Shape {
                op: "reshape",
                left: self.shape.clone(),
                right: shape.to_vec(),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub(crate) fn map_checked(&self, op: &'static str, f: impl Fn(f64) -> f64) -> Result<Self> {
        checked(op, self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    fn zip_checked(
        &self,
        other: &Self,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Self> {
        if self.shape == other.shape {
            let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
            checked(op, self.shape.clone(), data)
        } else if other.is_scalar() {
            let b = other.data[0];
            self.map_checked(op, |a| f(a, b))
        } else if self.is_scalar() {
            let a = self.data[0];
            other.map_checked(op, |b| f(a, b))
        } else {
            Err(Error::Shape {
                op,
                left: self.shape.clone(),
                right: other.shape.clone(),
            })
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_checked(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_checked(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_checked(other, "mul", |a, b| a * b)
    }

    pub fn div(&self, other: &Self) -> Result<Self> {
        self.zip_checked(other, "div", |a, b| a / b)
    }

    pub fn scale(&self, c: f64) -> Result<Self> {
        self.map_checked("scale", |a| a * c)
    }

    pub fn add_scalar(&self, c: f64) -> Result<Self> {
        self.map_checked("add_scalar", |a| a + c)
    }

    pub fn neg(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| -v).collect(),
        }
    }

    pub fn exp(&self) -> Result<Self> {
        self.map_checked("exp", f64::exp)
    }

    pub fn ln(&self) -> Result<Self> {
        self.map_checked("log", f64::ln)
    }

    pub fn sigmoid(&self) -> Result<Self> {
        self.map_checked("sigmoid", sigmoid)
    }

    pub fn tanh(&self) -> Result<Self> {
        self.map_checked("tanh", f64::tanh)
    }

    pub fn relu(&self) -> Result<Self> {
        self.map_checked("relu", |v| v.max(0.0))
    }

    pub fn square(&self) -> Result<Self> {
        self.map_checked("square", |v| v * v)
    }

    fn require_rank(&self, op: &'static str, rank: usize) -> Result<()> {
        if self.rank() != rank {
            return Err(invalid(format!(
                "{op} expects a rank-{rank} tensor, got shape {:?}",
                self.shape
            )));
        }
        Ok(())
    }

    /// `[m×k] · [k×n] → [m×n]`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.rank() != 2 || other.rank() != 2 || self.shape[1] != other.shape[0] {
            return Err(Error::Shape {
                op: "matmul",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let (m, k, n) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let rhs = &other.data[p * n..(p + 1) * n];
                for (o, &b) in row.iter_mut().zip(rhs) {
                    *o += a * b;
                }
            }
        }
        checked("matmul", vec![m, n], out)
    }

    pub fn transpose(&self) -> Result<Self> {
        self.require_rank("transpose", 2)?;
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(Self {
            shape: vec![n, m],
            data: out,
        })
    }

    /// Outer product of two vectors, `[n] ⊗ [m] → [n×m]`.
    pub fn outer(&self, other: &Self) -> Result<Self> {
        self.require_rank("outer", 1)?;
        other.require_rank("outer", 1)?;
        let data = self
            .data
            .iter()
            .flat_map(|&a| other.data.iter().map(move |&b| a * b))
            .collect();
        checked("outer", vec![self.len(), other.len()], data)
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Self> {
        let first = parts.first().ok_or_else(|| invalid("concat of zero tensors"))?;
        if axis >= first.rank() {
            return Err(invalid(format!(
                "concat axis {axis} out of range for shape {:?}",
                first.shape
            )));
        }
        for p in parts {
            let same_rank = p.rank() == first.rank();
            let compatible = same_rank
                && p.shape
                    .iter()
                    .zip(&first.shape)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::Shape {
                    op: "concat",
                    left: first.shape.clone(),
                    right: p.shape.clone(),
                });
            }
        }
        let outer: usize = first.shape[..axis].iter().product();
        let inner: usize = first.shape[axis + 1..].iter().product();
        let total_axis: usize = parts.iter().map(|p| p.shape[axis]).sum();
        let mut data = Vec::with_capacity(outer * total_axis * inner);
        for o in 0..outer {
            for p in parts {
                let block = p.shape[axis] * inner;
                data.extend_from_slice(&p.data[o * block..(o + 1) * block]);
            }
        }
        let mut shape = first.shape.clone();
        shape[axis] = total_axis;
        Ok(Self { shape, data })
    }

    /// Sub-tensor `start..start+len` along `axis`, keeping the rank.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Self> {
        if axis >= self.rank() || start + len > self.shape[axis] {
            return Err(invalid(format!(
                "slice {start}..{} on axis {axis} out of range for shape {:?}",
                start + len,
                self.shape
            )));
        }
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let stride = self.shape[axis] * inner;
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * stride + start * inner;
            data.extend_from_slice(&self.data[base..base + len * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = len;
        Ok(Self { shape, data })
    }

    /// Selects index `i` along `axis` and drops that axis.
    pub fn select(&self, axis: usize, i: usize) -> Result<Self> {
        let s = self.slice(axis, i, 1)?;
        let mut shape = self.shape.clone();
        shape.remove(axis);
        Ok(Self {
            shape,
            data: s.data,
        })
    }

    /// Stacks equally shaped tensors along a new `axis`.
    pub fn stack(parts: &[Tensor], axis: usize) -> Result<Self> {
        let first = parts.first().ok_or_else(|| invalid("stack of zero tensors"))?;
        if axis > first.rank() {
            return Err(invalid(format!("stack axis {axis} out of range")));
        }
        let mut unsqueezed_shape = first.shape.clone();
        unsqueezed_shape.insert(axis, 1);
        let expanded = parts
            .iter()
            .map(|p| {
                if p.shape != first.shape {
                    return Err(Error::Shape {
                        op: "stack",
                        left: first.shape.clone(),
                        right: p.shape.clone(),
                    });
                }
                p.reshape(&unsqueezed_shape)
            })
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Tensor> = expanded.iter().collect();
        Self::concat(&refs, axis)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.len() as f64
    }

    /// Sum over `axis`, dropping it.
    pub fn sum_axis(&self, axis: usize) -> Result<Self> {
        if axis >= self.rank() {
            return Err(invalid(format!(
                "sum axis {axis} out of range for shape {:?}",
                self.shape
            )));
        }
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let n = self.shape[axis];
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..n {
                let src = &self.data[(o * n + k) * inner..(o * n + k + 1) * inner];
                for (d, s) in data[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let mut shape = self.shape.clone();
        shape.remove(axis);
        checked("sum_axis", shape, data)
    }

    /// Repeats a vector `[n]` into `[rows×n]`.
    pub fn expand_rows(&self, rows: usize) -> Result<Self> {
        self.require_rank("expand_rows", 1)?;
        let mut data = Vec::with_capacity(rows * self.len());
        for _ in 0..rows {
            data.extend_from_slice(&self.data);
        }
        Ok(Self {
            shape: vec![rows, self.len()],
            data,
        })
    }

    fn last_axis(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    /// Softmax over the last axis.
    pub fn softmax(&self) -> Result<Self> {
        let n = self.last_axis();
        let mut data = self.data.clone();
        for row in data.chunks_mut(n) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        checked("softmax", self.shape.clone(), data)
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&self) -> Result<Self> {
        let n = self.last_axis();
        let mut data = self.data.clone();
        for row in data.chunks_mut(n) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        checked("log_softmax", self.shape.clone(), data)
    }

    /// Index of the largest entry in each row of the last axis.
    pub fn argmax_rows(&self) -> Vec<usize> {
        self.data
            .chunks(self.last_axis())
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
                        if v > best.1 {
                            (i, v)
                        } else {
                            best
                        }
                    })
                    .0
            })
            .collect()
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        if self.len() != other.len() {
            return Err(Error::Shape {
                op: "dot",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Sets the main diagonal of a square matrix to zero.
    pub fn zero_diagonal(&mut self) -> Result<()> {
        if self.rank() != 2 || self.shape[0] != self.shape[1] {
            return Err(invalid(format!(
                "zero_diagonal needs a square matrix, got {:?}",
                self.shape
            )));
        }
        let n = self.shape[0];
        for i in 0..n {
            self.data[i * n + i] = 0.0;
        }
        Ok(())
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub(crate) fn from_parts_unchecked(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
