//! Explicit reverse-mode tape.
//!
//! A [`Tape`] records every primitive applied to its [`Var`]s together with the
//! forward value. [`Tape::backward`] replays adjoints in exact reverse
//! execution order and returns a [`GradientSet`] holding one entry per tracked
//! parameter. A tape is single-use: after `backward` every further call fails
//! with [`Error::TapeConsumed`].

use super::pseudo::{check_threshold, PseudoDerivative};
use super::{GradientSet, Tensor};
use crate::error::{invalid, Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    MatMul(usize, usize),
    Transpose(usize),
    Exp(usize),
    Log(usize),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    Square(usize),
    Softmax(usize),
    LogSoftmax(usize),
    Sum(usize),
    SumAxis(usize, usize),
    ExpandRows(usize),
    Concat(Vec<usize>, usize),
    Slice {
        src: usize,
        axis: usize,
        start: usize,
    },
    Reshape(usize),
    /// Upstream adjoint is multiplied by the stored pseudo-derivative.
    Spike(usize, Tensor),
    /// Mean cross-entropy over rows; stores `(probs − one_hot) / rows`.
    SoftmaxCrossEntropy(usize, Tensor),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(String, usize)>,
    consumed: bool,
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok(())
}

impl Tape {
    /// Opens a fresh recording scope.
    pub fn begin() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    fn live(&self) -> Result<()> {
        if self.consumed {
            Err(Error::TapeConsumed)
        } else {
            Ok(())
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        self.live()?;
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    fn val(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn value(&self, v: Var) -> Result<&Tensor> {
        self.live()?;
        Ok(self.val(v))
    }

    /// Records a tracked parameter; its adjoint is returned by `backward`.
    pub fn param(&mut self, id: impl Into<String>, value: Tensor) -> Result<Var> {
        let id = id.into();
        if self.params.iter().any(|(p, _)| *p == id) {
            return Err(invalid(format!("parameter `{id}` registered twice")));
        }
        let v = self.push(value, Op::Leaf)?;
        self.params.push((id, v.0));
        Ok(v)
    }

    /// Records an untracked input.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.val(a), self.val(b))?;
        let out = self.val(a).add(self.val(b))?;
        self.push(out, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", self.val(a), self.val(b))?;
        let out = self.val(a).sub(self.val(b))?;
        self.push(out, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.val(a), self.val(b))?;
        let out = self.val(a).mul(self.val(b))?;
        self.push(out, Op::Mul(a.0, b.0))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.val(a).scale(c)?;
        self.push(out, Op::Scale(a.0, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.val(a).add_scalar(c)?;
        self.push(out, Op::AddScalar(a.0))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.val(a).matmul(self.val(b))?;
        self.push(out, Op::MatMul(a.0, b.0))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.val(a).transpose()?;
        self.push(out, Op::Transpose(a.0))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let out = self.val(a).exp()?;
        self.push(out, Op::Exp(a.0))
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        let out = self.val(a).ln()?;
        self.push(out, Op::Log(a.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.val(a).sigmoid()?;
        self.push(out, Op::Sigmoid(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.val(a).tanh()?;
        self.push(out, Op::Tanh(a.0))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.val(a).relu()?;
        self.push(out, Op::Relu(a.0))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let out = self.val(a).square()?;
        self.push(out, Op::Square(a.0))
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let out = self.val(a).softmax()?;
        self.push(out, Op::Softmax(a.0))
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let out = self.val(a).log_softmax()?;
        self.push(out, Op::LogSoftmax(a.0))
    }

    /// Sum of all entries, as a rank-0 tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.val(a).sum())?;
        self.push(out, Op::Sum(a.0))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.val(a).len() as f64;
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n)
    }

    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let out = self.val(a).sum_axis(axis)?;
        self.push(out, Op::SumAxis(a.0, axis))
    }

    /// `[n] → [rows×n]`, the only non-scalar broadcast.
    pub fn expand_rows(&mut self, a: Var, rows: usize) -> Result<Var> {
        let out = self.val(a).expand_rows(rows)?;
        self.push(out, Op::ExpandRows(a.0))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let values: Vec<&Tensor> = parts.iter().map(|p| self.val(*p)).collect();
        let out = Tensor::concat(&values, axis)?;
        self.push(out, Op::Concat(parts.iter().map(|p| p.0).collect(), axis))
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let out = self.val(a).slice(axis, start, len)?;
        self.push(
            out,
            Op::Slice {
                src: a.0,
                axis,
                start,
            },
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.val(a).reshape(shape)?;
        self.push(out, Op::Reshape(a.0))
    }

    /// Step `H(x ≥ 0)` on the forward pass; the backward pass multiplies by the
    /// pseudo-derivative evaluated at `x`.
    pub fn heaviside_with_pseudo(
        &mut self,
        x: Var,
        pd: &PseudoDerivative,
        v_th: f64,
    ) -> Result<Var> {
        check_threshold(v_th)?;
        let (spikes, psi) = super::pseudo::heaviside_with_pseudo(self.val(x), pd, v_th)?;
        self.push(spikes, Op::Spike(x.0, psi))
    }

    /// Mean over rows of `−log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let z = self.val(logits);
        if z.rank() != 2 || z.rows() != labels.len() {
            return Err(invalid(format!(
                "cross-entropy needs [batch×classes] logits matching {} labels, got {:?}",
                labels.len(),
                z.shape()
            )));
        }
        let (rows, classes) = (z.rows(), z.cols());
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(invalid(format!("label {bad} out of range for {classes} classes")));
        }
        let logp = z.log_softmax()?;
        let mut loss = 0.0;
        let mut grad = z.softmax()?.into_data();
        for (r, &l) in labels.iter().enumerate() {
            loss -= logp.data()[r * classes + l];
            grad[r * classes + l] -= 1.0;
        }
        let inv = 1.0 / rows as f64;
        grad.iter_mut().for_each(|g| *g *= inv);
        let grad = Tensor::new(vec![rows, classes], grad)?;
        self.push(
            Tensor::scalar(loss * inv)?,
            Op::SoftmaxCrossEntropy(logits.0, grad),
        )
    }

    /// Replays adjoints from `loss` and returns the gradient of every tracked
    /// parameter. Consumes the recording.
    pub fn backward(&mut self, loss: Var) -> Result<GradientSet> {
        self.live()?;
        let loss_value = self.val(loss);
        if loss_value.len() != 1 {
            return Err(Error::NonScalarLoss(loss_value.shape().to_vec()));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Tensor::ones(loss_value.shape()));

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            self.propagate(i, &g, &mut adj)?;
            adj[i] = Some(g);
        }

        let mut grads = GradientSet::new();
        for (id, idx) in &self.params {
            let value = &self.nodes[*idx].value;
            let g = adj
                .get(*idx)
                .and_then(Option::as_ref)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(value.shape()));
            if g.data().iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { op: "backward" });
            }
            grads.insert(id.clone(), g);
        }
        self.consumed = true;
        self.nodes.clear();
        Ok(grads)
    }

    fn propagate(&self, i: usize, g: &Tensor, adj: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                accumulate(adj, *a, g.clone());
                accumulate(adj, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(adj, *a, g.clone());
                accumulate(adj, *b, g.neg());
            }
            Op::Mul(a, b) => {
                accumulate(adj, *a, zip(g, &self.nodes[*b].value, |x, y| x * y));
                accumulate(adj, *b, zip(g, &self.nodes[*a].value, |x, y| x * y));
            }
            Op::Scale(a, c) => accumulate(adj, *a, map(g, |x| x * c)),
            Op::AddScalar(a) | Op::Reshape(a) => {
                let shape = self.nodes[*a].value.shape().to_vec();
                accumulate(adj, *a, Tensor::from_parts_unchecked(shape, g.data().to_vec()));
            }
            Op::MatMul(a, b) => {
                let av = &self.nodes[*a].value;
                let bv = &self.nodes[*b].value;
                accumulate(adj, *a, matmul_unchecked(g, &bv.transpose()?));
                accumulate(adj, *b, matmul_unchecked(&av.transpose()?, g));
            }
            Op::Transpose(a) => accumulate(adj, *a, g.transpose()?),
            Op::Exp(a) => accumulate(adj, *a, zip(g, out, |x, y| x * y)),
            Op::Log(a) => accumulate(adj, *a, zip(g, &self.nodes[*a].value, |x, y| x / y)),
            Op::Sigmoid(a) => accumulate(adj, *a, zip(g, out, |x, s| x * s * (1.0 - s))),
            Op::Tanh(a) => accumulate(adj, *a, zip(g, out, |x, t| x * (1.0 - t * t))),
            Op::Relu(a) => accumulate(
                adj,
                *a,
                zip(g, &self.nodes[*a].value, |x, v| if v > 0.0 { x } else { 0.0 }),
            ),
            Op::Square(a) => {
                accumulate(adj, *a, zip(g, &self.nodes[*a].value, |x, v| 2.0 * x * v))
            }
            Op::Softmax(a) => {
                let n = out.shape().last().copied().unwrap_or(1);
                let mut data = vec![0.0; out.len()];
                for ((d, gr), pr) in data
                    .chunks_mut(n)
                    .zip(g.data().chunks(n))
                    .zip(out.data().chunks(n))
                {
                    let inner: f64 = gr.iter().zip(pr).map(|(x, p)| x * p).sum();
                    for ((dv, x), p) in d.iter_mut().zip(gr).zip(pr) {
                        *dv = p * (x - inner);
                    }
                }
                accumulate(adj, *a, Tensor::from_parts_unchecked(out.shape().to_vec(), data));
            }
            Op::LogSoftmax(a) => {
                let n = out.shape().last().copied().unwrap_or(1);
                let mut data = vec![0.0; out.len()];
                for ((d, gr), lp) in data
                    .chunks_mut(n)
                    .zip(g.data().chunks(n))
                    .zip(out.data().chunks(n))
                {
                    let total: f64 = gr.iter().sum();
                    for ((dv, x), l) in d.iter_mut().zip(gr).zip(lp) {
                        *dv = x - l.exp() * total;
                    }
                }
                accumulate(adj, *a, Tensor::from_parts_unchecked(out.shape().to_vec(), data));
            }
            Op::Sum(a) => {
                let shape = self.nodes[*a].value.shape();
                accumulate(adj, *a, Tensor::full(shape, g.data()[0]));
            }
            Op::SumAxis(a, axis) => {
                let src_shape = self.nodes[*a].value.shape().to_vec();
                let outer: usize = src_shape[..*axis].iter().product();
                let inner: usize = src_shape[axis + 1..].iter().product();
                let n = src_shape[*axis];
                let mut data = Vec::with_capacity(outer * n * inner);
                for o in 0..outer {
                    let block = &g.data()[o * inner..(o + 1) * inner];
                    for _ in 0..n {
                        data.extend_from_slice(block);
                    }
                }
                accumulate(adj, *a, Tensor::from_parts_unchecked(src_shape, data));
            }
            Op::ExpandRows(a) => accumulate(adj, *a, g.sum_axis(0)?),
            Op::Concat(parts, axis) => {
                let mut start = 0;
                for p in parts {
                    let len = self.nodes[*p].value.shape()[*axis];
                    accumulate(adj, *p, g.slice(*axis, start, len)?);
                    start += len;
                }
            }
            Op::Slice { src, axis, start } => {
                let src_shape = self.nodes[*src].value.shape().to_vec();
                let outer: usize = src_shape[..*axis].iter().product();
                let inner: usize = src_shape[axis + 1..].iter().product();
                let len = g.shape()[*axis];
                let stride = src_shape[*axis] * inner;
                let mut data = vec![0.0; src_shape.iter().product()];
                for o in 0..outer {
                    let dst = o * stride + start * inner;
                    data[dst..dst + len * inner]
                        .copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
                }
                accumulate(adj, *src, Tensor::from_parts_unchecked(src_shape, data));
            }
            Op::Spike(a, psi) => accumulate(adj, *a, zip(g, psi, |x, p| x * p)),
            Op::SoftmaxCrossEntropy(a, grad) => {
                let s = g.data()[0];
                accumulate(adj, *a, map(grad, |x| x * s));
            }
        }
        Ok(())
    }
}

fn map(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_parts_unchecked(a.shape().to_vec(), a.data().iter().map(|&x| f(x)).collect())
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::from_parts_unchecked(
        b.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
}

fn matmul_unchecked(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let x = a.data()[i * k + p];
            if x == 0.0 {
                continue;
            }
            for (o, &y) in row.iter_mut().zip(&b.data()[p * n..(p + 1) * n]) {
                *o += x * y;
            }
        }
    }
    Tensor::from_parts_unchecked(vec![m, n], out)
}

fn accumulate(adj: &mut [Option<Tensor>], idx: usize, g: Tensor) {
    match &mut adj[idx] {
        Some(existing) => {
            for (e, v) in existing.data_mut().iter_mut().zip(g.data()) {
                *e += v;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(data: &[f64]) -> Tensor {
        Tensor::vector(data.to_vec()).unwrap()
    }

    #[test]
    fn linear_gradient() {
        let mut tape = Tape::begin();
        let w = tape.param("w", v(&[0.7])).unwrap();
        let x = tape.constant(v(&[2.0])).unwrap();
        let prod = tape.mul(w, x).unwrap();
        let loss = tape.sum(prod).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get("w").unwrap().data(), &[2.0]);
    }

    #[test]
    fn untouched_param_has_zero_adjoint() {
        let mut tape = Tape::begin();
        let w = tape.param("w", v(&[1.0, 2.0])).unwrap();
        let p = tape.param("p", v(&[3.0, 4.0, 5.0])).unwrap();
        let _ = p;
        let loss = tape.sum(w).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get("p").unwrap().data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn sigmoid_gradient_at_zero() {
        let mut tape = Tape::begin();
        let w = tape.param("w", Tensor::zeros(&[3])).unwrap();
        let s = tape.sigmoid(w).unwrap();
        let loss = tape.sum(s).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get("w").unwrap().data(), &[0.25, 0.25, 0.25]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::begin();
        let w = tape.param("w", v(&[1.0, 2.0])).unwrap();
        assert!(matches!(tape.backward(w), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn consumed_tape_rejected() {
        let mut tape = Tape::begin();
        let w = tape.param("w", v(&[1.0])).unwrap();
        let loss = tape.sum(w).unwrap();
        tape.backward(loss).unwrap();
        assert!(matches!(tape.backward(loss), Err(Error::TapeConsumed)));
        assert!(matches!(tape.constant(v(&[1.0])), Err(Error::TapeConsumed)));
    }

    #[test]
    fn spike_backward_uses_pseudo_multiplier() {
        let mut tape = Tape::begin();
        let x = tape.param("x", v(&[0.0, 0.5, -2.0])).unwrap();
        let z = tape
            .heaviside_with_pseudo(x, &PseudoDerivative::triangular(0.3), 1.0)
            .unwrap();
        assert_eq!(tape.value(z).unwrap().data(), &[1.0, 1.0, 0.0]);
        let loss = tape.sum(z).unwrap();
        let g = tape.backward(loss).unwrap();
        let gx = g.get("x").unwrap().data();
        assert!((gx[0] - 0.3).abs() < 1e-15 && (gx[1] - 0.15).abs() < 1e-15 && gx[2] == 0.0);
    }

    #[test]
    fn reused_var_accumulates() {
        let mut tape = Tape::begin();
        let w = tape.param("w", v(&[3.0])).unwrap();
        let sq = tape.mul(w, w).unwrap();
        let loss = tape.sum(sq).unwrap();
        assert_eq!(tape.backward(loss).unwrap().get("w").unwrap().data(), &[6.0]);
    }

    #[test]
    fn cross_entropy_label_out_of_range() {
        let mut tape = Tape::begin();
        let z = tape.param("z", Tensor::zeros(&[1, 2])).unwrap();
        assert!(tape.softmax_cross_entropy(z, &[2]).is_err());
    }
}
