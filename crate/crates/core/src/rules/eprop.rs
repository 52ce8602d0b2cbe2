//! Eligibility propagation: per-synapse traces run forward in time and are
//! combined with a per-neuron learning signal `L[t] = dLoss/dy[t] · B`.
//!
//! Traces follow the cell's own dynamics only (recurrent coupling through
//! other neurons and the reset path are dropped). With pre-synaptic activity
//! `pre[t]` (input `x[t]` for `w_in`, previous spikes `z[t−1]` for `w_rec`)
//! and pseudo-derivative `ψ[t]`:
//!
//! ```text
//! eps_v[t] = α·eps_v[t−1] + pre[t]
//! eps_a[t] = ψ[t−1]·eps_v[t−1] + (ρ − ψ[t−1]·β)·eps_a[t−1]
//! e[t]     = ψ[t]·(eps_v[t] − β·eps_a[t])
//! F[t]     = κ·F[t−1] + e[t]
//! ```
//!
//! so that `grad(W) = Σ_t L[t] ⊙ F[t]`. Readout gradients are exact.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::bptt::mask_self_loops;
use super::objective::Objective;
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::neurons::{gaussian, CellParams, CellState, Model, RecurrentNet, B_OUT, W_IN, W_OUT, W_REC};
use crate::numerics::{GradientSet, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackMode {
    /// `B = w_outᵀ` at every use.
    Symmetric,
    /// Fixed random `B`.
    Random,
    /// Random start, then follows every increment applied to `w_outᵀ`.
    Adaptive,
}

impl FeedbackMode {
    pub fn name(self) -> &'static str {
        match self {
            FeedbackMode::Symmetric => "symmetric",
            FeedbackMode::Random => "random",
            FeedbackMode::Adaptive => "adaptive",
        }
    }
}

/// Feedback weights `[n_out × n_rec]` carrying output errors to hidden neurons.
#[derive(Debug, Clone, PartialEq)]
pub struct BroadcastMatrix {
    pub mode: FeedbackMode,
    pub b: Tensor,
}

impl BroadcastMatrix {
    pub fn new(mode: FeedbackMode, net: &RecurrentNet, rng: &mut impl Rng) -> Result<Self> {
        let b = match mode {
            FeedbackMode::Symmetric => net.readout.w_out.transpose()?,
            FeedbackMode::Random | FeedbackMode::Adaptive => {
                gaussian(rng, &[net.n_out(), net.n_rec()], 1.0 / (net.n_rec() as f64).sqrt())
            }
        };
        Ok(Self { mode, b })
    }

    /// The matrix in effect for `net` right now.
    pub fn current(&self, net: &RecurrentNet) -> Result<Tensor> {
        match self.mode {
            FeedbackMode::Symmetric => net.readout.w_out.transpose(),
            FeedbackMode::Random | FeedbackMode::Adaptive => {
                if self.b.shape() != [net.n_out(), net.n_rec()] {
                    return Err(Error::Shape {
                        op: "broadcast matrix",
                        left: vec![net.n_out(), net.n_rec()],
                        right: self.b.shape().to_vec(),
                    });
                }
                Ok(self.b.clone())
            }
        }
    }

    /// Mirrors an applied readout update (adaptive mode only).
    pub fn observe_readout_delta(&mut self, delta_w_out: &Tensor) -> Result<()> {
        if self.mode == FeedbackMode::Adaptive {
            self.b = self.b.add(&delta_w_out.transpose()?)?;
        }
        Ok(())
    }
}

/// Traces of one weight matrix for every batch element, each `[batch × n_pre × n_post]`.
/// `pseudo_prev` is the pseudo-derivative from the previous step, `[batch × n_post]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceState {
    pub eps_v: Tensor,
    pub eps_a: Tensor,
    pub eligibility: Tensor,
    pub filtered: Tensor,
    pub pseudo_prev: Tensor,
}

impl TraceState {
    pub fn zeros(batch: usize, n_pre: usize, n_post: usize) -> Self {
        let z = Tensor::zeros(&[batch, n_pre, n_post]);
        Self {
            eps_v: z.clone(),
            eps_a: z.clone(),
            eligibility: z.clone(),
            filtered: z,
            pseudo_prev: Tensor::zeros(&[batch, n_post]),
        }
    }

    fn dims(&self) -> (usize, usize, usize) {
        let s = self.eps_v.shape();
        (s[0], s[1], s[2])
    }

    fn advance(&mut self, cell: &CellParams, kappa: f64, pre: &Tensor, pseudo: &Tensor) -> Result<()> {
        let (b, n_pre, n_post) = self.dims();
        if pre.shape() != [b, n_pre] || pseudo.shape() != [b, n_post] {
            return Err(Error::Shape {
                op: "eprop_trace_step",
                left: vec![b, n_pre, n_post],
                right: [pre.shape(), pseudo.shape()].concat(),
            });
        }
        let alpha = cell.lif().alpha;
        let (rho, beta) = cell.adaptation();
        let adaptive = cell.is_adaptive();
        let pre = pre.data();
        let psi = pseudo.data();
        let psi_prev = self.pseudo_prev.data().to_vec();
        let ev = self.eps_v.data_mut();
        let ea = self.eps_a.data_mut();
        let el = self.eligibility.data_mut();
        let fl = self.filtered.data_mut();
        for bi in 0..b {
            for i in 0..n_pre {
                let p = pre[bi * n_pre + i];
                let base = (bi * n_pre + i) * n_post;
                for j in 0..n_post {
                    let k = base + j;
                    let ps = psi[bi * n_post + j];
                    let v_old = ev[k];
                    let v_new = alpha * v_old + p;
                    let e = if adaptive {
                        let pp = psi_prev[bi * n_post + j];
                        let a_new = pp * v_old + (rho - pp * beta) * ea[k];
                        ea[k] = a_new;
                        ps * (v_new - beta * a_new)
                    } else {
                        ps * v_new
                    };
                    ev[k] = v_new;
                    el[k] = e;
                    fl[k] = kappa * fl[k] + e;
                }
            }
        }
        self.pseudo_prev = pseudo.clone();
        check_finite(&self.filtered)?;
        check_finite(&self.eps_a)
    }
}

fn check_finite(t: &Tensor) -> Result<()> {
    if t.data().iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op: "eprop trace" })
    }
}

/// One forward step of the traces for pre-synaptic activity `pre` `[batch × n_pre]`
/// and the new pseudo-derivative `pseudo` `[batch × n_post]`.
pub fn eprop_trace_step(
    cell: &CellParams,
    kappa: f64,
    pre: &Tensor,
    pseudo: &Tensor,
    trace: &TraceState,
) -> Result<TraceState> {
    let mut next = trace.clone();
    next.advance(cell, kappa, pre, pseudo)?;
    Ok(next)
}

/// Adds `Σ_b L[b,j]·F[b,i,j]` into `grad[i,j]`.
fn accumulate(grad: &mut [f64], signal: &Tensor, filtered: &Tensor) {
    let s = filtered.shape();
    let (b, n_pre, n_post) = (s[0], s[1], s[2]);
    let l = signal.data();
    let f = filtered.data();
    for bi in 0..b {
        for i in 0..n_pre {
            let row = &f[(bi * n_pre + i) * n_post..(bi * n_pre + i + 1) * n_post];
            let g = &mut grad[i * n_post..(i + 1) * n_post];
            let lb = &l[bi * n_post..(bi + 1) * n_post];
            for j in 0..n_post {
                g[j] += lb[j] * row[j];
            }
        }
    }
}

/// Adds `Σ_b e[b,i,j]` into `sum[i,j]`.
fn accumulate_eligibility(sum: &mut [f64], eligibility: &Tensor) {
    let n = sum.len();
    for chunk in eligibility.data().chunks(n) {
        for (s, e) in sum.iter_mut().zip(chunk) {
            *s += e;
        }
    }
}

pub(crate) fn unsupported_architecture(model: &Model) -> Error {
    Error::Unsupported(format!(
        "e-prop needs a recurrent spiking layer; layer 'layer0' of the {} model is dense",
        model.kind_name()
    ))
}

/// e-prop estimate of the batch-mean loss gradient; returns `(loss, grads)`.
pub fn eprop_gradients(
    model: &Model,
    batch: &Batch,
    objective: &Objective,
    feedback: &BroadcastMatrix,
) -> Result<(f64, GradientSet)> {
    let net = model.as_recurrent().ok_or_else(|| unsupported_architecture(model))?;
    objective.check_model(model)?;
    let (b, _, _) = crate::neurons::dims3(&batch.inputs)?;
    let (n_in, n_rec, n_out) = (net.n_in(), net.n_rec(), net.n_out());
    let kappa = net.readout.kappa;

    // forward pass; learning signals need the final logits
    let mut states: Vec<(CellState, Tensor)> = Vec::new();
    let mut outputs = Vec::new();
    net.simulate(&batch.inputs, |_, s, psi, y| {
        states.push((s.clone(), psi.clone()));
        outputs.push(y.clone());
        Ok(())
    })?;
    let outputs = Tensor::stack(&outputs, 1)?;
    let (mut loss, gy) = objective.output_gradients(net, &outputs, &batch.labels)?;
    let fb = feedback.current(net)?;

    let mut tr_in = TraceState::zeros(b, n_in, n_rec);
    let mut tr_rec = TraceState::zeros(b, n_rec, n_rec);
    let mut g_in = vec![0.0; n_in * n_rec];
    let mut g_rec = vec![0.0; n_rec * n_rec];
    let mut e_in = vec![0.0; n_in * n_rec];
    let mut e_rec = vec![0.0; n_rec * n_rec];
    let mut g_out = Tensor::zeros(&[n_rec, n_out]);
    let mut g_b = Tensor::zeros(&[n_out]);
    let mut zf = Tensor::zeros(&[b, n_rec]);
    let mut bf = 0.0;
    let mut z_prev = Tensor::zeros(&[b, n_rec]);

    for (t, ((state, psi), gy_t)) in states.iter().zip(&gy).enumerate() {
        let x_t = batch.inputs.select(1, t)?;
        tr_in.advance(&net.cell, kappa, &x_t, psi)?;
        tr_rec.advance(&net.cell, kappa, &z_prev, psi)?;
        let signal = gy_t.matmul(&fb)?;
        accumulate(&mut g_in, &signal, &tr_in.filtered);
        accumulate(&mut g_rec, &signal, &tr_rec.filtered);
        if objective.rate_reg.is_some() {
            accumulate_eligibility(&mut e_in, &tr_in.eligibility);
            accumulate_eligibility(&mut e_rec, &tr_rec.eligibility);
        }
        zf = zf.scale(kappa)?.add(&state.z)?;
        bf = kappa * bf + 1.0;
        g_out = g_out.add(&zf.transpose()?.matmul(gy_t)?)?;
        g_b = g_b.add(&gy_t.sum_axis(0)?.scale(bf)?)?;
        z_prev = state.z.clone();
    }

    if let Some(reg) = &objective.rate_reg {
        let spikes = Tensor::stack(&states.iter().map(|(s, _)| s.z.clone()).collect::<Vec<_>>(), 1)?;
        let (penalty, _) =
            super::objective::firing_rate_regularizer(&spikes, reg.target_hz, net.dt, reg.coef)?;
        loss += penalty;
        let scale = reg.spike_gradient_scale(&spikes, net.dt)?;
        let scale = scale.data();
        for (g, e) in [(&mut g_in, &e_in), (&mut g_rec, &e_rec)] {
            for (idx, (gv, ev)) in g.iter_mut().zip(e.iter()).enumerate() {
                *gv += scale[idx % n_rec] * ev;
            }
        }
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite { op: "loss" });
    }

    let mut grads = GradientSet::new();
    grads.insert(W_IN, Tensor::new(vec![n_in, n_rec], g_in)?);
    grads.insert(W_REC, Tensor::new(vec![n_rec, n_rec], g_rec)?);
    grads.insert(W_OUT, g_out);
    grads.insert(B_OUT, g_b);
    mask_self_loops(&mut grads)?;
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neurons::{AlifParams, LifParams};
    use crate::numerics::PseudoDerivative;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn lif(alpha: f64, n_in: usize, n_rec: usize) -> LifParams {
        LifParams {
            alpha,
            v_th: 1.0,
            w_in: Tensor::zeros(&[n_in, n_rec]),
            w_rec: Tensor::zeros(&[n_rec, n_rec]),
            pseudo: PseudoDerivative::default(),
        }
    }

    fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
    }

    #[test]
    fn lif_eligibility_is_pseudo_times_eps_v() {
        let cell = CellParams::Lif(lif(0.9, 2, 3));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut tr = TraceState::zeros(1, 2, 3);
        for _ in 0..4 {
            let pre = random(&mut rng, &[1, 2], 0.0, 1.0);
            let psi = random(&mut rng, &[1, 3], 0.0, 0.3);
            tr = eprop_trace_step(&cell, 0.8, &pre, &psi, &tr).unwrap();
            for i in 0..2 {
                for j in 0..3 {
                    let e = tr.eligibility.get(&[0, i, j]).unwrap();
                    let want = psi.get(&[0, j]).unwrap() * tr.eps_v.get(&[0, i, j]).unwrap();
                    assert!((e - want).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn silent_pre_keeps_traces_zero() {
        let cell = CellParams::Alif(AlifParams {
            lif: lif(0.9, 2, 2),
            rho: 0.99,
            beta: 0.5,
        });
        let mut tr = TraceState::zeros(2, 2, 2);
        for _ in 0..10 {
            tr = eprop_trace_step(&cell, 0.9, &Tensor::zeros(&[2, 2]), &Tensor::full(&[2, 2], 0.3), &tr).unwrap();
        }
        for t in [&tr.eps_v, &tr.eps_a, &tr.eligibility, &tr.filtered] {
            assert_eq!(t.max_abs(), 0.0);
        }
    }

    #[test]
    fn membrane_trace_matches_unrolled_sum() {
        let alpha = 0.83;
        let cell = CellParams::Lif(lif(alpha, 3, 2));
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pres: Vec<Tensor> = (0..5).map(|_| random(&mut rng, &[1, 3], -1.0, 1.0)).collect();
        let mut tr = TraceState::zeros(1, 3, 2);
        for (t, pre) in pres.iter().enumerate() {
            tr = eprop_trace_step(&cell, 0.5, pre, &Tensor::full(&[1, 2], 0.1), &tr).unwrap();
            for i in 0..3 {
                let want: f64 = (0..=t).map(|s| alpha.powi((t - s) as i32) * pres[s].data()[i]).sum();
                for j in 0..2 {
                    assert!((tr.eps_v.get(&[0, i, j]).unwrap() - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn shape_mismatch_is_error() {
        let cell = CellParams::Lif(lif(0.9, 2, 3));
        let tr = TraceState::zeros(1, 2, 3);
        assert!(eprop_trace_step(&cell, 0.9, &Tensor::zeros(&[1, 3]), &Tensor::zeros(&[1, 3]), &tr).is_err());
    }

    #[test]
    fn adaptive_feedback_follows_readout() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = crate::neurons::RecurrentConfig::new(crate::neurons::CellKind::Lif, 2, 4, 3);
        let net = RecurrentNet::init(&cfg, &mut rng).unwrap();
        let mut fb = BroadcastMatrix::new(FeedbackMode::Adaptive, &net, &mut rng).unwrap();
        let before = fb.b.clone();
        let delta = random(&mut rng, &[4, 3], -0.1, 0.1);
        fb.observe_readout_delta(&delta).unwrap();
        let moved = fb.b.sub(&before).unwrap();
        assert!(moved.sub(&delta.transpose().unwrap()).unwrap().max_abs() < 1e-15);

        let mut fixed = BroadcastMatrix::new(FeedbackMode::Random, &net, &mut rng).unwrap();
        let b0 = fixed.b.clone();
        fixed.observe_readout_delta(&delta).unwrap();
        assert_eq!(fixed.b, b0);
    }

    #[test]
    fn dense_model_is_rejected_by_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = Model::Mlp(crate::neurons::Mlp::init(&[2, 2], crate::neurons::Activation::Relu, &mut rng).unwrap());
        let err = unsupported_architecture(&model).to_string();
        assert!(err.contains("layer0"), "{err}");
    }
}
