use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::cell::{AlifParams, CellParams, CellState, LifParams};
use crate::error::{invalid, Error, Result};
use crate::numerics::{ParamSet, PseudoDerivative, Tape, Tensor, Var};

pub const W_IN: &str = "w_in";
pub const W_REC: &str = "w_rec";
pub const W_OUT: &str = "w_out";
pub const B_OUT: &str = "b_out";

/// Leaky linear readout `y' = κ·y + z·W_out + b_out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadoutParams {
    pub kappa: f64,
    /// `[n_rec × n_out]`
    pub w_out: Tensor,
    /// `[n_out]`
    pub b_out: Tensor,
}

impl ReadoutParams {
    pub fn n_out(&self) -> usize {
        self.b_out.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.kappa) {
            return Err(invalid(format!("kappa must lie in [0,1), got {}", self.kappa)));
        }
        if self.w_out.rank() != 2 || self.w_out.cols() != self.b_out.len() || self.b_out.rank() != 1 {
            return Err(Error::Shape {
                op: "readout params",
                left: self.w_out.shape().to_vec(),
                right: self.b_out.shape().to_vec(),
            });
        }
        Ok(())
    }
}

pub fn readout_step(params: &ReadoutParams, y_prev: &Tensor, z_t: &Tensor) -> Result<Tensor> {
    let b = z_t.rows();
    if y_prev.shape() != [b, params.n_out()] {
        return Err(Error::Shape {
            op: "readout_step",
            left: vec![b, params.n_out()],
            right: y_prev.shape().to_vec(),
        });
    }
    y_prev
        .scale(params.kappa)?
        .add(&z_t.matmul(&params.w_out)?)?
        .add(&params.b_out.expand_rows(b)?)
}

/// How per-step outputs become class scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputMode {
    /// Loss is averaged over every step; logits are the time-averaged outputs.
    #[default]
    EveryStep,
    /// Only the last step counts.
    FinalStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    Lif,
    Alif,
}

/// Construction parameters for [`RecurrentNet::init`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecurrentConfig {
    pub cell: CellKind,
    pub n_in: usize,
    pub n_rec: usize,
    pub n_out: usize,
    pub alpha: f64,
    pub rho: f64,
    pub beta: f64,
    pub kappa: f64,
    pub v_th: f64,
    pub pseudo: PseudoDerivative,
    /// Simulation step in seconds.
    pub dt: f64,
    pub output_mode: OutputMode,
    /// Multiplies the default `1/sqrt(fan_in)` weight scale.
    pub weight_scale: f64,
}

impl RecurrentConfig {
    /// 20 ms membrane, 200 ms adaptation and 20 ms readout time constants at 1 ms steps.
    pub fn new(cell: CellKind, n_in: usize, n_rec: usize, n_out: usize) -> Self {
        Self {
            cell,
            n_in,
            n_rec,
            n_out,
            alpha: (-1.0f64 / 20.0).exp(),
            rho: (-1.0f64 / 200.0).exp(),
            beta: 0.07,
            kappa: (-1.0f64 / 20.0).exp(),
            v_th: 1.0,
            pseudo: PseudoDerivative::default(),
            dt: 1e-3,
            output_mode: OutputMode::EveryStep,
            weight_scale: 1.0,
        }
    }
}

/// Single recurrent spiking layer with a leaky readout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecurrentNet {
    pub cell: CellParams,
    pub readout: ReadoutParams,
    pub dt: f64,
    pub output_mode: OutputMode,
}

/// Forward trajectory of a plain (untaped) unroll.
#[derive(Debug, Clone)]
pub struct Unrolled {
    /// `[batch × T × n_rec]`
    pub spikes: Tensor,
    /// `[batch × T × n_out]`
    pub outputs: Tensor,
    /// State after each step.
    pub states: Vec<CellState>,
}

/// Vars produced by recording an unroll on a tape.
#[derive(Debug, Clone)]
pub struct RecordedRun {
    /// One `[batch × n_out]` var per step.
    pub outputs: Vec<Var>,
    /// One `[batch × n_rec]` var per step.
    pub spikes: Vec<Var>,
}

pub(crate) fn gaussian(rng: &mut impl Rng, shape: &[usize], std: f64) -> Tensor {
    let normal = Normal::new(0.0, std).expect("finite std");
    let n = shape.iter().product();
    let data = (0..n).map(|_| normal.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data).expect("finite gaussian samples")
}

pub(crate) fn dims3(x: &Tensor) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [b, t, d] => Ok((b, t, d)),
        _ => Err(invalid(format!(
            "expected a [batch × T × features] input, got {:?}",
            x.shape()
        ))),
    }
}

impl RecurrentNet {
    pub fn init(cfg: &RecurrentConfig, rng: &mut impl Rng) -> Result<Self> {
        if cfg.n_in == 0 || cfg.n_rec == 0 || cfg.n_out == 0 {
            return Err(invalid("layer sizes must be positive"));
        }
        if !(cfg.dt > 0.0) {
            return Err(invalid(format!("dt must be positive, got {}", cfg.dt)));
        }
        let s = cfg.weight_scale;
        let w_in = gaussian(rng, &[cfg.n_in, cfg.n_rec], s / (cfg.n_in as f64).sqrt());
        let mut w_rec = gaussian(rng, &[cfg.n_rec, cfg.n_rec], s / (cfg.n_rec as f64).sqrt());
        w_rec.zero_diagonal()?;
        let w_out = gaussian(rng, &[cfg.n_rec, cfg.n_out], 1.0 / (cfg.n_rec as f64).sqrt());
        let lif = LifParams {
            alpha: cfg.alpha,
            v_th: cfg.v_th,
            w_in,
            w_rec,
            pseudo: cfg.pseudo,
        };
        let cell = match cfg.cell {
            CellKind::Lif => CellParams::Lif(lif),
            CellKind::Alif => CellParams::Alif(AlifParams {
                lif,
                rho: cfg.rho,
                beta: cfg.beta,
            }),
        };
        let net = Self {
            cell,
            readout: ReadoutParams {
                kappa: cfg.kappa,
                w_out,
                b_out: Tensor::zeros(&[cfg.n_out]),
            },
            dt: cfg.dt,
            output_mode: cfg.output_mode,
        };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        self.cell.validate()?;
        self.readout.validate()?;
        if self.readout.w_out.rows() != self.n_rec() {
            return Err(Error::Shape {
                op: "readout rows",
                left: vec![self.n_rec()],
                right: self.readout.w_out.shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn n_in(&self) -> usize {
        self.cell.lif().n_in()
    }

    pub fn n_rec(&self) -> usize {
        self.cell.lif().n_rec()
    }

    pub fn n_out(&self) -> usize {
        self.readout.n_out()
    }

    pub fn params(&self) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert(W_IN, self.cell.lif().w_in.clone());
        p.insert(W_REC, self.cell.lif().w_rec.clone());
        p.insert(W_OUT, self.readout.w_out.clone());
        p.insert(B_OUT, self.readout.b_out.clone());
        p
    }

    /// Replaces all parameters; the recurrent diagonal is cleared afterwards.
    pub fn set_params(&mut self, params: &ParamSet) -> Result<()> {
        let current = self.params();
        if !current.same_keys(params) {
            return Err(invalid(format!(
                "expected parameters {:?}, got {:?}",
                current.keys().collect::<Vec<_>>(),
                params.keys().collect::<Vec<_>>()
            )));
        }
        for (k, v) in &current {
            let new = params.require(k)?;
            if new.shape() != v.shape() {
                return Err(Error::Shape {
                    op: "set_params",
                    left: v.shape().to_vec(),
                    right: new.shape().to_vec(),
                });
            }
        }
        let lif = self.cell.lif_mut();
        lif.w_in = params.require(W_IN)?.clone();
        lif.w_rec = params.require(W_REC)?.clone();
        self.readout.w_out = params.require(W_OUT)?.clone();
        self.readout.b_out = params.require(B_OUT)?.clone();
        self.cell.clear_self_loops()
    }

    fn check_input(&self, x: &Tensor) -> Result<(usize, usize)> {
        let (b, t, d) = dims3(x)?;
        if t == 0 {
            return Err(invalid("sequence length T must be at least 1"));
        }
        if d != self.n_in() {
            return Err(Error::Shape {
                op: "unroll input",
                left: vec![b, t, self.n_in()],
                right: x.shape().to_vec(),
            });
        }
        Ok((b, t))
    }

    /// Plain forward pass, calling `visit(t, state, psi, y)` after every step.
    pub(crate) fn simulate(
        &self,
        x: &Tensor,
        mut visit: impl FnMut(usize, &CellState, &Tensor, &Tensor) -> Result<()>,
    ) -> Result<()> {
        let (b, t_len) = self.check_input(x)?;
        let mut state = CellState::zeros(b, self.n_rec());
        let mut y = Tensor::zeros(&[b, self.n_out()]);
        for t in 0..t_len {
            let x_t = x.select(1, t)?;
            let (next, psi) = self.cell.step_with_pseudo(&state, &x_t)?;
            y = readout_step(&self.readout, &y, &next.z)?;
            visit(t, &next, &psi, &y)?;
            state = next;
        }
        Ok(())
    }

    pub fn unroll(&self, x: &Tensor) -> Result<Unrolled> {
        let mut states = Vec::new();
        let mut outputs = Vec::new();
        self.simulate(x, |_, s, _, y| {
            states.push(s.clone());
            outputs.push(y.clone());
            Ok(())
        })?;
        let spikes: Vec<Tensor> = states.iter().map(|s| s.z.clone()).collect();
        Ok(Unrolled {
            spikes: Tensor::stack(&spikes, 1)?,
            outputs: Tensor::stack(&outputs, 1)?,
            states,
        })
    }

    /// Records the unroll on `tape`, registering the four parameters as tracked.
    /// `backward()` through the result yields BPTT gradients with the
    /// pseudo-derivative standing in for the spike derivative.
    pub fn record(&self, tape: &mut Tape, x: &Tensor) -> Result<RecordedRun> {
        let (b, t_len) = self.check_input(x)?;
        let lif = self.cell.lif();
        let (rho, beta) = self.cell.adaptation();
        let w_in = tape.param(W_IN, lif.w_in.clone())?;
        let w_rec = tape.param(W_REC, lif.w_rec.clone())?;
        let w_out = tape.param(W_OUT, self.readout.w_out.clone())?;
        let b_out = tape.param(B_OUT, self.readout.b_out.clone())?;
        let zeros = tape.constant(Tensor::zeros(&[b, self.n_rec()]))?;
        let (mut v, mut a, mut z) = (zeros, zeros, zeros);
        let mut y = tape.constant(Tensor::zeros(&[b, self.n_out()]))?;
        let mut run = RecordedRun {
            outputs: Vec::with_capacity(t_len),
            spikes: Vec::with_capacity(t_len),
        };
        for t in 0..t_len {
            let x_t = tape.constant(x.select(1, t)?)?;
            let leak = tape.scale(v, lif.alpha)?;
            let i_in = tape.matmul(x_t, w_in)?;
            let i_rec = tape.matmul(z, w_rec)?;
            let v_in = tape.add(leak, i_in)?;
            let v_in = tape.add(v_in, i_rec)?;
            let diff = if self.cell.is_adaptive() {
                let ba = tape.scale(a, beta)?;
                let thr_old = tape.add_scalar(ba, lif.v_th)?;
                let reset = tape.mul(z, thr_old)?;
                v = tape.sub(v_in, reset)?;
                let decayed = tape.scale(a, rho)?;
                a = tape.add(decayed, z)?;
                let ba = tape.scale(a, beta)?;
                let thr_new = tape.add_scalar(ba, lif.v_th)?;
                tape.sub(v, thr_new)?
            } else {
                let reset = tape.scale(z, lif.v_th)?;
                v = tape.sub(v_in, reset)?;
                tape.add_scalar(v, -lif.v_th)?
            };
            z = tape.heaviside_with_pseudo(diff, &lif.pseudo, lif.v_th)?;
            let ky = tape.scale(y, self.readout.kappa)?;
            let zw = tape.matmul(z, w_out)?;
            let bias = tape.expand_rows(b_out, b)?;
            let y_in = tape.add(ky, zw)?;
            y = tape.add(y_in, bias)?;
            run.outputs.push(y);
            run.spikes.push(z);
        }
        Ok(run)
    }

    /// Class scores from per-step outputs `[batch × T × n_out]`.
    pub fn logits_from_outputs(&self, outputs: &Tensor) -> Result<Tensor> {
        let (_, t_len, _) = dims3(outputs)?;
        match self.output_mode {
            OutputMode::EveryStep => outputs.sum_axis(1)?.scale(1.0 / t_len as f64),
            OutputMode::FinalStep => outputs.select(1, t_len - 1),
        }
    }
}

/// Mean spikes per neuron per second for spikes `[batch × T × n_rec]`.
pub fn firing_rate(spikes: &Tensor, dt: f64) -> f64 {
    if spikes.is_empty() {
        return 0.0;
    }
    spikes.mean() / dt
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net(cell: CellKind, seed: u64) -> RecurrentNet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cfg = RecurrentConfig::new(cell, 3, 5, 2);
        cfg.weight_scale = 3.0;
        RecurrentNet::init(&cfg, &mut rng).unwrap()
    }

    fn input(b: usize, t: usize, d: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        gaussian(&mut rng, &[b, t, d], 1.0)
    }

    #[test]
    fn readout_examples() {
        let p = ReadoutParams {
            kappa: 0.5,
            w_out: Tensor::matrix(1, 1, vec![1.0]).unwrap(),
            b_out: Tensor::zeros(&[1]),
        };
        let y = Tensor::matrix(1, 1, vec![2.0]).unwrap();
        let z = Tensor::matrix(1, 1, vec![1.0]).unwrap();
        assert_eq!(readout_step(&p, &y, &z).unwrap().data(), &[2.0]);
        let silent = Tensor::zeros(&[1, 1]);
        assert_eq!(readout_step(&p, &y, &silent).unwrap().data(), &[1.0]);
        let memoryless = ReadoutParams { kappa: 0.0, ..p };
        assert_eq!(readout_step(&memoryless, &y, &z).unwrap().data(), &[1.0]);
        assert!(readout_step(&memoryless, &Tensor::zeros(&[1, 2]), &z).is_err());
    }

    #[test]
    fn t1_equals_single_step() {
        let n = net(CellKind::Alif, 1);
        let x = input(2, 1, 3, 2);
        let u = n.unroll(&x).unwrap();
        let s = n
            .cell
            .step(&CellState::zeros(2, 5), &x.select(1, 0).unwrap())
            .unwrap();
        assert_eq!(u.states[0], s);
    }

    #[test]
    fn zero_input_zero_output() {
        let n = net(CellKind::Alif, 3);
        let u = n.unroll(&Tensor::zeros(&[2, 7, 3])).unwrap();
        assert_eq!(u.spikes.sum(), 0.0);
        assert_eq!(u.outputs.max_abs(), 0.0);
    }

    #[test]
    fn empty_sequence_rejected() {
        let n = net(CellKind::Lif, 3);
        assert!(n.unroll(&Tensor::zeros(&[2, 0, 3])).is_err());
    }

    #[test]
    fn firing_rate_from_spikes() {
        let n = net(CellKind::Lif, 4);
        let u = n.unroll(&input(3, 20, 3, 5)).unwrap();
        let total: f64 = u.states.iter().map(|s| s.z.sum()).sum();
        let by_hand = total / (3.0 * 20.0 * 5.0) / n.dt;
        assert!((firing_rate(&u.spikes, n.dt) - by_hand).abs() < 1e-9);
        assert!(by_hand > 0.0);
    }

    #[test]
    fn taped_and_plain_unrolls_agree_exactly() {
        for kind in [CellKind::Lif, CellKind::Alif] {
            let n = net(kind, 7);
            let x = input(2, 12, 3, 8);
            let u = n.unroll(&x).unwrap();
            let mut tape = Tape::begin();
            let run = n.record(&mut tape, &x).unwrap();
            for t in 0..12 {
                assert_eq!(
                    tape.value(run.spikes[t]).unwrap(),
                    &u.spikes.select(1, t).unwrap()
                );
                assert_eq!(
                    tape.value(run.outputs[t]).unwrap(),
                    &u.outputs.select(1, t).unwrap()
                );
            }
        }
    }

    #[test]
    fn geometric_decay_without_input() {
        let mut n = net(CellKind::Lif, 9);
        let lif = n.cell.lif_mut();
        lif.w_rec = Tensor::zeros(&[5, 5]);
        let alpha = lif.alpha;
        let mut state = CellState::zeros(1, 5);
        state.v = Tensor::matrix(1, 5, vec![0.5, -0.3, 0.9, 0.0, 0.2]).unwrap();
        let v0 = state.v.clone();
        let x = Tensor::zeros(&[1, 3]);
        for t in 1..=30 {
            state = n.cell.step(&state, &x).unwrap();
            let expected = v0.scale(alpha.powi(t)).unwrap();
            for (a, b) in state.v.data().iter().zip(expected.data()) {
                assert!((a - b).abs() < 1e-12);
            }
            assert_eq!(state.z.sum(), 0.0);
        }
    }

    #[test]
    fn set_params_clears_diagonal() {
        let mut n = net(CellKind::Lif, 11);
        let mut p = n.params();
        *p.get_mut(W_REC).unwrap() = Tensor::ones(&[5, 5]);
        n.set_params(&p).unwrap();
        let w = &n.cell.lif().w_rec;
        for i in 0..5 {
            assert_eq!(w.get(&[i, i]).unwrap(), 0.0);
        }
        let mut bad = n.params();
        bad.insert("extra", Tensor::zeros(&[1]));
        assert!(n.set_params(&bad).is_err());
    }
}
