use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numerics::{heaviside_with_pseudo, PseudoDerivative, Tensor};

/// Leaky integrate-and-fire layer with soft reset and one-step recurrent delay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LifParams {
    /// Membrane decay per step, in (0, 1).
    pub alpha: f64,
    pub v_th: f64,
    /// `[n_in × n_rec]`
    pub w_in: Tensor,
    /// `[n_rec × n_rec]`, zero diagonal.
    pub w_rec: Tensor,
    pub pseudo: PseudoDerivative,
}

/// LIF plus an adaptive threshold `v_th + beta · a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlifParams {
    pub lif: LifParams,
    /// Adaptation decay per step, in (0, 1).
    pub rho: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CellParams {
    Lif(LifParams),
    Alif(AlifParams),
}

/// Neuron state at one time step; all fields are `[batch × n_rec]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellState {
    pub v: Tensor,
    /// Threshold adaptation, identically zero for LIF.
    pub a: Tensor,
    pub z: Tensor,
}

impl CellState {
    pub fn zeros(batch: usize, n_rec: usize) -> Self {
        Self {
            v: Tensor::zeros(&[batch, n_rec]),
            a: Tensor::zeros(&[batch, n_rec]),
            z: Tensor::zeros(&[batch, n_rec]),
        }
    }
}

impl LifParams {
    pub fn n_in(&self) -> usize {
        self.w_in.rows()
    }

    pub fn n_rec(&self) -> usize {
        self.w_rec.rows()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(invalid(format!("alpha must lie in (0,1), got {}", self.alpha)));
        }
        if !(self.v_th > 0.0) {
            return Err(invalid(format!("v_th must be positive, got {}", self.v_th)));
        }
        let n = self.w_rec.rows();
        if self.w_rec.shape() != [n, n] || self.w_in.rank() != 2 || self.w_in.cols() != n {
            return Err(Error::Shape {
                op: "lif params",
                left: self.w_in.shape().to_vec(),
                right: self.w_rec.shape().to_vec(),
            });
        }
        Ok(())
    }
}

impl AlifParams {
    pub fn validate(&self) -> Result<()> {
        self.lif.validate()?;
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(invalid(format!("rho must lie in (0,1), got {}", self.rho)));
        }
        if !(self.beta >= 0.0) {
            return Err(invalid(format!("beta must be non-negative, got {}", self.beta)));
        }
        Ok(())
    }
}

impl CellParams {
    pub fn lif(&self) -> &LifParams {
        match self {
            CellParams::Lif(p) => p,
            CellParams::Alif(p) => &p.lif,
        }
    }

    pub fn lif_mut(&mut self) -> &mut LifParams {
        match self {
            CellParams::Lif(p) => p,
            CellParams::Alif(p) => &mut p.lif,
        }
    }

    pub fn is_adaptive(&self) -> bool {
        matches!(self, CellParams::Alif(_))
    }

    /// Adaptation decay and coupling; `(0, 0)` for LIF.
    pub fn adaptation(&self) -> (f64, f64) {
        match self {
            CellParams::Lif(_) => (0.0, 0.0),
            CellParams::Alif(p) => (p.rho, p.beta),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            CellParams::Lif(p) => p.validate(),
            CellParams::Alif(p) => p.validate(),
        }
    }

    /// One update; also returns the pseudo-derivative at the new state.
    pub fn step_with_pseudo(&self, state: &CellState, x_t: &Tensor) -> Result<(CellState, Tensor)> {
        let lif = self.lif();
        check_state(lif, state, x_t)?;
        let v_in = state
            .v
            .scale(lif.alpha)?
            .add(&x_t.matmul(&lif.w_in)?)?
            .add(&state.z.matmul(&lif.w_rec)?)?;
        match self {
            CellParams::Lif(_) => {
                let v_new = v_in.sub(&state.z.scale(lif.v_th)?)?;
                let (z, psi) = heaviside_with_pseudo(&v_new.add_scalar(-lif.v_th)?, &lif.pseudo, lif.v_th)?;
                Ok((
                    CellState {
                        v: v_new,
                        a: state.a.clone(),
                        z,
                    },
                    psi,
                ))
            }
            CellParams::Alif(p) => {
                let thr_old = state.a.scale(p.beta)?.add_scalar(lif.v_th)?;
                let v_new = v_in.sub(&state.z.mul(&thr_old)?)?;
                let a_new = state.a.scale(p.rho)?.add(&state.z)?;
                let thr_new = a_new.scale(p.beta)?.add_scalar(lif.v_th)?;
                let (z, psi) = heaviside_with_pseudo(&v_new.sub(&thr_new)?, &lif.pseudo, lif.v_th)?;
                Ok((
                    CellState {
                        v: v_new,
                        a: a_new,
                        z,
                    },
                    psi,
                ))
            }
        }
    }

    pub fn step(&self, state: &CellState, x_t: &Tensor) -> Result<CellState> {
        self.step_with_pseudo(state, x_t).map(|(s, _)| s)
    }

    /// Re-imposes the no-self-connection constraint.
    pub fn clear_self_loops(&mut self) -> Result<()> {
        self.lif_mut().w_rec.zero_diagonal()
    }
}

fn check_state(p: &LifParams, state: &CellState, x_t: &Tensor) -> Result<()> {
    let n = p.n_rec();
    let b = state.v.rows();
    let expected = [b, n];
    for t in [&state.v, &state.a, &state.z] {
        if t.shape() != expected {
            return Err(Error::Shape {
                op: "cell state",
                left: expected.to_vec(),
                right: t.shape().to_vec(),
            });
        }
    }
    if x_t.shape() != [b, p.n_in()] {
        return Err(Error::Shape {
            op: "cell input",
            left: vec![b, p.n_in()],
            right: x_t.shape().to_vec(),
        });
    }
    Ok(())
}

/// `v' = α·v + x·W_in + z·W_rec − z·v_th`, `z' = H(v' − v_th)`.
pub fn lif_step(params: &LifParams, state: &CellState, x_t: &Tensor) -> Result<CellState> {
    CellParams::Lif(params.clone()).step(state, x_t)
}

/// As [`lif_step`] with reset by the effective threshold `v_th + β·a`,
/// `a' = ρ·a + z` and `z' = H(v' − v_th − β·a')`.
pub fn alif_step(params: &AlifParams, state: &CellState, x_t: &Tensor) -> Result<CellState> {
    CellParams::Alif(params.clone()).step(state, x_t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_lif(alpha: f64, w_in: f64) -> LifParams {
        LifParams {
            alpha,
            v_th: 1.0,
            w_in: Tensor::matrix(1, 1, vec![w_in]).unwrap(),
            w_rec: Tensor::zeros(&[1, 1]),
            pseudo: PseudoDerivative::default(),
        }
    }

    fn one(x: f64) -> Tensor {
        Tensor::matrix(1, 1, vec![x]).unwrap()
    }

    #[test]
    fn lif_update_equation() {
        let p = scalar_lif(0.9, 1.0);
        let s = CellState {
            v: one(0.5),
            a: one(0.0),
            z: one(0.0),
        };
        let next = lif_step(&p, &s, &one(0.6)).unwrap();
        assert!((next.v.data()[0] - 1.05).abs() < 1e-12);
        assert_eq!(next.z.data(), &[1.0]);
    }

    #[test]
    fn zero_stays_zero() {
        let p = scalar_lif(0.9, 1.0);
        let s = CellState::zeros(1, 1);
        assert_eq!(lif_step(&p, &s, &one(0.0)).unwrap(), s);
    }

    #[test]
    fn threshold_is_inclusive() {
        let p = scalar_lif(0.5, 1.0);
        let s = CellState::zeros(1, 1);
        let next = lif_step(&p, &s, &one(1.0)).unwrap();
        assert_eq!(next.v.data(), &[1.0]);
        assert_eq!(next.z.data(), &[1.0]);
    }

    #[test]
    fn adaptation_update() {
        let p = AlifParams {
            lif: scalar_lif(0.9, 0.0),
            rho: 0.5,
            beta: 0.0,
        };
        let s = CellState {
            v: one(0.0),
            a: one(1.0),
            z: one(1.0),
        };
        let next = alif_step(&p, &s, &one(0.0)).unwrap();
        assert!((next.a.data()[0] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn spike_raises_effective_threshold() {
        // rho close to 1: after a spike the neuron needs v' ≥ v_th + beta to fire again
        let p = AlifParams {
            lif: scalar_lif(0.9, 1.0),
            rho: 0.999_999,
            beta: 1.6,
        };
        let s = CellState {
            v: one(0.0),
            a: one(0.0),
            z: one(1.0),
        };
        // v' = 0.9·0 + x − 1·(1 + 1.6·0) = x − 1
        let below = alif_step(&p, &s, &one(1.0 + 1.0 + 1.5)).unwrap();
        assert!((below.v.data()[0] - 2.5).abs() < 1e-12);
        assert_eq!(below.z.data(), &[0.0], "2.5 < 1 + 1.6");
        let above = alif_step(&p, &s, &one(1.0 + 1.0 + 1.7)).unwrap();
        assert_eq!(above.z.data(), &[1.0]);
        // the same drive makes a plain LIF neuron fire
        let lif = lif_step(&p.lif, &s, &one(2.5 + 1.0)).unwrap();
        assert_eq!(lif.z.data(), &[1.0]);
    }

    #[test]
    fn shape_mismatch() {
        let p = scalar_lif(0.9, 1.0);
        let s = CellState::zeros(1, 1);
        assert!(lif_step(&p, &s, &Tensor::zeros(&[1, 2])).is_err());
        assert!(lif_step(&p, &CellState::zeros(1, 3), &one(0.0)).is_err());
    }

    #[test]
    fn invalid_constants() {
        let mut p = scalar_lif(1.0, 1.0);
        assert!(p.validate().is_err());
        p.alpha = 0.5;
        p.v_th = 0.0;
        assert!(p.validate().is_err());
        let a = AlifParams {
            lif: scalar_lif(0.5, 1.0),
            rho: 0.5,
            beta: -1.0,
        };
        assert!(a.validate().is_err());
    }
}
