//! Metropolis-adjusted Langevin sampling over flattened parameter vectors.
//!
//! With `U = −log π` and `g = ∇U`, the step size is `s = σ / max(1, ‖g‖)` and
//! the proposal `θ' = θ − (s²/2)·g + s·ξ`. Because `s` depends on `θ`, the
//! proposal is asymmetric even in its normalising constant, so the
//! Metropolis-Hastings ratio carries the `−d·ln s` terms as well.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::bptt::bptt_gradients;
use super::objective::Objective;
use crate::data::Batch;
use crate::error::{invalid, Result};
use crate::neurons::{Model, W_REC};
use crate::numerics::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MalaConfig {
    /// Initial diffusion scale.
    pub sigma0: f64,
    pub target_accept: f64,
    /// Gain of the multiplicative step-size adaptation.
    pub adapt_rate: f64,
    pub prior_std: f64,
    pub temperature: f64,
    /// `false` drops the gradient term (random-walk Metropolis with `s = σ`).
    pub drift: bool,
}

impl Default for MalaConfig {
    fn default() -> Self {
        Self {
            sigma0: 0.01,
            target_accept: 0.574,
            adapt_rate: 0.05,
            prior_std: 1.0,
            temperature: 1.0,
            drift: true,
        }
    }
}

impl MalaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma0 > 0.0 && self.sigma0.is_finite()) {
            return Err(invalid(format!("sigma0 must be positive, got {}", self.sigma0)));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(invalid(format!("target_accept must lie in (0,1), got {}", self.target_accept)));
        }
        if !(self.adapt_rate >= 0.0) {
            return Err(invalid("adapt_rate must be non-negative"));
        }
        if !(self.prior_std > 0.0 && self.temperature > 0.0) {
            return Err(invalid("prior_std and temperature must be positive"));
        }
        Ok(())
    }
}

/// Target density known up to a constant.
pub trait LogPosterior {
    fn dim(&self) -> usize;

    /// `log π(θ)` and `∇ log π(θ)`. May return a non-finite value, which the
    /// sampler treats as zero density.
    fn evaluate(&mut self, theta: &[f64]) -> Result<(f64, Vec<f64>)>;

    /// Coordinates the chain may move; fixed ones never receive noise.
    fn free_mask(&self) -> Vec<bool> {
        vec![true; self.dim()]
    }
}

/// Current position of a chain and its cached evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub theta: Vec<f64>,
    pub log_post: f64,
    /// `∇U = −∇ log π`
    pub grad: Vec<f64>,
    pub sigma: f64,
}

impl ChainState {
    pub fn start(target: &mut dyn LogPosterior, theta: Vec<f64>, sigma: f64) -> Result<Self> {
        if theta.len() != target.dim() {
            return Err(invalid(format!("start point has {} coordinates, target has {}", theta.len(), target.dim())));
        }
        let (lp, g) = target.evaluate(&theta)?;
        if !lp.is_finite() {
            return Err(invalid("log-posterior is not finite at the start point"));
        }
        Ok(Self {
            theta,
            log_post: lp,
            grad: g.into_iter().map(|v| -v).collect(),
            sigma,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub accepted: bool,
    pub accept_prob: f64,
    pub log_post: f64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Gradient-scaled step size for diffusion scale `sigma`.
pub fn step_size(sigma: f64, grad: &[f64], drift: bool) -> f64 {
    if drift {
        sigma / norm(grad).max(1.0)
    } else {
        sigma
    }
}

/// `log q(to | from)` up to a constant shared by both directions.
fn log_q(to: &[f64], from: &[f64], grad_from: &[f64], s: f64, drift: bool, mask: &[bool]) -> f64 {
    let d = mask.iter().filter(|&&m| m).count() as f64;
    let c = if drift { s * s / 2.0 } else { 0.0 };
    let sq: f64 = (0..to.len())
        .filter(|&i| mask[i])
        .map(|i| {
            let r = to[i] - from[i] + c * grad_from[i];
            r * r
        })
        .sum();
    -d * s.ln() - sq / (2.0 * s * s)
}

/// `log q(θ|θ') − log q(θ'|θ)`; identically zero without drift.
pub fn proposal_log_ratio(
    theta: &[f64],
    grad: &[f64],
    proposal: &[f64],
    proposal_grad: &[f64],
    sigma: f64,
    drift: bool,
    mask: &[bool],
) -> f64 {
    if !drift {
        return 0.0;
    }
    let s_fwd = step_size(sigma, grad, drift);
    let s_rev = step_size(sigma, proposal_grad, drift);
    log_q(theta, proposal, proposal_grad, s_rev, drift, mask) - log_q(proposal, theta, grad, s_fwd, drift, mask)
}

/// One Metropolis-adjusted Langevin transition. With `adapt`, `σ` moves
/// multiplicatively toward the target acceptance rate.
pub fn mala_step(
    target: &mut dyn LogPosterior,
    state: &mut ChainState,
    cfg: &MalaConfig,
    adapt: bool,
    rng: &mut impl Rng,
) -> Result<StepInfo> {
    let mask = target.free_mask();
    let s = step_size(state.sigma, &state.grad, cfg.drift);
    let c = if cfg.drift { s * s / 2.0 } else { 0.0 };
    let proposal: Vec<f64> = (0..state.theta.len())
        .map(|i| {
            if mask[i] {
                let xi: f64 = rng.sample(StandardNormal);
                state.theta[i] - c * state.grad[i] + s * xi
            } else {
                state.theta[i]
            }
        })
        .collect();
    let (lp_new, g_new) = target.evaluate(&proposal)?;
    let grad_new: Vec<f64> = g_new.into_iter().map(|v| -v).collect();
    let finite = lp_new.is_finite() && grad_new.iter().all(|v| v.is_finite());
    let accept_prob = if finite {
        let log_ratio = lp_new - state.log_post
            + proposal_log_ratio(&state.theta, &state.grad, &proposal, &grad_new, state.sigma, cfg.drift, &mask);
        if log_ratio.is_nan() {
            0.0
        } else {
            log_ratio.min(0.0).exp()
        }
    } else {
        0.0
    };
    let u: f64 = rng.gen();
    let accepted = u < accept_prob;
    if accepted {
        state.theta = proposal;
        state.log_post = lp_new;
        state.grad = grad_new;
    }
    if adapt {
        state.sigma *= (cfg.adapt_rate * (accept_prob - cfg.target_accept)).exp();
    }
    Ok(StepInfo {
        accepted,
        accept_prob,
        log_post: state.log_post,
    })
}

/// Samples kept after burn-in, with per-step bookkeeping for the whole run.
#[derive(Debug, Clone)]
pub struct ChainRun {
    pub samples: Vec<Vec<f64>>,
    /// One entry per post-burn-in step.
    pub steps: Vec<StepInfo>,
    /// Step size used after burn-in.
    pub sigma: f64,
}

impl ChainRun {
    pub fn acceptance_rate(&self) -> f64 {
        if self.steps.is_empty() {
            return 0.0;
        }
        self.steps.iter().filter(|s| s.accepted).count() as f64 / self.steps.len() as f64
    }
}

/// Runs `burn_in` adapting steps, freezes `σ` at the average of its
/// logarithm over the second half of burn-in, then keeps every `thin`-th of
/// the next `samples·thin` states.
pub fn run_chain(
    target: &mut dyn LogPosterior,
    theta0: Vec<f64>,
    cfg: &MalaConfig,
    burn_in: usize,
    samples: usize,
    thin: usize,
    rng: &mut impl Rng,
) -> Result<ChainRun> {
    run_chain_with(target, theta0, cfg, burn_in, samples, thin, rng, |_, _| Ok(()))
}

/// As [`run_chain`], calling `on_sample(index, state)` for every kept sample.
#[allow(clippy::too_many_arguments)]
pub fn run_chain_with(
    target: &mut dyn LogPosterior,
    theta0: Vec<f64>,
    cfg: &MalaConfig,
    burn_in: usize,
    samples: usize,
    thin: usize,
    rng: &mut impl Rng,
    mut on_sample: impl FnMut(usize, &ChainState) -> Result<()>,
) -> Result<ChainRun> {
    cfg.validate()?;
    if thin == 0 {
        return Err(invalid("thinning interval must be at least 1"));
    }
    let mut state = ChainState::start(target, theta0, cfg.sigma0)?;
    let (mut log_sigma_sum, mut n_avg) = (0.0, 0usize);
    for i in 0..burn_in {
        mala_step(target, &mut state, cfg, cfg.adapt_rate > 0.0, rng)?;
        if i >= burn_in / 2 {
            log_sigma_sum += state.sigma.ln();
            n_avg += 1;
        }
    }
    if n_avg > 0 {
        state.sigma = (log_sigma_sum / n_avg as f64).exp();
    }
    let mut run = ChainRun {
        samples: Vec::with_capacity(samples),
        steps: Vec::with_capacity(samples * thin),
        sigma: state.sigma,
    };
    for k in 0..samples * thin {
        run.steps.push(mala_step(target, &mut state, cfg, false, rng)?);
        if (k + 1) % thin == 0 {
            on_sample(run.samples.len(), &state)?;
            run.samples.push(state.theta.clone());
        }
    }
    Ok(run)
}

/// A posterior draw of a model's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSample {
    pub params: ParamSet,
    pub log_post: f64,
    pub accepted: bool,
}

/// `log π(θ) = −temperature·N·mean_loss(θ) − ‖θ‖²/(2·prior_std²)` for a model
/// on a fixed dataset, with surrogate (BPTT) gradients.
pub struct ModelPosterior {
    pub model: Model,
    pub data: Batch,
    pub objective: Objective,
    pub prior_std: f64,
    pub temperature: f64,
    template: ParamSet,
    mask: Vec<bool>,
}

impl ModelPosterior {
    pub fn new(model: Model, data: Batch, objective: Objective, cfg: &MalaConfig) -> Result<Self> {
        cfg.validate()?;
        let template = model.params();
        // recurrent self-connections are structurally zero
        let mut mask = Vec::with_capacity(template.num_values());
        for (id, t) in &template {
            if id == W_REC && model.as_recurrent().is_some() {
                let n = t.rows();
                mask.extend((0..n * n).map(|k| k / n != k % n));
            } else {
                mask.extend(std::iter::repeat(true).take(t.len()));
            }
        }
        Ok(Self {
            model,
            data,
            objective,
            prior_std: cfg.prior_std,
            temperature: cfg.temperature,
            template,
            mask,
        })
    }

    pub fn initial_point(&self) -> Vec<f64> {
        self.model.params().flatten()
    }

    pub fn params_at(&self, theta: &[f64]) -> Result<ParamSet> {
        self.template.unflatten(theta)
    }
}

impl LogPosterior for ModelPosterior {
    fn dim(&self) -> usize {
        self.mask.len()
    }

    fn evaluate(&mut self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let params = self.template.unflatten(theta)?;
        self.model.set_params(&params)?;
        let n = self.data.len() as f64;
        let (loss, grads) = match bptt_gradients(&self.model, &self.data, &self.objective) {
            Ok(v) => v,
            // an overflowing proposal is simply rejected
            Err(crate::Error::NonFinite { .. }) => return Ok((f64::NEG_INFINITY, vec![0.0; theta.len()])),
            Err(e) => return Err(e),
        };
        let inv_var = 1.0 / (self.prior_std * self.prior_std);
        let sq: f64 = theta.iter().map(|v| v * v).sum();
        let lp = -self.temperature * n * loss - 0.5 * sq * inv_var;
        let grad: Vec<f64> = grads
            .flatten()
            .iter()
            .zip(theta)
            .zip(&self.mask)
            .map(|((g, t), &m)| if m { -self.temperature * n * g - t * inv_var } else { 0.0 })
            .collect();
        Ok((lp, grad))
    }

    fn free_mask(&self) -> Vec<bool> {
        self.mask.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Flat(usize);

    impl LogPosterior for Flat {
        fn dim(&self) -> usize {
            self.0
        }
        fn evaluate(&mut self, _: &[f64]) -> Result<(f64, Vec<f64>)> {
            Ok((0.0, vec![0.0; self.0]))
        }
    }

    struct Gauss;

    impl LogPosterior for Gauss {
        fn dim(&self) -> usize {
            3
        }
        fn evaluate(&mut self, t: &[f64]) -> Result<(f64, Vec<f64>)> {
            Ok((-0.5 * t.iter().map(|v| v * v).sum::<f64>(), t.iter().map(|v| -v).collect()))
        }
    }

    struct Cliff;

    impl LogPosterior for Cliff {
        fn dim(&self) -> usize {
            1
        }
        fn evaluate(&mut self, t: &[f64]) -> Result<(f64, Vec<f64>)> {
            Ok(if t[0] > 0.0 { (f64::NAN, vec![f64::NAN]) } else { (0.0, vec![0.0]) })
        }
    }

    #[test]
    fn flat_target_always_accepts() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut target = Flat(4);
        let mut st = ChainState::start(&mut target, vec![0.0; 4], 0.5).unwrap();
        for _ in 0..100 {
            let info = mala_step(&mut target, &mut st, &MalaConfig::default(), false, &mut rng).unwrap();
            assert_eq!(info.accept_prob, 1.0);
            assert!(info.accepted);
        }
    }

    #[test]
    fn no_drift_correction_vanishes() {
        let m = vec![true; 2];
        let r = proposal_log_ratio(&[0.0, 1.0], &[3.0, -2.0], &[0.5, 0.2], &[1.0, 1.0], 0.3, false, &m);
        assert_eq!(r, 0.0);
        // with drift it generally does not
        let r = proposal_log_ratio(&[0.0, 1.0], &[3.0, -2.0], &[0.5, 0.2], &[1.0, 1.0], 0.3, true, &m);
        assert!(r != 0.0);
    }

    #[test]
    fn ratio_is_antisymmetric() {
        let m = vec![true; 2];
        let (a, ga, b, gb) = ([0.1, -0.4], [2.0, 0.5], [0.3, 0.0], [-0.1, 4.0]);
        let f = proposal_log_ratio(&a, &ga, &b, &gb, 0.7, true, &m);
        let r = proposal_log_ratio(&b, &gb, &a, &ga, 0.7, true, &m);
        assert!((f + r).abs() < 1e-12);
    }

    #[test]
    fn non_finite_proposal_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut target = Cliff;
        let mut st = ChainState::start(&mut target, vec![-0.01], 1.0).unwrap();
        let cfg = MalaConfig {
            drift: false,
            ..MalaConfig::default()
        };
        for _ in 0..200 {
            mala_step(&mut target, &mut st, &cfg, false, &mut rng).unwrap();
            assert!(st.theta[0] <= 0.0);
            assert!(st.log_post.is_finite());
        }
    }

    #[test]
    fn adaptation_moves_sigma_toward_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = MalaConfig {
            sigma0: 50.0,
            drift: false,
            adapt_rate: 0.1,
            ..MalaConfig::default()
        };
        let run = run_chain(&mut Gauss, vec![0.0; 3], &cfg, 2000, 2000, 1, &mut rng).unwrap();
        assert!(run.sigma < 10.0);
        assert!((run.acceptance_rate() - cfg.target_accept).abs() < 0.1, "{}", run.acceptance_rate());
    }

    #[test]
    fn masked_coordinates_never_move() {
        struct Masked;
        impl LogPosterior for Masked {
            fn dim(&self) -> usize {
                2
            }
            fn evaluate(&mut self, t: &[f64]) -> Result<(f64, Vec<f64>)> {
                Ok((-0.5 * t[0] * t[0], vec![-t[0], 0.0]))
            }
            fn free_mask(&self) -> Vec<bool> {
                vec![true, false]
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let run = run_chain(&mut Masked, vec![0.0, 0.25], &MalaConfig::default(), 50, 50, 1, &mut rng).unwrap();
        assert!(run.samples.iter().all(|s| s[1] == 0.25));
    }
}
