//! Learning rules: exact BPTT, e-prop with three feedback variants, the
//! Manhattan sign rule and a Langevin posterior sampler.

mod bptt;
mod eprop;
mod mala;
mod manhattan;
mod objective;
mod posterior;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use bptt::bptt_gradients;
pub use eprop::{eprop_gradients, eprop_trace_step, BroadcastMatrix, FeedbackMode, TraceState};
pub use mala::{
    mala_step, proposal_log_ratio, run_chain, run_chain_with, step_size, ChainRun, ChainState, LogPosterior,
    MalaConfig, ModelPosterior, StepInfo, WeightSample,
};
pub use manhattan::{manhattan_update, ManhattanConfig};
pub use objective::{firing_rate_regularizer, neuron_rates, FiringRateRegularizer, LossKind, Objective};
pub use posterior::{entropy, posterior_predict, summarize, PosteriorPrediction};

use crate::data::Batch;
use crate::error::{invalid, Result};
use crate::neurons::{Model, W_OUT};
use crate::numerics::{GradientSet, ParamSet};

/// What a rule hands to the training loop.
#[derive(Debug, Clone, PartialEq)]
pub enum RuleOutput {
    /// Loss gradients, to be turned into an update by an optimizer.
    Gradients(GradientSet),
    /// Ready-made weight changes, applied as they are.
    Deltas(GradientSet),
}

impl RuleOutput {
    pub fn values(&self) -> &GradientSet {
        match self {
            RuleOutput::Gradients(g) | RuleOutput::Deltas(g) => g,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuleStep {
    pub output: RuleOutput,
    /// Batch loss at the parameters the rule saw.
    pub loss: f64,
}

pub trait LearningRule: Send {
    fn name(&self) -> String;

    /// `Ok` when the rule can train `model`, otherwise the reason it cannot.
    fn supports(&self, model: &Model) -> Result<()>;

    /// Called once before the first step.
    fn prepare(&mut self, _model: &Model, _rng: &mut ChaCha8Rng) -> Result<()> {
        Ok(())
    }

    fn compute(&mut self, model: &Model, batch: &Batch, objective: &Objective) -> Result<RuleStep>;

    /// Told about the update that was actually applied to the model.
    fn observe_applied(&mut self, _applied: &GradientSet) -> Result<()> {
        Ok(())
    }

    /// Restricts parameters to what the rule can represent.
    fn constrain(&self, params: ParamSet) -> Result<ParamSet> {
        Ok(params)
    }

    /// Number of `compute` calls so far.
    fn invocations(&self) -> usize;
}

#[derive(Debug, Default)]
pub struct BpttRule {
    calls: usize,
}

impl LearningRule for BpttRule {
    fn name(&self) -> String {
        "bptt".into()
    }

    fn supports(&self, _model: &Model) -> Result<()> {
        Ok(())
    }

    fn compute(&mut self, model: &Model, batch: &Batch, objective: &Objective) -> Result<RuleStep> {
        self.calls += 1;
        let (loss, g) = bptt_gradients(model, batch, objective)?;
        Ok(RuleStep {
            output: RuleOutput::Gradients(g),
            loss,
        })
    }

    fn invocations(&self) -> usize {
        self.calls
    }
}

#[derive(Debug)]
pub struct EpropRule {
    mode: FeedbackMode,
    feedback: Option<BroadcastMatrix>,
    calls: usize,
}

impl EpropRule {
    pub fn new(mode: FeedbackMode) -> Self {
        Self {
            mode,
            feedback: None,
            calls: 0,
        }
    }

    pub fn feedback(&self) -> Option<&BroadcastMatrix> {
        self.feedback.as_ref()
    }
}

impl LearningRule for EpropRule {
    fn name(&self) -> String {
        format!("eprop_{}", self.mode.name())
    }

    fn supports(&self, model: &Model) -> Result<()> {
        match model.as_recurrent() {
            Some(_) => Ok(()),
            None => Err(eprop::unsupported_architecture(model)),
        }
    }

    fn prepare(&mut self, model: &Model, rng: &mut ChaCha8Rng) -> Result<()> {
        let net = model.as_recurrent().ok_or_else(|| eprop::unsupported_architecture(model))?;
        self.feedback = Some(BroadcastMatrix::new(self.mode, net, rng)?);
        Ok(())
    }

    fn compute(&mut self, model: &Model, batch: &Batch, objective: &Objective) -> Result<RuleStep> {
        self.calls += 1;
        let fb = self
            .feedback
            .as_ref()
            .ok_or_else(|| invalid("e-prop rule used before prepare()"))?;
        let (loss, g) = eprop_gradients(model, batch, objective, fb)?;
        Ok(RuleStep {
            output: RuleOutput::Gradients(g),
            loss,
        })
    }

    fn observe_applied(&mut self, applied: &GradientSet) -> Result<()> {
        if let (Some(fb), Some(d)) = (self.feedback.as_mut(), applied.get(W_OUT)) {
            fb.observe_readout_delta(d)?;
        }
        Ok(())
    }

    fn invocations(&self) -> usize {
        self.calls
    }
}

/// Sign-of-gradient updates on top of any gradient-producing rule.
pub struct ManhattanRule {
    cfg: ManhattanConfig,
    base: Box<dyn LearningRule>,
    calls: usize,
}

impl ManhattanRule {
    pub fn new(cfg: ManhattanConfig, base: Box<dyn LearningRule>) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, base, calls: 0 })
    }
}

impl LearningRule for ManhattanRule {
    fn name(&self) -> String {
        match (self.cfg.g_min, self.cfg.g_max) {
            (Some(lo), Some(hi)) => format!("manhattan[{lo},{hi}]"),
            _ => "manhattan".into(),
        }
    }

    fn supports(&self, model: &Model) -> Result<()> {
        self.base.supports(model)
    }

    fn prepare(&mut self, model: &Model, rng: &mut ChaCha8Rng) -> Result<()> {
        self.base.prepare(model, rng)
    }

    fn compute(&mut self, model: &Model, batch: &Batch, objective: &Objective) -> Result<RuleStep> {
        self.calls += 1;
        let step = self.base.compute(model, batch, objective)?;
        let RuleOutput::Gradients(g) = step.output else {
            return Err(invalid("the Manhattan rule needs a gradient-producing base rule"));
        };
        let deltas = manhattan_update(&g, &model.params(), &self.cfg)?;
        Ok(RuleStep {
            output: RuleOutput::Deltas(deltas),
            loss: step.loss,
        })
    }

    fn observe_applied(&mut self, applied: &GradientSet) -> Result<()> {
        self.base.observe_applied(applied)
    }

    fn constrain(&self, params: ParamSet) -> Result<ParamSet> {
        self.cfg.project(&params)
    }

    fn invocations(&self) -> usize {
        self.calls
    }
}

/// Declarative rule description, as found in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RuleSpec {
    Bptt,
    Eprop {
        mode: FeedbackMode,
    },
    Manhattan {
        delta: f64,
        #[serde(default)]
        g_min: Option<f64>,
        #[serde(default)]
        g_max: Option<f64>,
        /// Gradient source; BPTT when absent.
        #[serde(default)]
        base: Option<Box<RuleSpec>>,
    },
}

impl RuleSpec {
    pub const KINDS: [&'static str; 3] = ["bptt", "eprop", "manhattan"];

    pub fn build(&self) -> Result<Box<dyn LearningRule>> {
        Ok(match self {
            RuleSpec::Bptt => Box::new(BpttRule::default()),
            RuleSpec::Eprop { mode } => Box::new(EpropRule::new(*mode)),
            RuleSpec::Manhattan {
                delta,
                g_min,
                g_max,
                base,
            } => {
                let base = match base {
                    Some(b) => b.build()?,
                    None => Box::new(BpttRule::default()),
                };
                let cfg = ManhattanConfig {
                    delta: *delta,
                    g_min: *g_min,
                    g_max: *g_max,
                };
                Box::new(ManhattanRule::new(cfg, base)?)
            }
        })
    }
}
