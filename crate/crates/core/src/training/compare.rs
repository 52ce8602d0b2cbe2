//! Runs several learning rules side by side: a primary rule trains the
//! model while every other rule sees an exact copy of the primary's
//! parameters and the same batch, and the resulting weight changes are
//! compared with a reference rule.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{Optimizer, OptimizerConfig};
use super::train::{apply_deltas, output_deltas};
use crate::data::Dataset;
use crate::error::{invalid, Result};
use crate::neurons::Model;
use crate::numerics::GradientSet;
use crate::rules::{LearningRule, Objective};

/// Parameter label used for the statistics over all parameters at once.
pub const ALL_PARAMS: &str = "all";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompareConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Name of the reference rule; BPTT when present, else the primary.
    pub reference: Option<String>,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            steps: 20,
            batch_size: 32,
            seed: 0,
            reference: None,
        }
    }
}

/// Agreement between one rule's weight change and the reference's.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviationStat {
    pub rule: String,
    pub param: String,
    pub cosine: f64,
    /// `‖Δ − Δ_ref‖ / ‖Δ_ref‖`
    pub rel_l2: f64,
    /// Mean of `Δ − Δ_ref`.
    pub bias: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRecord {
    pub step: usize,
    /// `(rule name, weight change)` in rule order, primary first.
    pub deltas: Vec<(String, GradientSet)>,
    pub stats: Vec<DeviationStat>,
}

/// Cosine similarity, clamped to `[−1, 1]`; exactly 1 for identical inputs
/// (including two zero vectors) and 0 when exactly one is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    if a == b {
        return 1.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    match (na == 0.0, nb == 0.0) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => (dot / (na * nb)).clamp(-1.0, 1.0),
    }
}

/// `‖a − b‖ / ‖b‖`, with `0/0 = 0`.
pub fn relative_l2(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if diff == 0.0 {
        0.0
    } else {
        diff / nb
    }
}

pub fn mean_bias(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| x - y).sum::<f64>() / a.len() as f64
}

fn stat(rule: &str, param: &str, a: &[f64], b: &[f64]) -> DeviationStat {
    DeviationStat {
        rule: rule.to_string(),
        param: param.to_string(),
        cosine: cosine(a, b),
        rel_l2: relative_l2(a, b),
        bias: mean_bias(a, b),
    }
}

/// Per-parameter statistics followed by one row over the flattened whole.
pub fn deviation_stats(rule: &str, delta: &GradientSet, reference: &GradientSet) -> Result<Vec<DeviationStat>> {
    if !delta.same_keys(reference) {
        return Err(invalid(format!("rule {rule} produced different parameters than the reference")));
    }
    let mut out = Vec::with_capacity(delta.len() + 1);
    for (id, d) in delta {
        let r = reference.require(id)?;
        if r.shape() != d.shape() {
            return Err(crate::Error::Shape {
                op: "deviation_stats",
                left: r.shape().to_vec(),
                right: d.shape().to_vec(),
            });
        }
        out.push(stat(rule, id, d.data(), r.data()));
    }
    out.push(stat(rule, ALL_PARAMS, &delta.flatten(), &reference.flatten()));
    Ok(out)
}

/// Distinct names for the rules, suffixing repeats with `#2`, `#3`, …
fn unique_names(rules: &[Box<dyn LearningRule>]) -> Vec<String> {
    let mut names: Vec<String> = Vec::with_capacity(rules.len());
    for r in rules {
        let base = r.name();
        let seen = names.iter().filter(|n| **n == base || n.starts_with(&format!("{base}#"))).count();
        names.push(if seen == 0 { base } else { format!("{base}#{}", seen + 1) });
    }
    names
}

/// Rule-comparison training. `rules[0]` is the primary rule; the model is
/// updated with its changes only. Rule names in the records are made unique.
pub fn compare_gradients(
    rules: &mut [Box<dyn LearningRule>],
    model: &mut Model,
    data: &Dataset,
    objective: &Objective,
    optimizer: &OptimizerConfig,
    cfg: &CompareConfig,
) -> Result<Vec<ComparisonRecord>> {
    if rules.len() < 2 {
        return Err(invalid("comparison needs a primary rule and at least one other rule"));
    }
    for r in rules.iter() {
        r.supports(model)
            .map_err(|e| invalid(format!("rule {} cannot train this model: {e}", r.name())))?;
    }
    objective.check_model(model)?;
    let names = unique_names(rules);
    let reference = match &cfg.reference {
        Some(name) => names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| invalid(format!("reference rule {name:?} is not among {names:?}")))?,
        None => names.iter().position(|n| n == "bptt").unwrap_or(0),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for r in rules.iter_mut() {
        r.prepare(model, &mut rng)?;
    }
    let start = rules[0].constrain(model.params())?;
    model.set_params(&start)?;
    let mut optimizers = (0..rules.len())
        .map(|_| Optimizer::new(*optimizer))
        .collect::<Result<Vec<_>>>()?;

    let mut records = Vec::with_capacity(cfg.steps);
    let mut batches = Vec::new().into_iter();
    for step in 0..cfg.steps {
        let idx = match batches.next() {
            Some(i) => i,
            None => {
                batches = data.batch_indices(cfg.batch_size, &mut rng)?.into_iter();
                batches.next().ok_or_else(|| invalid("dataset is empty"))?
            }
        };
        let batch = data.gather(&idx)?;
        let snapshot = model.params();
        let mut deltas = Vec::with_capacity(rules.len());
        for (k, rule) in rules.iter_mut().enumerate() {
            let before = rule.invocations();
            let mut clone = model.clone();
            clone.set_params(&snapshot)?;
            debug_assert!(clone.params() == snapshot, "clone out of sync at step {step}");
            let out = rule.compute(&clone, &batch, objective)?;
            if rule.invocations() != before + 1 {
                return Err(invalid(format!(
                    "rule {} ran {} evaluations in one step",
                    names[k],
                    rule.invocations() - before
                )));
            }
            deltas.push((names[k].clone(), output_deltas(&mut optimizers[k], &out.output)?));
        }
        let applied = apply_deltas(model, &*rules[0], &deltas[0].1)?;
        // the primary's change is the one every clone will be synced to
        for rule in rules.iter_mut() {
            rule.observe_applied(&applied)?;
        }
        let mut stats = Vec::new();
        for (k, (name, d)) in deltas.iter().enumerate() {
            if k != reference {
                stats.extend(deviation_stats(name, d, &deltas[reference].1)?);
            }
        }
        records.push(ComparisonRecord { step, deltas, stats });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, SyntheticTask};
    use crate::neurons::{Activation, Mlp};
    use crate::rules::{BpttRule, RuleSpec};

    #[test]
    fn cosine_cases() {
        assert_eq!(cosine(&[1.0, 0.0], &[2.0, 0.0]), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 3.0]), 0.0);
        assert_eq!(cosine(&[0.0], &[0.0]), 1.0);
        assert!((cosine(&[1.0, 1.0], &[-1.0, -1.0]) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn aggregate_matches_brute_force() {
        let mut a = GradientSet::new();
        let mut b = GradientSet::new();
        a.insert("p", crate::numerics::Tensor::vector(vec![1.0, 2.0]).unwrap());
        a.insert("q", crate::numerics::Tensor::vector(vec![-1.0]).unwrap());
        b.insert("p", crate::numerics::Tensor::vector(vec![0.5, 2.5]).unwrap());
        b.insert("q", crate::numerics::Tensor::vector(vec![1.0]).unwrap());
        let stats = deviation_stats("x", &a, &b).unwrap();
        let all = stats.iter().find(|s| s.param == ALL_PARAMS).unwrap();
        let dot = 1.0 * 0.5 + 2.0 * 2.5 + -1.0;
        let want = dot / ((1.0f64 + 4.0 + 1.0).sqrt() * (0.25f64 + 6.25 + 1.0).sqrt());
        assert!((all.cosine - want).abs() < 1e-15);
        assert!((all.bias - (0.5 - 0.5 - 2.0) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn duplicate_names_get_suffixes() {
        let rules: Vec<Box<dyn LearningRule>> = vec![
            Box::new(BpttRule::default()),
            Box::new(BpttRule::default()),
            Box::new(BpttRule::default()),
        ];
        assert_eq!(unique_names(&rules), vec!["bptt", "bptt#2", "bptt#3"]);
    }

    #[test]
    fn self_comparison_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = Model::Mlp(Mlp::init(&[2, 4, 3], Activation::Tanh, &mut rng).unwrap());
        let data = generate(SyntheticTask::GaussianBlobs, 0, &SyntheticTask::GaussianBlobs.default_sizes()).unwrap();
        let mut rules = vec![RuleSpec::Bptt.build().unwrap(), RuleSpec::Bptt.build().unwrap()];
        let cfg = CompareConfig {
            steps: 5,
            batch_size: 16,
            ..CompareConfig::default()
        };
        let recs = compare_gradients(&mut rules, &mut model, &data, &Objective::default(), &OptimizerConfig::naive(), &cfg).unwrap();
        assert_eq!(recs.len(), 5);
        for r in &recs {
            for s in &r.stats {
                assert_eq!((s.cosine, s.rel_l2, s.bias), (1.0, 0.0, 0.0), "{s:?}");
            }
        }
        assert!(rules.iter().all(|r| r.invocations() == 5));
    }

    #[test]
    fn naive_deltas_are_negated_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut model = Model::Mlp(Mlp::init(&[2, 3, 3], Activation::Relu, &mut rng).unwrap());
        let data = generate(SyntheticTask::GaussianBlobs, 1, &SyntheticTask::GaussianBlobs.default_sizes()).unwrap();
        let mut rules = vec![RuleSpec::Bptt.build().unwrap(), RuleSpec::Bptt.build().unwrap()];
        let cfg = CompareConfig {
            steps: 3,
            batch_size: 8,
            seed: 4,
            ..CompareConfig::default()
        };
        // replay the same batches by hand
        let mut check_model = model.clone();
        let recs = compare_gradients(&mut rules, &mut model, &data, &Objective::default(), &OptimizerConfig::naive(), &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let batches = data.batch_indices(8, &mut rng).unwrap();
        for (rec, idx) in recs.iter().zip(&batches) {
            let b = data.gather(idx).unwrap();
            let (_, g) = crate::rules::bptt_gradients(&check_model, &b, &Objective::default()).unwrap();
            assert_eq!(rec.deltas[0].1, g.scale(-1.0).unwrap());
            check_model.apply_deltas(&rec.deltas[0].1).unwrap();
        }
        assert_eq!(check_model.params(), model.params());
    }

    #[test]
    fn incompatible_rule_fails_before_first_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut model = Model::Mlp(Mlp::init(&[2, 3], Activation::Relu, &mut rng).unwrap());
        let data = generate(SyntheticTask::GaussianBlobs, 1, &SyntheticTask::GaussianBlobs.default_sizes()).unwrap();
        let mut rules = vec![
            RuleSpec::Bptt.build().unwrap(),
            RuleSpec::Eprop {
                mode: crate::rules::FeedbackMode::Symmetric,
            }
            .build()
            .unwrap(),
        ];
        let err = compare_gradients(&mut rules, &mut model, &data, &Objective::default(), &OptimizerConfig::naive(), &CompareConfig::default());
        assert!(err.is_err());
        assert_eq!(rules[0].invocations(), 0);
    }
}
