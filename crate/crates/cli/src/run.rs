//! Assembles data, model and rules from a config and runs one mode.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use spikelab_core::data::{
    generate, image_to_sequence, load_delimited_sequences, load_idx_limit, Dataset, SequenceMode, SyntheticSizes,
};
use spikelab_core::encoding::{decode_sf, naive_delta_density, sparsity, EncoderKind};
use spikelab_core::neurons::{CellKind, Mlp, Model, RecurrentConfig, RecurrentNet};
use spikelab_core::numerics::{PseudoDerivative, Tensor};
use spikelab_core::rules::{
    posterior_predict, run_chain_with, LearningRule, ModelPosterior, Objective, RuleSpec, WeightSample,
};
use spikelab_core::training::{
    compare_gradients, entropy_medians, median, train_into, uncertainty_report, CompareConfig, Evaluator, History,
    Metric, TrainConfig, ALL_PARAMS,
};

use crate::config::{DataSpec, EncoderSpec, ExperimentConfig, Mode, ModelSpec};
use crate::output::{json_num, num, opt, write_summary, CsvSink};
use crate::output::{COMPARISON_CSV, ENCODING_CSV, HISTORY_CSV, SAMPLES_CSV, UNCERTAINTY_CSV};
use crate::RunError;

/// Separate ChaCha streams keep the data split, model init and sampler
/// independent of each other.
const DATA_STREAM: u64 = 0;
const MODEL_STREAM: u64 = 1;
const CHAIN_STREAM: u64 = 2;

fn stream(seed: u64, k: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub test: Option<Dataset>,
}

fn split_fraction(data: Dataset, test_fraction: f64, seed: u64) -> Result<Splits, RunError> {
    if test_fraction == 0.0 {
        return Ok(Splits { train: data, test: None });
    }
    let n_test = ((data.len() as f64) * test_fraction).round() as usize;
    let n_train = data.len().saturating_sub(n_test);
    if n_train == 0 || n_test == 0 {
        return Err(RunError::Data(format!("cannot split {} examples with test fraction {test_fraction}", data.len())));
    }
    let (train, test) = data.split(n_train, &mut stream(seed, DATA_STREAM))?;
    Ok(Splits { train, test: Some(test) })
}

fn with_inputs(d: Dataset, inputs: Tensor) -> Result<Dataset, RunError> {
    Ok(Dataset::new(inputs, d.labels, d.class_count)?)
}

/// Loads or generates the datasets and applies the image conversion and
/// spike encoder the config asks for.
pub fn load_data(cfg: &ExperimentConfig) -> Result<Splits, RunError> {
    let mut splits = match &cfg.data {
        DataSpec::Synthetic(s) => {
            let d = s.task.default_sizes();
            let sizes = SyntheticSizes {
                examples: s.examples.unwrap_or(d.examples),
                steps: s.steps.unwrap_or(d.steps),
                channels: s.channels.unwrap_or(d.channels),
                classes: s.classes.unwrap_or(d.classes),
                noise: s.noise.unwrap_or(d.noise),
            };
            split_fraction(generate(s.task, cfg.seed, &sizes)?, s.test_fraction, cfg.seed)?
        }
        DataSpec::Idx(s) => {
            let train = load_idx_limit(&s.train_images, &s.train_labels, s.train_limit)?;
            let test = match (&s.test_images, &s.test_labels) {
                (Some(i), Some(l)) => Some(load_idx_limit(i, l, s.test_limit)?),
                _ => None,
            };
            let mode = match (s.sequence, cfg.model.is_spiking()) {
                (Some(m), _) => Some(m),
                (None, true) => Some(SequenceMode::RowScan),
                (None, false) => None,
            };
            let convert = |d: Dataset| -> Result<Dataset, RunError> {
                match mode {
                    Some(m) => {
                        let x = image_to_sequence(&d.inputs, m, s.steps)?;
                        with_inputs(d, x)
                    }
                    None => Ok(d),
                }
            };
            Splits {
                train: convert(train)?,
                test: test.map(convert).transpose()?,
            }
        }
        DataSpec::Delimited(s) => {
            let data = load_delimited_sequences(&s.train, s.steps, s.channels)?;
            match &s.test {
                Some(t) => Splits {
                    train: data,
                    test: Some(load_delimited_sequences(t, s.steps, s.channels)?),
                },
                None => split_fraction(data, s.test_fraction, cfg.seed)?,
            }
        }
    };
    if cfg.mode != Mode::Encode {
        if let Some(enc) = &cfg.encoder {
            let apply = |d: Dataset| -> Result<Dataset, RunError> {
                let x = enc.encoder().encode_batch(&as_sequences(&d.inputs)?, enc.rails)?;
                with_inputs(d, x)
            };
            splits.train = apply(splits.train)?;
            splits.test = splits.test.map(apply).transpose()?;
        }
    }
    Ok(splits)
}

/// Views `[N × D]` data as `[N × D × 1]` single-channel sequences.
fn as_sequences(x: &Tensor) -> Result<Tensor, RunError> {
    Ok(match *x.shape() {
        [n, d] => x.reshape(&[n, d, 1])?,
        _ => x.clone(),
    })
}

/// Per-example input width as the model sees it.
fn input_width(x: &Tensor, spiking: bool) -> usize {
    let s = x.shape();
    if spiking {
        *s.last().unwrap_or(&0)
    } else {
        s[1..].iter().product()
    }
}

pub fn build_model(cfg: &ExperimentConfig, data: &Dataset) -> Result<Model, RunError> {
    let n_in = input_width(&data.inputs, cfg.model.is_spiking());
    let n_out = data.class_count;
    let mut rng = stream(cfg.seed, MODEL_STREAM);
    Ok(match &cfg.model {
        ModelSpec::Alif(r) | ModelSpec::Lif(r) => {
            if data.inputs.rank() != 3 {
                return Err(RunError::Data(format!(
                    "recurrent models need [N × T × D] inputs, got {:?}",
                    data.inputs.shape()
                )));
            }
            let cell = if matches!(cfg.model, ModelSpec::Alif(_)) { CellKind::Alif } else { CellKind::Lif };
            let decay = |tau: f64| (-r.dt_ms / tau).exp();
            let mut rc = RecurrentConfig::new(cell, n_in, r.n_rec, n_out);
            rc.alpha = decay(r.tau_mem_ms);
            rc.rho = decay(r.tau_adapt_ms);
            rc.kappa = decay(r.tau_out_ms);
            rc.beta = r.beta;
            rc.v_th = r.v_th;
            rc.dt = r.dt_ms * 1e-3;
            rc.pseudo = PseudoDerivative {
                gamma: r.gamma,
                ..PseudoDerivative::default()
            };
            rc.output_mode = r.output_mode;
            rc.weight_scale = r.weight_scale;
            Model::Recurrent(RecurrentNet::init(&rc, &mut rng)?)
        }
        ModelSpec::Mlp(m) => {
            let mut sizes = vec![n_in];
            sizes.extend(&m.hidden);
            sizes.push(n_out);
            Model::Mlp(Mlp::init(&sizes, m.activation, &mut rng)?)
        }
    })
}

pub fn objective(cfg: &ExperimentConfig) -> Objective {
    let mut o = Objective::new(cfg.objective.loss);
    if let Some(r) = cfg.objective.rate_reg {
        o = o.with_rate_reg(r);
    }
    o
}

fn evaluator(cfg: &ExperimentConfig) -> Evaluator {
    let mut metrics = vec![Metric::Accuracy];
    if cfg.model.is_spiking() {
        metrics.push(Metric::FiringRate);
    }
    Evaluator::new(objective(cfg), &metrics)
}

fn build_rules(specs: &[RuleSpec]) -> Result<Vec<Box<dyn LearningRule>>, RunError> {
    Ok(specs.iter().map(|s| s.build()).collect::<spikelab_core::Result<_>>()?)
}

/// What a finished (or aborted) run leaves behind.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub out_dir: PathBuf,
    pub summary: Value,
}

/// Runs the experiment, writing every output into `out_dir`. On a runtime
/// failure the files written so far stay, and `summary.json` records the error.
pub fn run(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunReport, RunError> {
    std::fs::create_dir_all(out_dir).map_err(|e| RunError::io(out_dir, e))?;
    let mut metrics = BTreeMap::new();
    let result = match cfg.mode {
        Mode::Train => run_train(cfg, out_dir, &mut metrics),
        Mode::Compare => run_compare(cfg, out_dir, &mut metrics),
        Mode::Sample => run_sample(cfg, out_dir, &mut metrics),
        Mode::Encode => run_encode(cfg, out_dir, &mut metrics),
    };
    let mut summary = json!({
        "mode": cfg.mode,
        "seed": cfg.seed,
        "status": if result.is_ok() { "ok" } else { "failed" },
        "metrics": metrics,
        "config": cfg,
    });
    if let Err(e) = &result {
        summary["error"] = Value::String(e.to_string());
    }
    // the echoed output path would differ between otherwise identical runs
    summary["config"]["out_dir"] = Value::Null;
    write_summary(out_dir, &summary)?;
    result.map(|_| RunReport {
        out_dir: out_dir.to_path_buf(),
        summary,
    })
}

type Metrics = BTreeMap<String, Value>;

fn history_rows(sink: &mut CsvSink, history: &History) -> Result<(), RunError> {
    for r in history {
        sink.row(&[r.epoch.to_string(), num(r.train.loss), opt(r.train.accuracy), opt(r.train.firing_rate)])?;
    }
    Ok(())
}

fn run_train(cfg: &ExperimentConfig, out: &Path, metrics: &mut Metrics) -> Result<(), RunError> {
    let data = load_data(cfg)?;
    let mut model = build_model(cfg, &data.train)?;
    let mut rule = cfg.rules[0].build()?;
    let ev = evaluator(cfg);
    let tc = TrainConfig {
        epochs: cfg.train.epochs,
        batch_size: cfg.train.batch_size,
        seed: cfg.seed,
        eval_batch_size: cfg.train.eval_batch_size,
    };
    let mut sink = CsvSink::create(out, HISTORY_CSV, &["epoch", "loss", "accuracy", "firing_rate"])?;
    let mut history = History::new();
    metrics.insert("rule".into(), json!(rule.name()));
    let result = train_into(
        &mut model,
        rule.as_mut(),
        &ev,
        &data.train,
        data.test.as_ref(),
        &cfg.optimizer,
        &tc,
        &mut history,
    );
    history_rows(&mut sink, &history)?;
    metrics.insert("epochs_completed".into(), json!(history.len()));
    if let Some(last) = history.last() {
        metrics.insert("train_loss".into(), json_num(last.train.loss));
        if let Some(a) = last.train.accuracy {
            metrics.insert("train_accuracy".into(), json_num(a));
        }
        if let Some(r) = last.train.firing_rate {
            metrics.insert("train_firing_rate".into(), json_num(r));
        }
        if let Some(v) = &last.validation {
            metrics.insert("test_loss".into(), json_num(v.loss));
            if let Some(a) = v.accuracy {
                metrics.insert("test_accuracy".into(), json_num(a));
            }
            if let Some(r) = v.firing_rate {
                metrics.insert("test_firing_rate".into(), json_num(r));
            }
        }
    }
    result?;
    Ok(())
}

fn run_compare(cfg: &ExperimentConfig, out: &Path, metrics: &mut Metrics) -> Result<(), RunError> {
    let data = load_data(cfg)?;
    let mut model = build_model(cfg, &data.train)?;
    let mut rules = build_rules(&cfg.rules)?;
    let cc = CompareConfig {
        steps: cfg.compare.steps,
        batch_size: cfg.compare.batch_size,
        seed: cfg.seed,
        reference: cfg.compare.reference.clone(),
    };
    let records = compare_gradients(&mut rules, &mut model, &data.train, &objective(cfg), &cfg.optimizer, &cc)?;
    let mut sink = CsvSink::create(out, COMPARISON_CSV, &["step", "rule", "param", "cosine", "rel_l2", "bias"])?;
    let mut cosines: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for rec in &records {
        for s in &rec.stats {
            sink.row(&[rec.step.to_string(), s.rule.clone(), s.param.clone(), num(s.cosine), num(s.rel_l2), num(s.bias)])?;
            cosines.entry((s.rule.clone(), s.param.clone())).or_default().push(s.cosine);
        }
    }
    let mut med = BTreeMap::new();
    for ((rule, param), v) in &cosines {
        med.entry(rule.clone())
            .or_insert_with(BTreeMap::new)
            .insert(param.clone(), json_num(median(v).unwrap_or(f64::NAN)));
    }
    metrics.insert("steps".into(), json!(records.len()));
    metrics.insert("median_cosine".into(), json!(med));
    metrics.insert("aggregate_param".into(), json!(ALL_PARAMS));
    Ok(())
}

fn run_sample(cfg: &ExperimentConfig, out: &Path, metrics: &mut Metrics) -> Result<(), RunError> {
    let data = load_data(cfg)?;
    let mut model = build_model(cfg, &data.train)?;
    let ev = evaluator(cfg);
    if cfg.sample.warm_start_epochs > 0 {
        let mut rule = match cfg.rules.first() {
            Some(s) => s.build()?,
            None => RuleSpec::Bptt.build()?,
        };
        let tc = TrainConfig {
            epochs: cfg.sample.warm_start_epochs,
            batch_size: cfg.train.batch_size,
            seed: cfg.seed,
            eval_batch_size: cfg.train.eval_batch_size,
        };
        let mut history = History::new();
        let mut sink = CsvSink::create(out, HISTORY_CSV, &["epoch", "loss", "accuracy", "firing_rate"])?;
        let r = train_into(&mut model, rule.as_mut(), &ev, &data.train, None, &cfg.optimizer, &tc, &mut history);
        history_rows(&mut sink, &history)?;
        r?;
        if let Some(a) = history.last().and_then(|h| h.train.accuracy) {
            metrics.insert("warm_start_train_accuracy".into(), json_num(a));
        }
    }

    let likelihood = match cfg.sample.posterior_examples {
        Some(n) => data.train.take(n.min(data.train.len()))?,
        None => data.train.clone(),
    };
    let mut posterior = ModelPosterior::new(model.clone(), likelihood.as_batch(), objective(cfg), &cfg.sample.mala)?;
    let theta0 = posterior.initial_point();
    let mut sink = CsvSink::create(out, SAMPLES_CSV, &["step", "log_post", "accepted"])?;
    let s = &cfg.sample;
    let chain = run_chain_with(&mut posterior, theta0, &s.mala, s.burn_in, s.samples, s.thin, &mut stream(cfg.seed, CHAIN_STREAM), |_, _| Ok(()))?;
    for (k, st) in chain.steps.iter().enumerate() {
        sink.row(&[k.to_string(), num(st.log_post), u8::from(st.accepted).to_string()])?;
    }
    let weight_samples = chain
        .samples
        .iter()
        .enumerate()
        .map(|(i, theta)| {
            let step = chain.steps[(i + 1) * s.thin - 1];
            Ok(WeightSample {
                params: posterior.params_at(theta)?,
                log_post: step.log_post,
                accepted: step.accepted,
            })
        })
        .collect::<spikelab_core::Result<Vec<_>>>()?;

    let eval_set = data.test.as_ref().unwrap_or(&data.train);
    let pred = posterior_predict(&weight_samples, &model, &eval_set.inputs)?;
    let rows = uncertainty_report(&pred, &eval_set.labels)?;
    let mut sink = CsvSink::create(out, UNCERTAINTY_CSV, &["example_id", "correct", "entropy", "std"])?;
    for r in &rows {
        sink.row(&[r.example_id.to_string(), u8::from(r.correct).to_string(), num(r.entropy), num(r.std)])?;
    }
    let (wrong, right) = entropy_medians(&rows);
    let acc = rows.iter().filter(|r| r.correct).count() as f64 / rows.len().max(1) as f64;
    metrics.insert("acceptance_rate".into(), json_num(chain.acceptance_rate()));
    metrics.insert("sigma".into(), json_num(chain.sigma));
    metrics.insert("samples".into(), json!(weight_samples.len()));
    metrics.insert("posterior_accuracy".into(), json_num(acc));
    metrics.insert("evaluated_on".into(), json!(if data.test.is_some() { "test" } else { "train" }));
    metrics.insert("median_entropy_misclassified".into(), wrong.map(json_num).unwrap_or(Value::Null));
    metrics.insert("median_entropy_correct".into(), right.map(json_num).unwrap_or(Value::Null));
    Ok(())
}

fn run_encode(cfg: &ExperimentConfig, out: &Path, metrics: &mut Metrics) -> Result<(), RunError> {
    let data = load_data(cfg)?;
    let spec: EncoderSpec = cfg.encoder.expect("validated");
    let enc = spec.encoder();
    let x = as_sequences(&data.train.inputs)?;
    let mut sink = CsvSink::create(
        out,
        ENCODING_CSV,
        &["example_id", "channel", "spikes", "sparsity", "naive_density", "max_abs_error"],
    )?;
    let (mut total_sparsity, mut total_naive, mut count) = (0.0, 0.0, 0usize);
    for i in 0..data.train.len() {
        let seq = x.select(0, i)?;
        let trains = enc.encode_channels(&seq)?;
        let columns = seq.transpose()?;
        for (c, train) in trains.iter().enumerate() {
            let signal = columns.select(0, c)?;
            let err = match spec.kind {
                EncoderKind::Sf => {
                    let rec = decode_sf(train)?;
                    Some(rec.sub(&signal)?.max_abs())
                }
                _ => None,
            };
            let sp = sparsity(train);
            let naive = naive_delta_density(signal.data());
            total_sparsity += sp;
            total_naive += naive;
            count += 1;
            sink.row(&[i.to_string(), c.to_string(), train.spike_count().to_string(), num(sp), num(naive), opt(err)])?;
        }
    }
    let n = count.max(1) as f64;
    metrics.insert("mean_sparsity".into(), json_num(total_sparsity / n));
    metrics.insert("mean_naive_density".into(), json_num(total_naive / n));
    metrics.insert("trains".into(), json!(count));
    Ok(())
}
