//! Declarative experiment description, read from TOML.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use spikelab_core::data::{SequenceMode, SyntheticTask, DESK_TEST_LIMIT, DESK_TRAIN_LIMIT};
use spikelab_core::encoding::{EncoderConfig, EncoderKind, RailMode};
use spikelab_core::neurons::{Activation, OutputMode};
use spikelab_core::rules::{FiringRateRegularizer, LossKind, MalaConfig, RuleSpec};
use spikelab_core::training::OptimizerConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Compare,
    Sample,
    Encode,
}

impl Mode {
    pub const NAMES: [&'static str; 4] = ["train", "compare", "sample", "encode"];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub seed: u64,
    /// Relative paths are taken from the config file's directory.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    pub model: ModelSpec,
    pub data: DataSpec,
    #[serde(default)]
    pub encoder: Option<EncoderSpec>,
    #[serde(default)]
    pub rules: Vec<RuleSpec>,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub objective: ObjectiveSpec,
    #[serde(default)]
    pub train: TrainSpec,
    #[serde(default)]
    pub compare: CompareSpec,
    #[serde(default)]
    pub sample: SampleSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Alif(RecurrentSpec),
    Lif(RecurrentSpec),
    Mlp(MlpSpec),
}

impl ModelSpec {
    pub const KINDS: [&'static str; 3] = ["alif", "lif", "mlp"];

    pub fn is_spiking(&self) -> bool {
        !matches!(self, ModelSpec::Mlp(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecurrentSpec {
    pub n_rec: usize,
    pub tau_mem_ms: f64,
    pub tau_adapt_ms: f64,
    pub tau_out_ms: f64,
    pub beta: f64,
    pub v_th: f64,
    pub dt_ms: f64,
    /// Pseudo-derivative dampening.
    pub gamma: f64,
    pub output_mode: OutputMode,
    pub weight_scale: f64,
}

impl Default for RecurrentSpec {
    fn default() -> Self {
        Self {
            n_rec: 100,
            tau_mem_ms: 20.0,
            tau_adapt_ms: 200.0,
            tau_out_ms: 20.0,
            beta: 0.07,
            v_th: 1.0,
            dt_ms: 1.0,
            gamma: 0.3,
            output_mode: OutputMode::EveryStep,
            weight_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpSpec {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for MlpSpec {
    fn default() -> Self {
        Self {
            hidden: vec![64, 32],
            activation: Activation::Relu,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSpec {
    Synthetic(SyntheticData),
    Idx(IdxData),
    Delimited(DelimitedData),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticData {
    pub task: SyntheticTask,
    /// Overrides of the task's default sizes.
    pub examples: Option<usize>,
    pub steps: Option<usize>,
    pub channels: Option<usize>,
    pub classes: Option<usize>,
    pub noise: Option<f64>,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxData {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    #[serde(default = "default_train_limit")]
    pub train_limit: usize,
    #[serde(default = "default_test_limit")]
    pub test_limit: usize,
    /// Image → sequence conversion; dense models use flat images when unset.
    pub sequence: Option<SequenceMode>,
    /// Length of threshold-crossing sequences.
    #[serde(default = "default_crossing_steps")]
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelimitedData {
    pub train: PathBuf,
    pub test: Option<PathBuf>,
    pub steps: usize,
    pub channels: usize,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
}

impl DataSpec {
    pub const SOURCES: [&'static str; 3] = ["synthetic", "idx", "delimited"];

    /// Files the spec refers to, labelled by field.
    pub fn paths(&self) -> Vec<(&'static str, &Path)> {
        match self {
            DataSpec::Synthetic(_) => vec![],
            DataSpec::Idx(d) => {
                let mut v = vec![("data.train_images", d.train_images.as_path()), ("data.train_labels", d.train_labels.as_path())];
                if let Some(p) = &d.test_images {
                    v.push(("data.test_images", p));
                }
                if let Some(p) = &d.test_labels {
                    v.push(("data.test_labels", p));
                }
                v
            }
            DataSpec::Delimited(d) => {
                let mut v = vec![("data.train", d.train.as_path())];
                if let Some(p) = &d.test {
                    v.push(("data.test", p));
                }
                v
            }
        }
    }
}

fn default_test_fraction() -> f64 {
    0.25
}

fn default_train_limit() -> usize {
    DESK_TRAIN_LIMIT
}

fn default_test_limit() -> usize {
    DESK_TEST_LIMIT
}

fn default_crossing_steps() -> usize {
    50
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSpec {
    pub kind: EncoderKind,
    #[serde(default = "default_factor")]
    pub factor: f64,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default)]
    pub rails: RailMode,
}

fn default_factor() -> f64 {
    0.5
}

fn default_threshold() -> f64 {
    0.1
}

fn default_window() -> usize {
    3
}

impl EncoderSpec {
    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            kind: self.kind,
            factor: self.factor,
            threshold: self.threshold,
            window: self.window,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveSpec {
    pub loss: LossKind,
    pub rate_reg: Option<FiringRateRegularizer>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSpec {
    pub epochs: usize,
    pub batch_size: usize,
    pub eval_batch_size: usize,
}

impl Default for TrainSpec {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            eval_batch_size: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareSpec {
    pub steps: usize,
    pub batch_size: usize,
    pub reference: Option<String>,
}

impl Default for CompareSpec {
    fn default() -> Self {
        Self {
            steps: 20,
            batch_size: 32,
            reference: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleSpec {
    /// Epochs of ordinary training (with the first rule, BPTT if none) before sampling.
    pub warm_start_epochs: usize,
    pub burn_in: usize,
    pub samples: usize,
    pub thin: usize,
    /// Training examples in the likelihood; all when unset.
    pub posterior_examples: Option<usize>,
    pub mala: MalaConfig,
}

impl Default for SampleSpec {
    fn default() -> Self {
        Self {
            warm_start_epochs: 0,
            burn_in: 500,
            samples: 100,
            thin: 10,
            posterior_examples: None,
            mala: MalaConfig::default(),
        }
    }
}

/// One thing wrong with a config, tied to the field it concerns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Problem {
    pub field: String,
    pub message: String,
}

impl Problem {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn list(names: &[&str]) -> String {
    names.join(", ")
}

/// Checks the tagged sections by hand so that a bad name is reported with
/// its field and the accepted options.
fn check_names(doc: &toml::Table, problems: &mut Vec<Problem>) {
    let str_at = |t: &toml::Table, k: &str| t.get(k).and_then(|v| v.as_str()).map(str::to_owned);
    match doc.get("mode") {
        None => problems.push(Problem::new("mode", format!("required; one of {}", list(&Mode::NAMES)))),
        Some(v) => match v.as_str() {
            Some(m) if Mode::NAMES.contains(&m) => {}
            _ => problems.push(Problem::new("mode", format!("unknown mode {v}; valid options: {}", list(&Mode::NAMES)))),
        },
    }
    if !doc.contains_key("seed") {
        problems.push(Problem::new("seed", "required"));
    }
    let sections: [(&str, &str, &[&str]); 2] = [("model", "kind", &ModelSpec::KINDS), ("data", "source", &DataSpec::SOURCES)];
    for (section, tag, names) in sections {
        match doc.get(section).and_then(|v| v.as_table()) {
            None => problems.push(Problem::new(section, "required section is missing")),
            Some(t) => match str_at(t, tag) {
                Some(k) if names.contains(&k.as_str()) => {}
                Some(k) => problems.push(Problem::new(
                    format!("{section}.{tag}"),
                    format!("unknown {tag} \"{k}\"; valid options: {}", list(names)),
                )),
                None => problems.push(Problem::new(format!("{section}.{tag}"), format!("required; one of {}", list(names)))),
            },
        }
    }
    if let Some(rules) = doc.get("rules") {
        let Some(rules) = rules.as_array() else {
            problems.push(Problem::new("rules", "must be an array of tables ([[rules]])"));
            return;
        };
        for (i, r) in rules.iter().enumerate() {
            check_rule(&format!("rules[{i}]"), r, problems);
        }
    }
}

fn check_rule(field: &str, rule: &toml::Value, problems: &mut Vec<Problem>) {
    let Some(t) = rule.as_table() else {
        problems.push(Problem::new(field, "must be a table"));
        return;
    };
    match t.get("kind").and_then(|v| v.as_str()) {
        Some(k) if RuleSpec::KINDS.contains(&k) => {
            if let Some(base) = t.get("base") {
                check_rule(&format!("{field}.base"), base, problems);
            }
        }
        Some(k) => problems.push(Problem::new(
            format!("{field}.kind"),
            format!("unknown rule \"{k}\"; valid options: {}", list(&RuleSpec::KINDS)),
        )),
        None => problems.push(Problem::new(
            format!("{field}.kind"),
            format!("required; one of {}", list(&RuleSpec::KINDS)),
        )),
    }
}

/// Deserializes a tagged section's body into its concrete type on its own,
/// so errors point at the offending key rather than the whole section.
fn probe<T: serde::de::DeserializeOwned>(prefix: &str, table: &toml::Table, tag: &str, problems: &mut Vec<Problem>) {
    let mut body = table.clone();
    body.remove(tag);
    let text = toml::to_string(&body).expect("a parsed table re-serializes");
    if let Err(e) = toml::from_str::<T>(&text) {
        let key = e.span().and_then(|s| field_at(&text, s.start));
        let field = match key {
            Some(k) => format!("{prefix}.{k}"),
            None => prefix.to_string(),
        };
        problems.push(Problem::new(field, e.message().to_string()));
    }
}

fn probe_sections(doc: &toml::Table, problems: &mut Vec<Problem>) {
    let section = |k: &str| doc.get(k).and_then(|v| v.as_table()).expect("checked by check_names");
    let model = section("model");
    match model.get("kind").and_then(|v| v.as_str()) {
        Some("mlp") => probe::<MlpSpec>("model", model, "kind", problems),
        _ => probe::<RecurrentSpec>("model", model, "kind", problems),
    }
    let data = section("data");
    match data.get("source").and_then(|v| v.as_str()) {
        Some("synthetic") => probe::<SyntheticData>("data", data, "source", problems),
        Some("idx") => probe::<IdxData>("data", data, "source", problems),
        _ => probe::<DelimitedData>("data", data, "source", problems),
    }
    for (i, r) in doc.get("rules").and_then(|v| v.as_array()).into_iter().flatten().enumerate() {
        if let Some(t) = r.as_table() {
            let text = toml::to_string(t).expect("a parsed table re-serializes");
            if let Err(e) = toml::from_str::<RuleSpec>(&text) {
                problems.push(Problem::new(format!("rules[{i}]"), e.message().to_string()));
            }
        }
    }
}

fn rule_needs_recurrent(spec: &RuleSpec) -> bool {
    match spec {
        RuleSpec::Eprop { .. } => true,
        RuleSpec::Manhattan { base, .. } => base.as_deref().is_some_and(rule_needs_recurrent),
        RuleSpec::Bptt => false,
    }
}

fn rule_label(spec: &RuleSpec) -> String {
    spec.build().map(|r| r.name()).unwrap_or_else(|_| "rule".into())
}

impl ExperimentConfig {
    /// Parses TOML text, returning every problem found. Parsing stops at the
    /// first layer that fails (names, then schema), then cross-field checks run.
    pub fn parse(text: &str) -> Result<Self, Vec<Problem>> {
        let doc: toml::Table = toml::from_str(text).map_err(|e| vec![Problem::new("syntax", e.message().to_string())])?;
        let mut problems = Vec::new();
        check_names(&doc, &mut problems);
        if problems.is_empty() {
            probe_sections(&doc, &mut problems);
        }
        if !problems.is_empty() {
            return Err(problems);
        }
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let field = e
                .span()
                .and_then(|s| field_at(text, s.start))
                .unwrap_or_else(|| "config".into());
            vec![Problem::new(field, e.message().to_string())]
        })?;
        let problems = cfg.check();
        if problems.is_empty() {
            Ok(cfg)
        } else {
            Err(problems)
        }
    }

    pub fn load(path: &Path) -> Result<Self, Vec<Problem>> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| vec![Problem::new("config", format!("cannot read {}: {e}", path.display()))])?;
        let mut cfg = Self::parse(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        let missing: Vec<Problem> = cfg
            .data
            .paths()
            .into_iter()
            .filter(|(_, p)| !p.is_file())
            .map(|(f, p)| Problem::new(f, format!("file not found: {}", p.display())))
            .collect();
        if missing.is_empty() {
            Ok(cfg)
        } else {
            Err(missing)
        }
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.data {
            DataSpec::Synthetic(_) => {}
            DataSpec::Idx(d) => {
                fix(&mut d.train_images);
                fix(&mut d.train_labels);
                d.test_images.iter_mut().for_each(fix);
                d.test_labels.iter_mut().for_each(fix);
            }
            DataSpec::Delimited(d) => {
                fix(&mut d.train);
                d.test.iter_mut().for_each(fix);
            }
        }
        if let Some(out) = &mut self.out_dir {
            fix(out);
        }
    }

    /// Field-level and cross-field checks on an already typed config.
    pub fn check(&self) -> Vec<Problem> {
        let mut p = Vec::new();
        let mut push = |f: &str, m: String| p.push(Problem::new(f, m));

        match &self.model {
            ModelSpec::Alif(r) | ModelSpec::Lif(r) => {
                if r.n_rec == 0 {
                    push("model.n_rec", "must be at least 1".into());
                }
                for (f, v) in [
                    ("model.tau_mem_ms", r.tau_mem_ms),
                    ("model.tau_adapt_ms", r.tau_adapt_ms),
                    ("model.tau_out_ms", r.tau_out_ms),
                    ("model.dt_ms", r.dt_ms),
                    ("model.v_th", r.v_th),
                    ("model.weight_scale", r.weight_scale),
                ] {
                    if !(v > 0.0 && v.is_finite()) {
                        push(f, format!("must be positive, got {v}"));
                    }
                }
                if !(r.beta >= 0.0) {
                    push("model.beta", format!("must be non-negative, got {}", r.beta));
                }
                if !(r.gamma >= 0.0) {
                    push("model.gamma", format!("must be non-negative, got {}", r.gamma));
                }
            }
            ModelSpec::Mlp(m) => {
                if m.hidden.contains(&0) {
                    push("model.hidden", "layer sizes must be at least 1".into());
                }
            }
        }

        match &self.data {
            DataSpec::Synthetic(d) => {
                if !(0.0..1.0).contains(&d.test_fraction) {
                    push("data.test_fraction", format!("must lie in [0, 1), got {}", d.test_fraction));
                }
                if d.examples == Some(0) {
                    push("data.examples", "must be at least 1".into());
                }
                if matches!(d.classes, Some(c) if c < 2) {
                    push("data.classes", "must be at least 2".into());
                }
            }
            DataSpec::Idx(d) => {
                if d.test_images.is_some() != d.test_labels.is_some() {
                    push("data.test_images", "test images and labels must be given together".into());
                }
                if d.train_limit == 0 {
                    push("data.train_limit", "must be at least 1".into());
                }
                if d.sequence == Some(SequenceMode::ThresholdCrossing) && d.steps == 0 {
                    push("data.steps", "must be at least 1".into());
                }
            }
            DataSpec::Delimited(d) => {
                if d.steps == 0 || d.channels == 0 {
                    push("data.steps", "steps and channels must be at least 1".into());
                }
                if !(0.0..1.0).contains(&d.test_fraction) {
                    push("data.test_fraction", format!("must lie in [0, 1), got {}", d.test_fraction));
                }
            }
        }

        if let Some(e) = &self.encoder {
            if let Err(err) = e.encoder().validate() {
                push("encoder", err.to_string());
            }
        } else if self.mode == Mode::Encode {
            push("encoder", "encode mode needs an [encoder] section".into());
        }

        if let Err(e) = self.optimizer.validate() {
            push("optimizer", e.to_string());
        }
        if let Some(reg) = &self.objective.rate_reg {
            if let Err(e) = reg.validate() {
                push("objective.rate_reg", e.to_string());
            }
            if !self.model.is_spiking() {
                push("objective.rate_reg", "the firing-rate regularizer needs a spiking model".into());
            }
        }

        for (i, r) in self.rules.iter().enumerate() {
            if let Err(e) = r.build() {
                push(&format!("rules[{i}]"), e.to_string());
            } else if rule_needs_recurrent(r) && !self.model.is_spiking() {
                push(
                    &format!("rules[{i}]"),
                    format!("{} needs a recurrent spiking model, but model.kind is mlp", rule_label(r)),
                );
            }
        }

        match self.mode {
            Mode::Train => {
                if self.rules.len() != 1 {
                    push("rules", format!("train mode needs exactly one rule, got {}", self.rules.len()));
                }
                if self.train.batch_size == 0 {
                    push("train.batch_size", "must be at least 1".into());
                }
            }
            Mode::Compare => {
                if self.rules.len() < 2 {
                    push("rules", format!("compare mode needs at least two rules, got {}", self.rules.len()));
                }
                if self.compare.batch_size == 0 {
                    push("compare.batch_size", "must be at least 1".into());
                }
                if let Some(r) = &self.compare.reference {
                    let names: Vec<String> = self.rules.iter().map(rule_label).collect();
                    if !names.contains(r) {
                        push("compare.reference", format!("\"{r}\" is not one of the configured rules ({})", names.join(", ")));
                    }
                }
            }
            Mode::Sample => {
                if self.rules.len() > 1 {
                    push("rules", "sample mode uses at most one rule (for the warm start)".into());
                }
                if let Err(e) = self.sample.mala.validate() {
                    push("sample.mala", e.to_string());
                }
                if self.sample.samples == 0 {
                    push("sample.samples", "must be at least 1".into());
                }
                if self.sample.thin == 0 {
                    push("sample.thin", "must be at least 1".into());
                }
                if self.sample.posterior_examples == Some(0) {
                    push("sample.posterior_examples", "must be at least 1".into());
                }
            }
            Mode::Encode => {}
        }
        p
    }
}

/// Dotted key of the TOML entry containing byte `offset`, found by walking
/// the table headers and keys before it.
fn field_at(text: &str, offset: usize) -> Option<String> {
    let mut section = String::new();
    let mut key = None;
    let mut pos = 0;
    for line in text.split_inclusive('\n') {
        if pos > offset {
            break;
        }
        let trimmed = line.trim();
        if let Some(h) = trimmed.strip_prefix("[[").and_then(|s| s.split("]]").next()) {
            section = h.trim().to_string();
            key = None;
        } else if let Some(h) = trimmed.strip_prefix('[').and_then(|s| s.split(']').next()) {
            section = h.trim().to_string();
            key = None;
        } else if let Some((k, _)) = trimmed.split_once('=') {
            if !trimmed.starts_with('#') {
                key = Some(k.trim().to_string());
            }
        }
        pos += line.len();
    }
    Some(match (section.is_empty(), key) {
        (true, Some(k)) => k,
        (false, Some(k)) => format!("{section}.{k}"),
        (false, None) => section,
        (true, None) => return None,
    })
}
