//! Small generated classification tasks for desk-scale experiments.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{invalid, Error, Result};
use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticTask {
    /// Noisy sinusoid, slow vs fast frequency.
    TwoSines,
    /// Sparse random spikes, with or without a planted sweep motif.
    PatternDetect,
    /// Isotropic Gaussian clusters as flat vectors.
    GaussianBlobs,
}

impl SyntheticTask {
    pub const NAMES: [&'static str; 3] = ["two_sines", "pattern_detect", "gaussian_blobs"];

    pub fn name(self) -> &'static str {
        match self {
            SyntheticTask::TwoSines => "two_sines",
            SyntheticTask::PatternDetect => "pattern_detect",
            SyntheticTask::GaussianBlobs => "gaussian_blobs",
        }
    }

    pub fn default_sizes(self) -> SyntheticSizes {
        match self {
            SyntheticTask::TwoSines => SyntheticSizes {
                examples: 400,
                steps: 50,
                channels: 1,
                classes: 2,
                noise: 0.3,
            },
            SyntheticTask::PatternDetect => SyntheticSizes {
                examples: 400,
                steps: 60,
                channels: 10,
                classes: 2,
                noise: 0.03,
            },
            SyntheticTask::GaussianBlobs => SyntheticSizes {
                examples: 600,
                steps: 1,
                channels: 2,
                classes: 3,
                noise: 1.0,
            },
        }
    }
}

impl fmt::Display for SyntheticTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SyntheticTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two_sines" => Ok(SyntheticTask::TwoSines),
            "pattern_detect" => Ok(SyntheticTask::PatternDetect),
            "gaussian_blobs" => Ok(SyntheticTask::GaussianBlobs),
            other => Err(invalid(format!(
                "unknown synthetic task {other:?}; valid names: {}",
                SyntheticTask::NAMES.join(", ")
            ))),
        }
    }
}

/// Shape and difficulty knobs. `noise` is the additive noise std for
/// `two_sines`, the background spike probability for `pattern_detect` and
/// the cluster std for `gaussian_blobs`. `steps` is ignored by blobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSizes {
    pub examples: usize,
    pub steps: usize,
    pub channels: usize,
    pub classes: usize,
    pub noise: f64,
}

/// Balanced labels in shuffled order.
fn balanced_labels(n: usize, classes: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    if classes == 0 || n % classes != 0 {
        return Err(invalid(format!(
            "{n} examples cannot be split evenly into {classes} classes"
        )));
    }
    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    labels.shuffle(rng);
    Ok(labels)
}

fn two_sines(s: &SyntheticSizes, rng: &mut ChaCha8Rng) -> Result<Dataset> {
    if s.classes != 2 || s.channels != 1 {
        return Err(invalid("two_sines has 2 classes and 1 channel"));
    }
    let labels = balanced_labels(s.examples, 2, rng)?;
    let noise = Normal::new(0.0, s.noise).map_err(|e| invalid(e.to_string()))?;
    // cycles per sequence for the slow and fast class
    let cycles = [2.0, 5.0];
    let mut data = Vec::with_capacity(s.examples * s.steps);
    for &label in &labels {
        let phase = rng.gen_range(0.0..2.0 * PI);
        for t in 0..s.steps {
            let w = 2.0 * PI * cycles[label] / s.steps as f64;
            data.push((w * t as f64 + phase).sin() + noise.sample(rng));
        }
    }
    Dataset::new(Tensor::new(vec![s.examples, s.steps, 1], data)?, labels, 2)
}

fn pattern_detect(s: &SyntheticSizes, rng: &mut ChaCha8Rng) -> Result<Dataset> {
    if s.classes != 2 || !(0.0..1.0).contains(&s.noise) {
        return Err(invalid("pattern_detect has 2 classes and background probability in [0, 1)"));
    }
    let (t_len, d) = (s.steps, s.channels);
    // the motif: channel c fires `c` steps after onset
    let motif_len = d;
    if d == 0 || t_len < motif_len {
        return Err(invalid("pattern_detect needs at least as many steps as channels"));
    }
    let labels = balanced_labels(s.examples, 2, rng)?;
    let mut data = Vec::with_capacity(s.examples * t_len * d);
    for &label in &labels {
        let mut x: Vec<f64> = (0..t_len * d)
            .map(|_| if rng.gen::<f64>() < s.noise { 1.0 } else { 0.0 })
            .collect();
        if label == 1 {
            let onset = rng.gen_range(0..=t_len - motif_len);
            for c in 0..d {
                x[(onset + c) * d + c] = 1.0;
            }
        }
        data.extend(x);
    }
    Dataset::new(Tensor::new(vec![s.examples, t_len, d], data)?, labels, 2)
}

fn gaussian_blobs(s: &SyntheticSizes, rng: &mut ChaCha8Rng) -> Result<Dataset> {
    if s.classes < 2 || s.channels == 0 || s.noise <= 0.0 {
        return Err(invalid("gaussian_blobs needs ≥ 2 classes, ≥ 1 channel and noise > 0"));
    }
    let labels = balanced_labels(s.examples, s.classes, rng)?;
    let noise = Normal::new(0.0, s.noise).map_err(|e| invalid(e.to_string()))?;
    // centres evenly spaced on a radius-2 circle in the first two coordinates
    let centre = |k: usize, j: usize| {
        let ang = 2.0 * PI * k as f64 / s.classes as f64;
        match j {
            0 => 2.0 * ang.cos(),
            1 => 2.0 * ang.sin(),
            _ => 0.0,
        }
    };
    let mut data = Vec::with_capacity(s.examples * s.channels);
    for &label in &labels {
        for j in 0..s.channels {
            data.push(centre(label, j) + noise.sample(rng));
        }
    }
    Dataset::new(Tensor::new(vec![s.examples, s.channels], data)?, labels, s.classes)
}

/// Generates the named task. The same `(name, seed, sizes)` always yields the
/// same dataset, and every class gets exactly `examples / classes` members.
pub fn synthetic_task(name: &str, seed: u64, sizes: &SyntheticSizes) -> Result<Dataset> {
    let task: SyntheticTask = name.parse()?;
    generate(task, seed, sizes)
}

pub fn generate(task: SyntheticTask, seed: u64, sizes: &SyntheticSizes) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match task {
        SyntheticTask::TwoSines => two_sines(sizes, &mut rng),
        SyntheticTask::PatternDetect => pattern_detect(sizes, &mut rng),
        SyntheticTask::GaussianBlobs => gaussian_blobs(sizes, &mut rng),
    }
}
