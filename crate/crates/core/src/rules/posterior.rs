use super::mala::WeightSample;
use crate::error::{invalid, Result};
use crate::neurons::Model;
use crate::numerics::Tensor;

/// Monte-Carlo predictive summary over posterior samples.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorPrediction {
    /// `[N × C]` mean of the per-sample softmax outputs.
    pub mean_probs: Tensor,
    /// `[N × C]` across-sample standard deviation of those outputs.
    pub std_probs: Tensor,
    /// `[N]` entropy (nats) of the mean prediction.
    pub entropy: Vec<f64>,
}

impl PosteriorPrediction {
    pub fn predicted(&self) -> Vec<usize> {
        self.mean_probs.argmax_rows()
    }

    /// Across-sample std of each example's predicted-class probability.
    pub fn predicted_std(&self) -> Vec<f64> {
        let c = self.std_probs.cols();
        self.predicted()
            .iter()
            .enumerate()
            .map(|(i, &k)| self.std_probs.data()[i * c + k])
            .collect()
    }
}

pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

/// Averages softmax outputs of `model` under every sample's parameters.
pub fn posterior_predict(samples: &[WeightSample], model: &Model, inputs: &Tensor) -> Result<PosteriorPrediction> {
    if samples.is_empty() {
        return Err(invalid("posterior prediction needs at least one sample"));
    }
    let mut m = model.clone();
    let probs: Vec<Tensor> = samples
        .iter()
        .map(|s| {
            m.set_params(&s.params)?;
            m.forward(inputs)?.logits.softmax()
        })
        .collect::<Result<_>>()?;
    summarize(&probs)
}

/// Mean, std and entropy from per-sample probability tables `[N × C]`.
pub fn summarize(probs: &[Tensor]) -> Result<PosteriorPrediction> {
    let k = probs.len() as f64;
    let first = probs.first().ok_or_else(|| invalid("no predictions to summarise"))?;
    let mut mean = Tensor::zeros(first.shape());
    for p in probs {
        mean = mean.add(p)?;
    }
    let mean = mean.scale(1.0 / k)?;
    // shifted by the first sample so identical samples give exactly zero
    let mut m1 = Tensor::zeros(first.shape());
    let mut m2 = Tensor::zeros(first.shape());
    for p in probs {
        let d = p.sub(first)?;
        m2 = m2.add(&d.square()?)?;
        m1 = m1.add(&d)?;
    }
    let m1 = m1.scale(1.0 / k)?;
    let var = m2.scale(1.0 / k)?.sub(&m1.square()?)?;
    let std = var.map_checked("posterior std", |v| v.max(0.0).sqrt())?;
    let c = mean.cols();
    let entropy = mean.data().chunks(c).map(entropy).collect();
    Ok(PosteriorPrediction {
        mean_probs: mean,
        std_probs: std,
        entropy,
    })
}
