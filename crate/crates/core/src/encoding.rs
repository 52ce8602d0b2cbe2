//! Real-valued sequence → ternary spike train encoders.
//!
//! All comparisons against thresholds are strict, so a change of exactly the
//! threshold does not spike. Multichannel sequences are encoded channel by
//! channel.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::neurons::dims3;
use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    /// Temporal contrast.
    Tc,
    /// Step-forward.
    Sf,
    /// Moving window.
    Mw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    /// Scales the spread term of the temporal-contrast threshold.
    pub factor: f64,
    /// Step-forward / moving-window threshold.
    pub threshold: f64,
    /// Moving-window length.
    pub window: usize,
}

/// How signed spike trains are presented to a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RailMode {
    /// Two non-negative channels per input: positive spikes, then negative spikes.
    #[default]
    TwoRail,
    /// One channel carrying −1/0/+1.
    Signed,
}

/// Starting value and step needed to rebuild a step-forward encoded signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeMeta {
    pub initial: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeTrain {
    /// `[T]`, entries in {−1, 0, +1}.
    pub values: Tensor,
    pub meta: Option<DecodeMeta>,
}

impl SpikeTrain {
    fn from_spikes(spikes: Vec<f64>, meta: Option<DecodeMeta>) -> Result<Self> {
        Ok(Self {
            values: Tensor::vector(spikes)?,
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn spike_count(&self) -> usize {
        self.values.data().iter().filter(|v| **v != 0.0).count()
    }
}

fn ternary(x: f64, thr: f64) -> f64 {
    if x > thr {
        1.0
    } else if x < -thr {
        -1.0
    } else {
        0.0
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(invalid(format!("{name} must be positive, got {v}")));
    }
    Ok(())
}

/// Threshold on forward differences: `mean(|d|) + factor · std(|d|)`.
pub fn encode_tc(signal: &[f64], factor: f64) -> Result<SpikeTrain> {
    if signal.len() < 2 {
        return Err(invalid(format!(
            "temporal contrast needs at least 2 samples, got {}",
            signal.len()
        )));
    }
    if !(factor >= 0.0 && factor.is_finite()) {
        return Err(invalid(format!("factor must be non-negative, got {factor}")));
    }
    let mut diffs: Vec<f64> = signal.windows(2).map(|w| w[1] - w[0]).collect();
    diffs.push(diffs[diffs.len() - 1]);
    let n = diffs.len() as f64;
    let mean = diffs.iter().map(|d| d.abs()).sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d.abs() - mean).powi(2)).sum::<f64>() / n;
    let thr = mean + factor * var.sqrt();
    let spikes = diffs.iter().map(|&d| ternary(d, thr)).collect();
    SpikeTrain::from_spikes(spikes, None)
}

/// Baseline starts at the first sample and moves by ±threshold on each spike.
pub fn encode_sf(signal: &[f64], threshold: f64) -> Result<SpikeTrain> {
    check_positive("threshold", threshold)?;
    let Some(&first) = signal.first() else {
        return Err(invalid("step-forward needs at least 1 sample"));
    };
    let mut base = first;
    let mut spikes = Vec::with_capacity(signal.len());
    spikes.push(0.0);
    for &s in &signal[1..] {
        let spike = if s > base + threshold {
            base += threshold;
            1.0
        } else if s < base - threshold {
            base -= threshold;
            -1.0
        } else {
            0.0
        };
        spikes.push(spike);
    }
    SpikeTrain::from_spikes(
        spikes,
        Some(DecodeMeta {
            initial: first,
            threshold,
        }),
    )
}

/// Baseline is the mean of the previous `window` samples.
pub fn encode_mw(signal: &[f64], threshold: f64, window: usize) -> Result<SpikeTrain> {
    check_positive("threshold", threshold)?;
    if window == 0 {
        return Err(invalid("window must be at least 1"));
    }
    if signal.is_empty() {
        return Err(invalid("moving window needs at least 1 sample"));
    }
    let mut spikes = vec![0.0; signal.len()];
    for t in 1..signal.len() {
        let past = &signal[t.saturating_sub(window)..t];
        // mean of (s[t] − s[k]) rather than s[t] − mean(s[k]): identical in exact
        // arithmetic, and shifting the signal cannot change rounding
        let rel = past.iter().map(|&p| signal[t] - p).sum::<f64>() / past.len() as f64;
        spikes[t] = ternary(rel, threshold);
    }
    SpikeTrain::from_spikes(spikes, None)
}

/// Reconstruction `s[0] + threshold · cumsum(spikes)` of a step-forward train.
pub fn decode_sf(train: &SpikeTrain) -> Result<Tensor> {
    let meta = train
        .meta
        .ok_or_else(|| invalid("spike train carries no step-forward decoding metadata"))?;
    let mut level = meta.initial;
    let out = train
        .values
        .data()
        .iter()
        .map(|s| {
            level += meta.threshold * s;
            level
        })
        .collect();
    Tensor::vector(out)
}

/// Fraction of non-zero entries.
pub fn sparsity(train: &SpikeTrain) -> f64 {
    if train.is_empty() {
        return 0.0;
    }
    train.spike_count() as f64 / train.len() as f64
}

/// Fraction of steps whose first difference is non-zero, the density a naive
/// per-step delta encoding would have.
pub fn naive_delta_density(signal: &[f64]) -> f64 {
    if signal.len() < 2 {
        return 0.0;
    }
    let changed = signal.windows(2).filter(|w| w[1] != w[0]).count();
    changed as f64 / signal.len() as f64
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        match self.kind {
            EncoderKind::Tc => {
                if !(self.factor >= 0.0 && self.factor.is_finite()) {
                    return Err(invalid(format!("factor must be non-negative, got {}", self.factor)));
                }
            }
            EncoderKind::Sf => check_positive("threshold", self.threshold)?,
            EncoderKind::Mw => {
                check_positive("threshold", self.threshold)?;
                if self.window == 0 {
                    return Err(invalid("window must be at least 1"));
                }
            }
        }
        Ok(())
    }

    pub fn encode(&self, signal: &[f64]) -> Result<SpikeTrain> {
        match self.kind {
            EncoderKind::Tc => encode_tc(signal, self.factor),
            EncoderKind::Sf => encode_sf(signal, self.threshold),
            EncoderKind::Mw => encode_mw(signal, self.threshold, self.window),
        }
    }

    /// Encodes each channel of a `[T × D]` sequence independently.
    pub fn encode_channels(&self, sequence: &Tensor) -> Result<Vec<SpikeTrain>> {
        let [_, d] = *sequence.shape() else {
            return Err(invalid(format!(
                "expected a [T × channels] sequence, got {:?}",
                sequence.shape()
            )));
        };
        let columns = sequence.transpose()?;
        (0..d)
            .map(|c| self.encode(columns.select(0, c)?.data()))
            .collect()
    }

    /// Encodes a `[N × T × D]` batch into network input `[N × T × D']`, with
    /// `D' = 2D` for two-rail presentation and `D' = D` for signed.
    pub fn encode_batch(&self, x: &Tensor, rails: RailMode) -> Result<Tensor> {
        let (n, t, d) = dims3(x)?;
        let width = match rails {
            RailMode::TwoRail => 2 * d,
            RailMode::Signed => d,
        };
        let mut out = vec![0.0; n * t * width];
        for i in 0..n {
            let trains = self.encode_channels(&x.select(0, i)?)?;
            for (c, train) in trains.iter().enumerate() {
                for (step, &s) in train.values.data().iter().enumerate() {
                    let row = (i * t + step) * width;
                    match rails {
                        RailMode::Signed => out[row + c] = s,
                        RailMode::TwoRail if s > 0.0 => out[row + 2 * c] = 1.0,
                        RailMode::TwoRail if s < 0.0 => out[row + 2 * c + 1] = 1.0,
                        RailMode::TwoRail => {}
                    }
                }
            }
        }
        Tensor::new(vec![n, t, width], out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vals(t: &SpikeTrain) -> Vec<f64> {
        t.values.data().to_vec()
    }

    #[test]
    fn tc_constant_is_silent() {
        assert_eq!(vals(&encode_tc(&[2.0; 6], 0.5).unwrap()), vec![0.0; 6]);
    }

    #[test]
    fn tc_strict_threshold() {
        // d = [1, −1, −1], mean |d| = 1, std 0, so thr = 1 and nothing exceeds it
        assert_eq!(vals(&encode_tc(&[0.0, 1.0, 0.0], 0.0).unwrap()), vec![0.0; 3]);
    }

    #[test]
    fn tc_single_jump() {
        let mut s: Vec<f64> = (0..40).map(|i| 0.01 * i as f64).collect();
        for v in s.iter_mut().skip(20) {
            *v += 5.0;
        }
        let train = encode_tc(&s, 1.0).unwrap();
        let spikes = vals(&train);
        assert_eq!(train.spike_count(), 1);
        assert_eq!(spikes[19], 1.0);
    }

    #[test]
    fn tc_too_short() {
        assert!(encode_tc(&[1.0], 1.0).is_err());
    }

    #[test]
    fn sf_examples() {
        assert_eq!(vals(&encode_sf(&[1.0, 1.0, 1.0], 0.5).unwrap()), vec![0.0; 3]);
        assert_eq!(
            vals(&encode_sf(&[0.0, 0.6, 0.2], 0.5).unwrap()),
            vec![0.0, 1.0, 0.0]
        );
        assert_eq!(
            vals(&encode_sf(&[0.0, 1.0, 2.0, 3.0], 1.0).unwrap()),
            vec![0.0, 0.0, 1.0, 1.0]
        );
        assert!(encode_sf(&[0.0], 0.0).is_err());
    }

    #[test]
    fn mw_examples() {
        assert_eq!(vals(&encode_mw(&[3.0; 5], 0.1, 3).unwrap()), vec![0.0; 5]);
        assert_eq!(
            vals(&encode_mw(&[0.0, 0.0, 3.0], 1.0, 2).unwrap()),
            vec![0.0, 0.0, 1.0]
        );
        assert!(encode_mw(&[0.0], -1.0, 2).is_err());
    }

    #[test]
    fn mw_window_one_compares_with_previous() {
        let s = [0.0, 0.5, 2.0, 1.9, 0.0, 0.4];
        let spikes = vals(&encode_mw(&s, 0.45, 1).unwrap());
        let expected: Vec<f64> = std::iter::once(0.0)
            .chain(s.windows(2).map(|w| ternary(w[1] - w[0], 0.45)))
            .collect();
        assert_eq!(spikes, expected);
    }

    #[test]
    fn decode_examples() {
        let train = SpikeTrain::from_spikes(
            vec![0.0, 1.0, 1.0],
            Some(DecodeMeta {
                initial: 0.0,
                threshold: 1.0,
            }),
        )
        .unwrap();
        assert_eq!(decode_sf(&train).unwrap().data(), &[0.0, 1.0, 2.0]);
        let silent = encode_sf(&[0.7, 0.7, 0.7], 0.2).unwrap();
        assert_eq!(decode_sf(&silent).unwrap().data(), &[0.7, 0.7, 0.7]);
        assert!(decode_sf(&encode_mw(&[0.0, 1.0], 0.5, 1).unwrap()).is_err());
    }

    #[test]
    fn sparsity_counts() {
        let t = |v: Vec<f64>| SpikeTrain::from_spikes(v, None).unwrap();
        assert_eq!(sparsity(&t(vec![0.0; 4])), 0.0);
        assert_eq!(sparsity(&t(vec![1.0, -1.0, 1.0])), 1.0);
        assert_eq!(sparsity(&t(vec![0.0, 1.0, 0.0, -1.0])), 0.5);
    }

    #[test]
    fn batch_rails() {
        let cfg = EncoderConfig {
            kind: EncoderKind::Sf,
            factor: 0.0,
            threshold: 0.5,
            window: 1,
        };
        // one sample, T=3, two channels
        let x = Tensor::new(vec![1, 3, 2], vec![0.0, 0.0, 1.0, -1.0, 1.0, -1.0]).unwrap();
        let two = cfg.encode_batch(&x, RailMode::TwoRail).unwrap();
        assert_eq!(two.shape(), &[1, 3, 4]);
        assert_eq!(&two.data()[4..8], &[1.0, 0.0, 0.0, 1.0]);
        let signed = cfg.encode_batch(&x, RailMode::Signed).unwrap();
        assert_eq!(&signed.data()[2..4], &[1.0, -1.0]);
    }

    fn dyadic_signal() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-64i32..64, 2..40)
            .prop_map(|v| v.into_iter().map(|k| k as f64 / 8.0).collect())
    }

    proptest! {
        #[test]
        fn outputs_are_ternary(s in prop::collection::vec(-10.0f64..10.0, 2..60),
                               thr in 0.01f64..3.0, w in 1usize..6) {
            for train in [encode_tc(&s, thr).unwrap(), encode_sf(&s, thr).unwrap(), encode_mw(&s, thr, w).unwrap()] {
                prop_assert!(train.values.data().iter().all(|v| [-1.0, 0.0, 1.0].contains(v)));
                prop_assert_eq!(train.len(), s.len());
            }
        }

        #[test]
        fn baseline_encoders_shift_invariant(s in dyadic_signal(), c in -256i32..256,
                                             k in 1i32..16, w in 1usize..6) {
            let c = c as f64 / 4.0;
            let thr = k as f64 / 8.0;
            let shifted: Vec<f64> = s.iter().map(|v| v + c).collect();
            prop_assert_eq!(encode_sf(&s, thr).unwrap().values, encode_sf(&shifted, thr).unwrap().values);
            prop_assert_eq!(encode_mw(&s, thr, w).unwrap().values, encode_mw(&shifted, thr, w).unwrap().values);
        }

        #[test]
        fn tc_and_mw_monotone_in_threshold(s in prop::collection::vec(-5.0f64..5.0, 2..50),
                                           lo in 0.01f64..2.0, extra in 0.0f64..2.0, w in 1usize..5) {
            let hi = lo + extra;
            prop_assert!(encode_tc(&s, hi).unwrap().spike_count() <= encode_tc(&s, lo).unwrap().spike_count());
            prop_assert!(encode_mw(&s, hi, w).unwrap().spike_count() <= encode_mw(&s, lo, w).unwrap().spike_count());
        }

        #[test]
        fn sf_monotone_for_bounded_derivative(
            steps in prop::collection::vec(-1.0f64..1.0, 1..80),
            slope in 0.01f64..0.5, extra in 0.0f64..2.0,
        ) {
            // per-step change bounded by `slope`, thresholds at or above it
            let mut s = vec![0.0];
            for d in &steps {
                let last = *s.last().unwrap();
                s.push(last + slope * d);
            }
            let lo = slope;
            let hi = slope + extra;
            prop_assert!(encode_sf(&s, hi).unwrap().spike_count() <= encode_sf(&s, lo).unwrap().spike_count());
        }
    }
}
