//! Per-sample uncertainty measures over an MC predictive tensor.
//!
//! * predictive entropy `H = -sum_c p_c ln p_c` of the pass-averaged
//!   distribution — total uncertainty;
//! * mutual information `I = H(mean) - mean_t H(pass_t)` — the part of the
//!   uncertainty that comes from disagreement between passes (model
//!   uncertainty), zero exactly when every pass says the same thing;
//! * per-class variance across passes — a simpler spread measure.
//!
//! Everything uses natural log, `0 ln 0 = 0`, and `0 <= I <= H <= ln C`
//! holds for every sample (asserted, with I clamped into [0, H] to absorb
//! last-bit rounding in the entropy sums).

use serde::{Deserialize, Serialize};

use crate::inference::McPredictive;
use crate::tensor::Tensor;

/// Entropy in nats of one distribution; zero-probability terms contribute 0.
pub fn entropy(row: &[f64]) -> f64 {
    let mut h = 0.0;
    for &p in row {
        if p > 0.0 {
            h -= p * p.ln();
        }
    }
    h
}

/// Entropy of each row of an `N x C` tensor.
pub fn entropy_rows(probs: &Tensor) -> Vec<f64> {
    let c = *probs.shape().last().expect("rank >= 1");
    probs.data().chunks(c).map(entropy).collect()
}

/// Predictive entropy per sample: H of the pass-averaged distribution.
pub fn predictive_entropy(mc: &McPredictive) -> Vec<f64> {
    entropy_rows(&mc.predictive_mean())
}

/// Mutual information per sample between prediction and the mask draw:
/// `H(mean over passes) - (1/T) sum_t H(pass t)`. Exactly 0.0 when all T
/// slices for the sample are bit-identical; clamped into [0, H] otherwise.
pub fn mutual_information(mc: &McPredictive) -> Vec<f64> {
    let (t, n) = (mc.pass_count(), mc.sample_count());
    let mean = mc.predictive_mean();
    let c = mc.class_count();
    let mut out = Vec::with_capacity(n);
    for s in 0..n {
        if mc.slices_identical(s) {
            out.push(0.0);
            continue;
        }
        let h_mean = entropy(&mean.data()[s * c..(s + 1) * c]);
        let mut h_avg = 0.0;
        for tt in 0..t {
            h_avg += entropy(mc.row(tt, s));
        }
        h_avg /= t as f64;
        out.push((h_mean - h_avg).clamp(0.0, h_mean));
    }
    out
}

/// Population variance of each class probability across the T passes,
/// `[N, C]`. Two-pass (centered) computation, so results are never negative.
pub fn class_variance(mc: &McPredictive) -> Tensor {
    let (t, n, c) = (mc.pass_count(), mc.sample_count(), mc.class_count());
    let mean = mc.predictive_mean();
    let m = mean.data();
    let mut out = vec![0.0; n * c];
    let inv_t = 1.0 / t as f64;
    for s in 0..n {
        for tt in 0..t {
            let row = mc.row(tt, s);
            for (k, &p) in row.iter().enumerate() {
                let d = p - m[s * c + k];
                out[s * c + k] += d * d;
            }
        }
        for k in 0..c {
            out[s * c + k] *= inv_t;
        }
    }
    Tensor::new(vec![n, c], out).expect("variance shape")
}

/// Argmax class per row of an `N x C` tensor; ties go to the lowest index.
pub fn predict_labels(mean: &Tensor) -> Vec<usize> {
    let c = *mean.shape().last().expect("rank >= 1");
    mean.data()
        .chunks(c)
        .map(|row| {
            let mut best = 0usize;
            for (i, &p) in row.iter().enumerate() {
                if p > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Which uncertainty measure drives an evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    Entropy,
    MutualInformation,
}

impl Measure {
    pub fn name(&self) -> &'static str {
        match self {
            Measure::Entropy => "entropy",
            Measure::MutualInformation => "mutual_information",
        }
    }
}

impl std::str::FromStr for Measure {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Measure, Self::Err> {
        match s {
            "entropy" | "h" => Ok(Measure::Entropy),
            "mutual_information" | "mutual-information" | "mi" => Ok(Measure::MutualInformation),
            other => Err(crate::error::Error::Config(format!(
                "measure must be entropy or mi, got '{other}'"
            ))),
        }
    }
}

/// Everything derived from one MC run in one place: the mean prediction and
/// all three uncertainty measures, index-aligned with the samples.
#[derive(Clone, Debug)]
pub struct UncertaintyVector {
    pub mean: Tensor,
    pub predicted: Vec<usize>,
    pub entropy: Vec<f64>,
    pub mutual_information: Vec<f64>,
    pub variance: Tensor,
}

impl UncertaintyVector {
    pub fn from_mc(mc: &McPredictive) -> UncertaintyVector {
        let mean = mc.predictive_mean();
        let predicted = predict_labels(&mean);
        let entropy = entropy_rows(&mean);
        let mutual_information = mutual_information(mc);
        let variance = class_variance(mc);
        let h_max = (mc.class_count() as f64).ln() + 1e-9;
        for (s, (&h, &i)) in entropy.iter().zip(&mutual_information).enumerate() {
            assert!(
                0.0 <= i && i <= h && h <= h_max,
                "uncertainty invariant violated at sample {s}: I={i} H={h} lnC={h_max}"
            );
        }
        UncertaintyVector { mean, predicted, entropy, mutual_information, variance }
    }

    pub fn len(&self) -> usize {
        self.predicted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predicted.is_empty()
    }

    pub fn measure(&self, m: Measure) -> &[f64] {
        match m {
            Measure::Entropy => &self.entropy,
            Measure::MutualInformation => &self.mutual_information,
        }
    }

    /// 0/1 error indicator and error rate against ground-truth labels.
    pub fn error_rate(&self, labels: &[usize]) -> f64 {
        assert_eq!(labels.len(), self.len(), "label count mismatch");
        let wrong = self.predicted.iter().zip(labels).filter(|(p, l)| p != l).count();
        wrong as f64 / self.len() as f64
    }
}
