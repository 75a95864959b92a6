//! Evaluating how well an uncertainty measure predicts the model's own
//! mistakes.
//!
//! The framing is a binary test swept over a threshold on normalized
//! uncertainty: "uncertain" is the positive outcome, "the prediction is
//! wrong" is the condition. Three summary rates per threshold:
//!
//! * NPV — of the samples flagged certain, how many are correct;
//! * TPR — of the wrong predictions, how many were flagged uncertain;
//! * UA  — overall agreement between (un)certainty and (in)correctness.
//!
//! Plus referral curves (drop the most uncertain fraction, watch accuracy),
//! a matched random-referral baseline, MC convergence curves over T, and a
//! two-sample KS test for comparing uncertainty populations.

use serde::Serialize;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::inference::mc_predict;
use crate::layers::{NetworkParams, NetworkSpec};
use crate::masks::{derive_pass_seed, MaskConfig};
use crate::rng::{mix64, SplitMix64};
use crate::uncertainty::{predict_labels, UncertaintyVector};

/// Min-max normalize to [0, 1] over the whole set. A constant vector maps to
/// all zeros. At least one value required.
pub fn normalize_uncertainty(u: &[f64]) -> Result<Vec<f64>> {
    if u.is_empty() {
        return Err(Error::Input("cannot normalize an empty uncertainty vector".into()));
    }
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite uncertainty value".into()));
    }
    let min = u.iter().copied().fold(f64::INFINITY, f64::min);
    let max = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        return Ok(vec![0.0; u.len()]);
    }
    let span = max - min;
    Ok(u.iter().map(|&v| (v - min) / span).collect())
}

/// Per-sample correctness and uncertainty verdicts at one threshold.
/// `uncertain` is a strict comparison: normalized u > threshold.
#[derive(Clone, Debug)]
pub struct BinaryMaps {
    pub correct: Vec<bool>,
    pub uncertain: Vec<bool>,
}

pub fn build_binary_maps(
    predicted: &[usize],
    labels: &[usize],
    normalized_u: &[f64],
    threshold: f64,
) -> Result<BinaryMaps> {
    if predicted.is_empty() {
        return Err(Error::Input("empty evaluation set".into()));
    }
    if predicted.len() != labels.len() || predicted.len() != normalized_u.len() {
        return Err(Error::Input(format!(
            "length mismatch: {} predictions, {} labels, {} uncertainties",
            predicted.len(),
            labels.len(),
            normalized_u.len()
        )));
    }
    if !threshold.is_finite() {
        return Err(Error::Input(format!("threshold {threshold} is not finite")));
    }
    Ok(BinaryMaps {
        correct: predicted.iter().zip(labels).map(|(p, l)| p == l).collect(),
        uncertain: normalized_u.iter().map(|&v| v > threshold).collect(),
    })
}

/// Confusion counts with "uncertain" as the positive outcome and "incorrect"
/// as the condition: TP = uncertain and wrong, TN = certain and correct.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionCounts {
    pub true_positive: usize,
    pub true_negative: usize,
    pub false_positive: usize,
    pub false_negative: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.true_positive + self.true_negative + self.false_positive + self.false_negative
    }
}

pub fn confusion_counts(maps: &BinaryMaps) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for (&correct, &uncertain) in maps.correct.iter().zip(&maps.uncertain) {
        match (uncertain, correct) {
            (true, false) => c.true_positive += 1,
            (false, true) => c.true_negative += 1,
            (true, true) => c.false_positive += 1,
            (false, false) => c.false_negative += 1,
        }
    }
    c
}

/// The three rates at one threshold. A zero-denominator rate is reported as
/// 1.0 with its `*_vacuous` flag set — "no counterexamples" rather than
/// an arbitrary 0/0.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ThresholdMetrics {
    pub npv: f64,
    pub tpr: f64,
    pub ua: f64,
    pub npv_vacuous: bool,
    pub tpr_vacuous: bool,
}

pub fn metrics_at_threshold(c: &ConfusionCounts) -> ThresholdMetrics {
    let (tp, tn) = (c.true_positive as f64, c.true_negative as f64);
    let (npv, npv_vacuous) = if c.true_negative + c.false_negative == 0 {
        (1.0, true)
    } else {
        (tn / (c.true_negative + c.false_negative) as f64, false)
    };
    let (tpr, tpr_vacuous) = if c.true_positive + c.false_negative == 0 {
        (1.0, true)
    } else {
        (tp / (c.true_positive + c.false_negative) as f64, false)
    };
    let ua = (tp + tn) / c.total() as f64;
    ThresholdMetrics { npv, tpr, ua, npv_vacuous, tpr_vacuous }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct MetricPoint {
    pub threshold: f64,
    pub npv: f64,
    pub tpr: f64,
    pub ua: f64,
    pub npv_vacuous: bool,
    pub tpr_vacuous: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct MetricCurves {
    pub points: Vec<MetricPoint>,
    pub auc_npv: f64,
    pub auc_tpr: f64,
    pub auc_ua: f64,
}

/// Trapezoidal area under (x, y); x ascending.
fn trapezoid(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) * 0.5)
        .sum()
}

/// Sweep the three rates over `grid_size` evenly spaced thresholds in
/// [0, 1] (so thresholds i/(grid_size-1)) and integrate each curve.
/// Uncertainties are normalized internally over the whole set.
pub fn sweep_curves(
    predicted: &[usize],
    labels: &[usize],
    uncertainty: &[f64],
    grid_size: usize,
) -> Result<MetricCurves> {
    if grid_size < 2 {
        return Err(Error::Config(format!("threshold grid needs >= 2 points, got {grid_size}")));
    }
    let normalized = normalize_uncertainty(uncertainty)?;
    let mut points = Vec::with_capacity(grid_size);
    for i in 0..grid_size {
        let threshold = i as f64 / (grid_size - 1) as f64;
        let maps = build_binary_maps(predicted, labels, &normalized, threshold)?;
        let m = metrics_at_threshold(&confusion_counts(&maps));
        points.push(MetricPoint {
            threshold,
            npv: m.npv,
            tpr: m.tpr,
            ua: m.ua,
            npv_vacuous: m.npv_vacuous,
            tpr_vacuous: m.tpr_vacuous,
        });
    }
    let xs: Vec<f64> = points.iter().map(|p| p.threshold).collect();
    let auc = |f: &dyn Fn(&MetricPoint) -> f64| {
        trapezoid(&xs.iter().copied().zip(points.iter().map(|p| f(p))).collect::<Vec<_>>())
    };
    Ok(MetricCurves {
        auc_npv: auc(&|p| p.npv),
        auc_tpr: auc(&|p| p.tpr),
        auc_ua: auc(&|p| p.ua),
        points,
    })
}

// ---------------------------------------------------------------------------
// Referral
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, Serialize)]
pub struct ReferralPoint {
    /// Fraction of the dataset retained (the least uncertain samples).
    pub fraction: f64,
    pub kept: usize,
    pub accuracy: f64,
}

/// Accuracy on the `ceil(f * N)` least-uncertain samples for each fraction
/// `f`. Ordering ties break by sample index, so the curve is deterministic.
pub fn referral_curve(
    predicted: &[usize],
    labels: &[usize],
    uncertainty: &[f64],
    fractions: &[f64],
) -> Result<Vec<ReferralPoint>> {
    if predicted.is_empty() {
        return Err(Error::Input("empty evaluation set".into()));
    }
    if predicted.len() != labels.len() || predicted.len() != uncertainty.len() {
        return Err(Error::Input("length mismatch in referral inputs".into()));
    }
    if let Some(&bad) = fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
        return Err(Error::Input(format!("referral fraction {bad} outside (0, 1]")));
    }
    let n = predicted.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| uncertainty[a].total_cmp(&uncertainty[b]).then(a.cmp(&b)));
    let correct_in_order: Vec<bool> =
        order.iter().map(|&i| predicted[i] == labels[i]).collect();
    // prefix sums of correctness in uncertainty order
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0usize);
    for &c in &correct_in_order {
        prefix.push(prefix.last().unwrap() + usize::from(c));
    }
    Ok(fractions
        .iter()
        .map(|&f| {
            let kept = ((f * n as f64).ceil() as usize).clamp(1, n);
            ReferralPoint { fraction: f, kept, accuracy: prefix[kept] as f64 / kept as f64 }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct BaselinePoint {
    pub fraction: f64,
    pub kept: usize,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
}

/// The referral baseline: keep `ceil(f * N)` samples chosen uniformly at
/// random instead of by uncertainty; mean and population std over
/// `repetitions` draws.
pub fn random_referral_baseline(
    predicted: &[usize],
    labels: &[usize],
    fractions: &[f64],
    repetitions: usize,
    seed: u64,
) -> Result<Vec<BaselinePoint>> {
    if predicted.is_empty() {
        return Err(Error::Input("empty evaluation set".into()));
    }
    if predicted.len() != labels.len() {
        return Err(Error::Input("length mismatch in baseline inputs".into()));
    }
    if repetitions == 0 {
        return Err(Error::Config("need at least one baseline repetition".into()));
    }
    if let Some(&bad) = fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
        return Err(Error::Input(format!("referral fraction {bad} outside (0, 1]")));
    }
    let n = predicted.len();
    let correct: Vec<bool> = predicted.iter().zip(labels).map(|(p, l)| p == l).collect();
    let mut out = Vec::with_capacity(fractions.len());
    for (fi, &f) in fractions.iter().enumerate() {
        let kept = ((f * n as f64).ceil() as usize).clamp(1, n);
        let mut accs = Vec::with_capacity(repetitions);
        for rep in 0..repetitions {
            let mut rng = SplitMix64::new(mix64(seed ^ (fi as u64) << 32 ^ rep as u64));
            let picked = rng.choose_indices(n, kept);
            let hits = picked.iter().filter(|&&i| correct[i]).count();
            accs.push(hits as f64 / kept as f64);
        }
        let mean = accs.iter().sum::<f64>() / repetitions as f64;
        let var = accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / repetitions as f64;
        out.push(BaselinePoint { fraction: f, kept, mean_accuracy: mean, std_accuracy: var.sqrt() });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Convergence over T
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, Serialize)]
pub struct ConvergencePoint {
    pub passes: usize,
    pub mean_error: f64,
    pub std_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceCurve {
    pub points: Vec<ConvergencePoint>,
    /// Error of the deterministic (maskless) forward pass on the same data.
    pub reference_error: f64,
}

/// Test error of the MC prediction as a function of the pass count T,
/// repeated with fresh mask seeds. Repetition `r` of entry `t_list[k]` uses
/// base seed `derive_pass_seed(root_seed, r, k)`, so the whole curve is
/// reproducible from one root seed.
pub fn convergence_curve(
    spec: &NetworkSpec,
    params: &NetworkParams,
    config: &MaskConfig,
    data: &LabeledDataset,
    t_list: &[usize],
    repetitions: usize,
    root_seed: u64,
) -> Result<ConvergenceCurve> {
    if t_list.is_empty() || t_list.iter().any(|&t| t == 0) {
        return Err(Error::Config("t_list must be non-empty with positive entries".into()));
    }
    if repetitions == 0 {
        return Err(Error::Config("need at least one repetition".into()));
    }
    if !config.is_stochastic() {
        return Err(Error::Config("convergence curve needs a stochastic mask mode".into()));
    }
    let reference = {
        let probs = crate::inference::standard_predict(spec, params, &data.inputs)?;
        error_rate(&predict_labels(&probs), &data.labels)
    };
    let mut points = Vec::with_capacity(t_list.len());
    for (k, &t) in t_list.iter().enumerate() {
        let mut errs = Vec::with_capacity(repetitions);
        for rep in 0..repetitions {
            let mut cfg = config.clone();
            cfg.base_seed = derive_pass_seed(root_seed, rep as u64, k as u64);
            let mc = mc_predict(spec, params, &cfg, &data.inputs, t)?;
            let uv = UncertaintyVector::from_mc(&mc);
            errs.push(uv.error_rate(&data.labels));
        }
        let mean = errs.iter().sum::<f64>() / repetitions as f64;
        let var = errs.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / repetitions as f64;
        points.push(ConvergencePoint { passes: t, mean_error: mean, std_error: var.sqrt() });
    }
    Ok(ConvergenceCurve { points, reference_error: reference })
}

fn error_rate(predicted: &[usize], labels: &[usize]) -> f64 {
    let wrong = predicted.iter().zip(labels).filter(|(p, l)| p != l).count();
    wrong as f64 / predicted.len() as f64
}

// ---------------------------------------------------------------------------
// Kolmogorov-Smirnov two-sample test
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, Serialize)]
pub struct KsTest {
    pub statistic: f64,
    pub p_value: f64,
    pub n1: usize,
    pub n2: usize,
}

/// Two-sample KS test: D = sup |ECDF1 - ECDF2|, with the asymptotic
/// Kolmogorov p-value at lambda = sqrt(n1 n2 / (n1 + n2)) * D.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsTest> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Input("KS test needs two non-empty samples".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite value in KS sample".into()));
    }
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (n1, n2) = (xs.len(), ys.len());

    // walk the union of observed values; after consuming everything <= v the
    // pointers are the two ECDFs at v
    let mut merged: Vec<f64> = Vec::with_capacity(n1 + n2);
    merged.extend_from_slice(&xs);
    merged.extend_from_slice(&ys);
    merged.sort_by(f64::total_cmp);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    for &v in &merged {
        while i < n1 && xs[i] <= v {
            i += 1;
        }
        while j < n2 && ys[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n1 as f64 - j as f64 / n2 as f64).abs());
    }

    let ne = (n1 as f64 * n2 as f64) / (n1 + n2) as f64;
    let lambda = ne.sqrt() * d;
    Ok(KsTest { statistic: d, p_value: kolmogorov_q(lambda), n1, n2 })
}

/// Asymptotic Kolmogorov tail probability
/// `Q(lambda) = 2 sum_{j>=1} (-1)^{j-1} exp(-2 j^2 lambda^2)`.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    let x = -2.0 * lambda * lambda;
    if x > -1e-6 {
        return 1.0; // series converges too slowly; the limit is 1
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=1000 {
        let term = sign * ((j * j) as f64 * x).exp();
        sum += term;
        if term.abs() < 1e-12 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;

    #[test]
    fn normalize_basic_and_constant() {
        let u = normalize_uncertainty(&[2.0, 4.0, 3.0]).unwrap();
        assert_eq!(u, vec![0.0, 1.0, 0.5]);
        let c = normalize_uncertainty(&[5.0, 5.0, 5.0]).unwrap();
        assert_eq!(c, vec![0.0, 0.0, 0.0]);
        assert!(normalize_uncertainty(&[]).is_err());
        assert!(normalize_uncertainty(&[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn confusion_orientation() {
        // one sample of each kind
        let predicted = [0, 0, 0, 0];
        let labels = [1, 0, 0, 1]; // wrong, right, right, wrong
        let u = [0.9, 0.1, 0.8, 0.2];
        let maps = build_binary_maps(&predicted, &labels, &u, 0.5).unwrap();
        let c = confusion_counts(&maps);
        // wrong+uncertain=TP, right+certain=TN, right+uncertain=FP, wrong+certain=FN
        assert_eq!(
            c,
            ConfusionCounts { true_positive: 1, true_negative: 1, false_positive: 1, false_negative: 1 }
        );
        let m = metrics_at_threshold(&c);
        assert_eq!(m.npv, 0.5);
        assert_eq!(m.tpr, 0.5);
        assert_eq!(m.ua, 0.5);
        assert!(!m.npv_vacuous && !m.tpr_vacuous);
    }

    #[test]
    fn strict_threshold_comparison() {
        let maps = build_binary_maps(&[0], &[0], &[0.5], 0.5).unwrap();
        assert!(!maps.uncertain[0], "u == threshold must count as certain");
        let maps = build_binary_maps(&[0], &[0], &[0.5 + 1e-12], 0.5).unwrap();
        assert!(maps.uncertain[0]);
    }

    #[test]
    fn perfect_separation_at_midpoint() {
        let predicted = [0, 1, 1, 1];
        let labels = [0, 1, 0, 1];
        let u = [0.1, 0.2, 0.9, 0.4];
        let norm = normalize_uncertainty(&u).unwrap();
        let m = metrics_at_threshold(&confusion_counts(
            &build_binary_maps(&predicted, &labels, &norm, 0.5).unwrap(),
        ));
        assert_eq!((m.npv, m.tpr, m.ua), (1.0, 1.0, 1.0));
    }

    #[test]
    fn vacuous_denominators_yield_one_with_flags() {
        // everything uncertain -> NPV vacuous
        let m = metrics_at_threshold(&confusion_counts(
            &build_binary_maps(&[0, 0], &[1, 0], &[0.9, 0.8], 0.5).unwrap(),
        ));
        assert_eq!(m.npv, 1.0);
        assert!(m.npv_vacuous);
        // no mistakes -> TPR vacuous
        let m = metrics_at_threshold(&confusion_counts(
            &build_binary_maps(&[1, 0], &[1, 0], &[0.9, 0.1], 0.5).unwrap(),
        ));
        assert_eq!(m.tpr, 1.0);
        assert!(m.tpr_vacuous);
    }

    #[test]
    fn sweep_grid_and_endpoints() {
        let predicted = [0, 1, 0, 1, 1];
        let labels = [0, 1, 1, 1, 0];
        let u = [0.1, 0.3, 0.8, 0.2, 0.9];
        let curves = sweep_curves(&predicted, &labels, &u, 101).unwrap();
        assert_eq!(curves.points.len(), 101);
        assert_eq!(curves.points[0].threshold, 0.0);
        assert_eq!(curves.points[100].threshold, 1.0);
        for p in &curves.points {
            for v in [p.npv, p.tpr, p.ua] {
                assert!((0.0..=1.0).contains(&v));
            }
        }
        for auc in [curves.auc_npv, curves.auc_tpr, curves.auc_ua] {
            assert!((0.0..=1.0 + 1e-12).contains(&auc));
        }
        assert!(matches!(sweep_curves(&predicted, &labels, &u, 1), Err(Error::Config(_))));
    }

    #[test]
    fn auc_of_flat_one_is_one() {
        // all predictions correct -> TPR vacuous 1.0 everywhere
        let curves = sweep_curves(&[0, 1], &[0, 1], &[0.2, 0.8], 11).unwrap();
        assert!((curves.auc_tpr - 1.0).abs() < 1e-12);
    }

    #[test]
    fn referral_orders_by_uncertainty_then_index() {
        let predicted = [1, 1, 1];
        let labels = [1, 0, 1];
        // sample 1 (the mistake) is most uncertain
        let u = [0.1, 0.9, 0.5];
        let pts = referral_curve(&predicted, &labels, &u, &[1.0 / 3.0, 2.0 / 3.0, 1.0]).unwrap();
        assert_eq!(pts[0].kept, 1);
        assert_eq!(pts[0].accuracy, 1.0);
        assert_eq!(pts[1].kept, 2);
        assert_eq!(pts[1].accuracy, 1.0);
        assert_eq!(pts[2].kept, 3);
        assert!((pts[2].accuracy - 2.0 / 3.0).abs() < 1e-12);
        // ceil: 0.5 of 3 keeps 2
        let pts = referral_curve(&predicted, &labels, &u, &[0.5]).unwrap();
        assert_eq!(pts[0].kept, 2);
        // fraction out of range
        assert!(referral_curve(&predicted, &labels, &u, &[0.0]).is_err());
        assert!(referral_curve(&predicted, &labels, &u, &[1.1]).is_err());
    }

    #[test]
    fn referral_ties_break_by_index() {
        let predicted = [0, 0, 0];
        let labels = [1, 0, 0]; // index 0 wrong
        let u = [0.5, 0.5, 0.5];
        let pts = referral_curve(&predicted, &labels, &u, &[1.0 / 3.0]).unwrap();
        // tie on u -> keeps index 0, the wrong one
        assert_eq!(pts[0].accuracy, 0.0);
    }

    #[test]
    fn baseline_full_fraction_is_exact_accuracy() {
        let predicted = [0, 1, 0, 1];
        let labels = [0, 1, 1, 1];
        let pts = random_referral_baseline(&predicted, &labels, &[1.0], 5, 3).unwrap();
        assert_eq!(pts[0].mean_accuracy, 0.75);
        assert_eq!(pts[0].std_accuracy, 0.0);
        let a = random_referral_baseline(&predicted, &labels, &[0.5], 10, 3).unwrap();
        let b = random_referral_baseline(&predicted, &labels, &[0.5], 10, 3).unwrap();
        assert_eq!(a[0].mean_accuracy, b[0].mean_accuracy);
    }

    #[test]
    fn ks_identical_and_disjoint() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let t = ks_two_sample(&a, &a).unwrap();
        assert_eq!(t.statistic, 0.0);
        assert!((t.p_value - 1.0).abs() < 1e-9);

        let b = [10.0, 11.0, 12.0, 13.0];
        let t = ks_two_sample(&a, &b).unwrap();
        assert_eq!(t.statistic, 1.0);
        assert!(t.p_value < 0.1, "p {}", t.p_value);
    }

    #[test]
    fn ks_hand_computed_statistic() {
        // F1 jumps at 1,2,3; F2 at 1.5,2.5,3.5; sup gap is 1/3
        let t = ks_two_sample(&[1.0, 2.0, 3.0], &[1.5, 2.5, 3.5]).unwrap();
        assert!((t.statistic - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn ks_large_separated_samples_reject() {
        let mut rng = SplitMix64::new(5);
        let a: Vec<f64> = (0..300).map(|_| rng.normal()).collect();
        let b: Vec<f64> = (0..300).map(|_| rng.normal() + 1.0).collect();
        let t = ks_two_sample(&a, &b).unwrap();
        assert!(t.p_value < 1e-6, "p {}", t.p_value);
        // same distribution: should not reject at any sane level
        let c: Vec<f64> = (0..300).map(|_| rng.normal()).collect();
        let t = ks_two_sample(&a, &c).unwrap();
        assert!(t.p_value > 0.001, "p {}", t.p_value);
    }

    #[test]
    fn ks_rejects_bad_input() {
        assert!(ks_two_sample(&[], &[1.0]).is_err());
        assert!(ks_two_sample(&[1.0], &[f64::NAN]).is_err());
    }

    proptest! {
        #[test]
        fn rates_are_probabilities(
            tp in 0usize..50, tn in 0usize..50, fp in 0usize..50, fneg in 0usize..50
        ) {
            prop_assume!(tp + tn + fp + fneg > 0);
            let c = ConfusionCounts {
                true_positive: tp,
                true_negative: tn,
                false_positive: fp,
                false_negative: fneg,
            };
            let m = metrics_at_threshold(&c);
            for v in [m.npv, m.tpr, m.ua] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }

        #[test]
        fn normalized_values_stay_in_unit_interval(
            u in proptest::collection::vec(-1e6f64..1e6, 1..40)
        ) {
            let n = normalize_uncertainty(&u).unwrap();
            prop_assert!(n.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }

        #[test]
        fn ks_statistic_and_p_are_bounded(
            a in proptest::collection::vec(-100f64..100.0, 1..30),
            b in proptest::collection::vec(-100f64..100.0, 1..30),
        ) {
            let t = ks_two_sample(&a, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&t.statistic));
            prop_assert!((0.0..=1.0).contains(&t.p_value));
        }
    }
}
