//! Report artifacts: CSV tables for every curve the evaluation produces and
//! a small self-contained SVG line chart (static markup, no scripts, no
//! external references). Floats are written with Rust's shortest
//! round-trippable formatting, so parsing a CSV back recovers exact values.

use crate::error::{Error, Result};
use crate::eval::{BaselinePoint, ConvergenceCurve, MetricCurves, MetricPoint, ReferralPoint};
use crate::train::EpochStats;
use crate::uncertainty::UncertaintyVector;

pub fn training_log_csv(stats: &[EpochStats]) -> String {
    let mut out = String::from("epoch,mean_objective,train_accuracy\n");
    for s in stats {
        out.push_str(&format!("{},{},{}\n", s.epoch, s.mean_objective, s.train_accuracy));
    }
    out
}

pub fn metric_curve_csv(curves: &MetricCurves) -> String {
    let mut out = String::from("threshold,npv,tpr,ua\n");
    for p in &curves.points {
        out.push_str(&format!("{},{},{},{}\n", p.threshold, p.npv, p.tpr, p.ua));
    }
    out
}

/// One row per evaluated sample.
pub fn per_sample_csv(report: &UncertaintyVector, labels: &[usize]) -> Result<String> {
    if labels.len() != report.len() {
        return Err(Error::Input(format!(
            "{} labels for {} evaluated samples",
            labels.len(),
            report.len()
        )));
    }
    let classes = report.mean.shape()[1];
    let mut out = String::from(
        "sample,label,predicted,correct,entropy,mutual_information,predicted_class_variance\n",
    );
    for n in 0..report.len() {
        let predicted = report.predicted[n];
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            n,
            labels[n],
            predicted,
            (predicted == labels[n]) as u8,
            report.entropy[n],
            report.mutual_information[n],
            report.variance.data()[n * classes + predicted],
        ));
    }
    Ok(out)
}

/// Referral curve rows; pass the random baseline to add its columns. The
/// baseline must have been computed over the same fractions.
pub fn referral_csv(
    points: &[ReferralPoint],
    baseline: Option<&[BaselinePoint]>,
) -> Result<String> {
    let mut out = String::from("fraction,kept,accuracy");
    if baseline.is_some() {
        out.push_str(",baseline_mean,baseline_std");
    }
    out.push('\n');
    if let Some(base) = baseline {
        if base.len() != points.len()
            || points.iter().zip(base).any(|(p, b)| p.fraction != b.fraction)
        {
            return Err(Error::Input("baseline fractions do not match referral curve".into()));
        }
    }
    for (i, p) in points.iter().enumerate() {
        out.push_str(&format!("{},{},{}", p.fraction, p.kept, p.accuracy));
        if let Some(base) = baseline {
            out.push_str(&format!(",{},{}", base[i].mean_accuracy, base[i].std_accuracy));
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn convergence_csv(curve: &ConvergenceCurve) -> String {
    let mut out = String::from("passes,mean_error,std_error,reference_error\n");
    for p in &curve.points {
        out.push_str(&format!(
            "{},{},{},{}\n",
            p.passes, p.mean_error, p.std_error, curve.reference_error
        ));
    }
    out
}

/// The threshold interval on which a vacuous flag is set, as (first, last),
/// for the summary JSON. `None` when the flag never fires.
pub fn vacuous_range(
    points: &[MetricPoint],
    flag: impl Fn(&MetricPoint) -> bool,
) -> Option<(f64, f64)> {
    let mut hits = points.iter().filter(|p| flag(p)).map(|p| p.threshold);
    let first = hits.next()?;
    Some((first, hits.last().unwrap_or(first)))
}

// ---------------------------------------------------------------------------
// SVG line charts
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    /// Any SVG color keyword or #rrggbb.
    pub color: String,
    pub dashed: bool,
}

impl Series {
    pub fn new(label: &str, points: Vec<(f64, f64)>, color: &str) -> Series {
        Series { label: label.into(), points, color: color.into(), dashed: false }
    }

    pub fn dashed(label: &str, points: Vec<(f64, f64)>, color: &str) -> Series {
        Series { label: label.into(), points, color: color.into(), dashed: true }
    }
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 62.0;
const MARGIN_RIGHT: f64 = 18.0;
const MARGIN_TOP: f64 = 42.0;
const MARGIN_BOTTOM: f64 = 52.0;

fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if (1e-3..1e5).contains(&a) {
        let s = format!("{v:.3}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        s.to_string()
    } else {
        format!("{v:.2e}")
    }
}

/// A static line chart. Axes are sized to the data with a small pad; each
/// series becomes one polyline plus a legend entry.
pub fn line_chart_svg(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series],
) -> Result<String> {
    if series.iter().all(|s| s.points.is_empty()) {
        return Err(Error::Input("nothing to plot".into()));
    }
    let all = series.iter().flat_map(|s| s.points.iter());
    if all.clone().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::Numeric("non-finite point in chart data".into()));
    }
    let (mut x0, mut x1, mut y0, mut y1) =
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x1 == x0 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y1 == y0 {
        y0 -= 0.5;
        y1 += 0.5;
    } else {
        let pad = (y1 - y0) * 0.05;
        y0 -= pad;
        y1 += pad;
    }
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let px = |x: f64| MARGIN_LEFT + (x - x0) / (x1 - x0) * plot_w;
    let py = |y: f64| MARGIN_TOP + (1.0 - (y - y0) / (y1 - y0)) * plot_h;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" \
         font-size=\"15\">{}</text>\n",
        WIDTH / 2.0,
        xml_escape(title)
    ));

    // gridlines + ticks, 5 per axis
    for i in 0..5 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let (gx, gy) = (px(xv), py(yv));
        svg.push_str(&format!(
            "<line x1=\"{gx:.2}\" y1=\"{:.2}\" x2=\"{gx:.2}\" y2=\"{:.2}\" stroke=\"#dddddd\"/>\n",
            MARGIN_TOP,
            MARGIN_TOP + plot_h
        ));
        svg.push_str(&format!(
            "<line x1=\"{:.2}\" y1=\"{gy:.2}\" x2=\"{:.2}\" y2=\"{gy:.2}\" stroke=\"#dddddd\"/>\n",
            MARGIN_LEFT,
            MARGIN_LEFT + plot_w
        ));
        svg.push_str(&format!(
            "<text x=\"{gx:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-family=\"sans-serif\" \
             font-size=\"11\">{}</text>\n",
            MARGIN_TOP + plot_h + 16.0,
            xml_escape(&tick_label(xv))
        ));
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\" font-family=\"sans-serif\" \
             font-size=\"11\">{}</text>\n",
            MARGIN_LEFT - 6.0,
            gy + 4.0,
            xml_escape(&tick_label(yv))
        ));
    }

    // axes
    svg.push_str(&format!(
        "<line x1=\"{l:.2}\" y1=\"{t:.2}\" x2=\"{l:.2}\" y2=\"{b:.2}\" stroke=\"black\"/>\n\
         <line x1=\"{l:.2}\" y1=\"{b:.2}\" x2=\"{r:.2}\" y2=\"{b:.2}\" stroke=\"black\"/>\n",
        l = MARGIN_LEFT,
        r = MARGIN_LEFT + plot_w,
        t = MARGIN_TOP,
        b = MARGIN_TOP + plot_h
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" \
         font-size=\"12\">{}</text>\n",
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 12.0,
        xml_escape(x_label)
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{y:.2}\" text-anchor=\"middle\" font-family=\"sans-serif\" \
         font-size=\"12\" transform=\"rotate(-90 16 {y:.2})\">{}</text>\n",
        xml_escape(y_label),
        y = MARGIN_TOP + plot_h / 2.0
    ));

    for s in series {
        if s.points.is_empty() {
            continue;
        }
        let pts: Vec<String> =
            s.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let dash = if s.dashed { " stroke-dasharray=\"6 4\"" } else { "" };
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"{dash} points=\"{}\"/>\n",
            xml_escape(&s.color),
            pts.join(" ")
        ));
    }

    // legend, top-right corner of the plot area
    for (i, s) in series.iter().enumerate() {
        let ly = MARGIN_TOP + 14.0 + i as f64 * 16.0;
        let lx = MARGIN_LEFT + plot_w - 150.0;
        let dash = if s.dashed { " stroke-dasharray=\"6 4\"" } else { "" };
        svg.push_str(&format!(
            "<line x1=\"{lx:.2}\" y1=\"{ly:.2}\" x2=\"{:.2}\" y2=\"{ly:.2}\" stroke=\"{}\" \
             stroke-width=\"1.5\"{dash}/>\n",
            lx + 22.0,
            xml_escape(&s.color)
        ));
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
            lx + 28.0,
            ly + 4.0,
            xml_escape(&s.label)
        ));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{random_referral_baseline, referral_curve, sweep_curves};
    use crate::inference::McPredictive;
    use crate::tensor::Tensor;

    fn tiny_curves() -> MetricCurves {
        let predicted = vec![0, 1, 0, 1, 1];
        let labels = vec![0, 1, 1, 1, 0];
        let u = vec![0.1, 0.2, 0.9, 0.3, 0.8];
        sweep_curves(&predicted, &labels, &u, 11).unwrap()
    }

    /// Minimal well-formedness scan: every opened tag closes in order.
    fn assert_well_formed_xml(doc: &str) {
        let mut stack: Vec<String> = Vec::new();
        let mut rest = doc;
        while let Some(start) = rest.find('<') {
            let end = start + rest[start..].find('>').expect("unclosed <");
            let tag = &rest[start + 1..end];
            rest = &rest[end + 1..];
            if let Some(name) = tag.strip_prefix('/') {
                assert_eq!(stack.pop().as_deref(), Some(name), "mismatched </{name}>");
            } else if !tag.ends_with('/') && !tag.starts_with('?') && !tag.starts_with('!') {
                stack.push(tag.split_whitespace().next().unwrap().to_string());
            }
        }
        assert!(stack.is_empty(), "unclosed tags: {stack:?}");
        assert!(!rest.contains('>'), "stray '>' outside tags");
    }

    #[test]
    fn metric_csv_shape_and_round_trip() {
        let curves = tiny_curves();
        let csv = metric_curve_csv(&curves);
        let lines: Vec<&str> = csv.trim_end().lines().collect();
        assert_eq!(lines[0], "threshold,npv,tpr,ua");
        assert_eq!(lines.len(), 12);
        let first: Vec<f64> = lines[1].split(',').map(|v| v.parse().unwrap()).collect();
        let last: Vec<f64> = lines[11].split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(first[0], 0.0);
        assert_eq!(last[0], 1.0);
        // shortest-repr formatting parses back to the exact stored value
        assert_eq!(first[1], curves.points[0].npv);
    }

    #[test]
    fn referral_csv_with_and_without_baseline() {
        let predicted = vec![0, 1, 0, 1];
        let labels = vec![0, 1, 1, 1];
        let u = vec![0.1, 0.2, 0.9, 0.3];
        let fractions = [0.25, 0.5, 1.0];
        let points = referral_curve(&predicted, &labels, &u, &fractions).unwrap();
        let plain = referral_csv(&points, None).unwrap();
        assert!(plain.starts_with("fraction,kept,accuracy\n"));
        assert_eq!(plain.trim_end().lines().count(), 4);

        let base = random_referral_baseline(&predicted, &labels, &fractions, 5, 1).unwrap();
        let both = referral_csv(&points, Some(&base)).unwrap();
        assert!(both.starts_with("fraction,kept,accuracy,baseline_mean,baseline_std\n"));
        assert_eq!(both.trim_end().lines().next().unwrap().split(',').count(), 5);

        let short = &base[..2];
        assert!(referral_csv(&points, Some(short)).is_err());
    }

    #[test]
    fn per_sample_csv_has_one_row_per_sample() {
        let probs = Tensor::new(
            vec![2, 3, 2],
            vec![0.9, 0.1, 0.5, 0.5, 0.2, 0.8, 0.7, 0.3, 0.4, 0.6, 0.2, 0.8],
        )
        .unwrap();
        let mc = McPredictive::new(probs, Some(7)).unwrap();
        let report = UncertaintyVector::from_mc(&mc);
        let csv = per_sample_csv(&report, &[0, 1, 1]).unwrap();
        assert_eq!(csv.trim_end().lines().count(), 4);
        assert!(csv.starts_with("sample,label,predicted,correct,"));
        assert!(per_sample_csv(&report, &[0, 1]).is_err());
    }

    #[test]
    fn training_log_rows() {
        let stats = vec![
            EpochStats { epoch: 0, mean_objective: 2.3, train_accuracy: 0.4 },
            EpochStats { epoch: 1, mean_objective: 1.1, train_accuracy: 0.8 },
        ];
        let csv = training_log_csv(&stats);
        assert_eq!(csv, "epoch,mean_objective,train_accuracy\n0,2.3,0.4\n1,1.1,0.8\n");
    }

    #[test]
    fn vacuous_range_picks_flag_interval() {
        // all predictions correct -> TP+FN = 0 at every threshold, so the
        // TPR flag covers the whole grid. NPV's flag can never fire after
        // normalization: the least uncertain sample maps to 0, which no
        // threshold classifies as uncertain, so TN+FN >= 1 throughout.
        let predicted = vec![0, 1, 0, 1];
        let labels = vec![0, 1, 0, 1];
        let u = vec![0.1, 0.5, 0.9, 0.3];
        let curves = sweep_curves(&predicted, &labels, &u, 11).unwrap();
        assert_eq!(vacuous_range(&curves.points, |p| p.tpr_vacuous), Some((0.0, 1.0)));
        assert_eq!(vacuous_range(&curves.points, |p| p.npv_vacuous), None);
        assert_eq!(vacuous_range(&curves.points, |_| false), None);
    }

    #[test]
    fn chart_is_well_formed_and_escapes_labels() {
        let s1 = Series::new("a < b", vec![(0.0, 0.0), (0.5, 0.9), (1.0, 0.4)], "#1f77b4");
        let s2 = Series::dashed("baseline & co", vec![(0.0, 0.5), (1.0, 0.5)], "gray");
        let svg = line_chart_svg("x < y & \"z\"", "threshold", "rate", &[s1, s2]).unwrap();
        assert_well_formed_xml(&svg);
        assert!(svg.contains("&lt;") && svg.contains("&amp;"));
        assert!(!svg.contains("x < y"));
        assert!(svg.contains("stroke-dasharray"));
        assert_eq!(svg.matches("<polyline").count(), 2);
    }

    #[test]
    fn chart_handles_flat_series() {
        let flat = Series::new("flat", vec![(0.0, 1.0), (1.0, 1.0)], "red");
        let svg = line_chart_svg("t", "x", "y", &[flat]).unwrap();
        assert_well_formed_xml(&svg);
        assert!(!svg.contains("NaN"));
    }

    #[test]
    fn chart_rejects_bad_input() {
        assert!(line_chart_svg("t", "x", "y", &[]).is_err());
        let nan = Series::new("n", vec![(0.0, f64::NAN)], "red");
        assert!(line_chart_svg("t", "x", "y", &[nan]).is_err());
    }

    #[test]
    fn convergence_csv_repeats_reference() {
        let curve = ConvergenceCurve {
            points: vec![
                crate::eval::ConvergencePoint { passes: 2, mean_error: 0.3, std_error: 0.05 },
                crate::eval::ConvergencePoint { passes: 10, mean_error: 0.2, std_error: 0.01 },
            ],
            reference_error: 0.25,
        };
        let csv = convergence_csv(&curve);
        let lines: Vec<&str> = csv.trim_end().lines().collect();
        assert_eq!(lines[0], "passes,mean_error,std_error,reference_error");
        assert_eq!(lines[1], "2,0.3,0.05,0.25");
        assert_eq!(lines[2], "10,0.2,0.01,0.25");
    }
}
