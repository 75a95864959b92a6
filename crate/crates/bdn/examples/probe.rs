//! Scratch probe (not part of the example set): contrast-hardened render test
//! plus candidate-config sweep on the exact shared-run corpus.

use bdn::data::{digits, LabeledDataset};
use bdn::eval::sweep_curves;
use bdn::inference::{mc_predict, standard_predict};
use bdn::layers::NetworkSpec;
use bdn::masks::MaskConfig;
use bdn::uncertainty::predict_labels;
use bdn::rng::{mix64, SplitMix64};
use bdn::tensor::Tensor;
use bdn::train::{train, TrainConfig};
use bdn::uncertainty::UncertaintyVector;
use std::time::Instant;

fn bilinear(src: &[f64], sy: f64, sx: f64) -> f64 {
    let h = 8i64;
    let w = 8i64;
    let y0 = sy.floor() as i64;
    let x0 = sx.floor() as i64;
    let fy = sy - y0 as f64;
    let fx = sx - x0 as f64;
    let at = |y: i64, x: i64| -> f64 {
        if y < 0 || y >= h || x < 0 || x >= w {
            0.0
        } else {
            src[(y * w + x) as usize]
        }
    };
    at(y0, x0) * (1.0 - fy) * (1.0 - fx)
        + at(y0, x0 + 1) * (1.0 - fy) * fx
        + at(y0 + 1, x0) * fy * (1.0 - fx)
        + at(y0 + 1, x0 + 1) * fy * fx
}

/// Push mid-gray strokes toward saturation: linear stretch clamped at both ends.
fn harden(v: f64) -> f64 {
    ((v - 0.15) / 0.55).clamp(0.0, 1.0)
}

fn render_hard(src: &[f64], rng: &mut SplitMix64, out: &mut Vec<f64>) {
    let angle = rng.uniform(-8.0f64, 8.0).to_radians();
    let scale = rng.uniform(0.93, 1.07);
    let ty = rng.uniform(-1.5, 1.5);
    let tx = rng.uniform(-1.5, 1.5);
    let noise = 0.03;
    let (cos_t, sin_t) = (angle.cos(), angle.sin());
    let c_out = 13.5;
    let c_src = 3.5;
    let inv = 1.0 / (2.5 * scale);
    for y in 0..28 {
        for x in 0..28 {
            let dy = y as f64 - c_out - ty;
            let dx = x as f64 - c_out - tx;
            let sy = c_src + (cos_t * dy + sin_t * dx) * inv;
            let sx = c_src + (-sin_t * dy + cos_t * dx) * inv;
            let v = harden(bilinear(src, sy, sx));
            let jitter = rng.uniform(-noise, noise);
            out.push((v + jitter).clamp(0.0, 1.0));
        }
    }
}

fn split_pools(labels: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut seen = [0usize; 10];
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, &l) in labels.iter().enumerate() {
        if seen[l] % 6 == 5 {
            test.push(i);
        } else {
            train.push(i);
        }
        seen[l] += 1;
    }
    (train, test)
}

fn hard_set(train_split: bool, count: usize, seed: u64) -> LabeledDataset {
    let base = digits::base_corpus().unwrap();
    let (tr, te) = split_pools(&base.labels);
    let pool = if train_split { tr } else { te };
    let split_tag = if train_split { 0u64 } else { 1u64 << 40 };
    let mut data = Vec::with_capacity(count * 784);
    let mut labels = Vec::with_capacity(count);
    for j in 0..count {
        let mut rng = SplitMix64::new(mix64(seed ^ split_tag ^ j as u64));
        let src_idx = pool[rng.below(pool.len())];
        labels.push(base.labels[src_idx]);
        render_hard(base.inputs.sample(src_idx), &mut rng, &mut data);
    }
    LabeledDataset::new(Tensor::new(vec![count, 28, 28, 1], data).unwrap(), labels, 10).unwrap()
}

fn run_one(
    tag: &str,
    train_set: &LabeledDataset,
    test_set: &LabeledDataset,
    lr: f64,
    batch: usize,
) {
    let spec = NetworkSpec::lenet_small(vec![28, 28, 1], 10).unwrap();
    let mask = MaskConfig::dropconnect(0.5, 11);
    let config = TrainConfig {
        learning_rate: lr,
        l2_lambda: 1e-4,
        batch_size: batch,
        epochs: 15,
        mask: mask.clone(),
        init_seed: 1,
        shuffle_seed: 2,
        momentum: 0.0,
    };
    let t0 = Instant::now();
    let (params, report) = train(&spec, train_set, &config).unwrap();
    let t_train = t0.elapsed().as_secs_f64();

    let std_probs = standard_predict(&spec, &params, &test_set.inputs).unwrap();
    let std_err = predict_labels(&std_probs)
        .iter()
        .zip(&test_set.labels)
        .filter(|(p, l)| p != l)
        .count() as f64
        / test_set.len() as f64;

    let t1 = Instant::now();
    let mc = mc_predict(&spec, &params, &mask, &test_set.inputs, 100).unwrap();
    let uv = UncertaintyVector::from_mc(&mc);
    let mc_err = uv.error_rate(&test_set.labels);
    let t_eval = t1.elapsed().as_secs_f64();

    let curves =
        sweep_curves(&uv.predicted, &test_set.labels, &uv.mutual_information, 101).unwrap();

    let max_mi = uv.mutual_information.iter().cloned().fold(f64::MIN, f64::max);
    let min_mi = uv.mutual_information.iter().cloned().fold(f64::MAX, f64::min);
    let (mut s_ok, mut n_ok, mut s_bad, mut n_bad) = (0.0, 0usize, 0.0, 0usize);
    for ((&mi, &p), &l) in uv
        .mutual_information
        .iter()
        .zip(&uv.predicted)
        .zip(&test_set.labels)
    {
        let nu = (mi - min_mi) / (max_mi - min_mi);
        if p == l {
            s_ok += nu;
            n_ok += 1;
        } else {
            s_bad += nu;
            n_bad += 1;
        }
    }
    println!(
        "{tag}: obj {:.3} | std {:.4} mc100 {:.4} | ua-auc {:.4} | E[nu|ok] {:.3} E[nu|bad] {:.3} | train {:.0}s eval {:.0}s",
        report.last().unwrap().mean_objective,
        std_err,
        mc_err,
        curves.auc_ua,
        s_ok / n_ok as f64,
        s_bad / n_bad.max(1) as f64,
        t_train,
        t_eval,
    );
}

fn main() {
    let which: Vec<String> = std::env::args().skip(1).collect();
    if which.iter().any(|a| a == "contrast") {
        let train_set = hard_set(true, 10_000, 7);
        let test_set = hard_set(false, 2_000, 3);
        run_one("contrast b16/lr0.05", &train_set, &test_set, 0.05, 16);
    }
    if which.iter().any(|a| a == "pin") {
        let train_set = digits::expanded(digits::Split::Train, 10_000, 7).unwrap();
        let test_set = digits::expanded(digits::Split::Test, 2_000, 3).unwrap();
        run_one("std b16/lr0.05", &train_set, &test_set, 0.05, 16);
        run_one("std b8/lr0.02", &train_set, &test_set, 0.02, 8);
        run_one("std b2/lr0.01", &train_set, &test_set, 0.01, 2);
    }
}
