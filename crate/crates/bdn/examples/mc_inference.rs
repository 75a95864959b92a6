//! Monte-Carlo inference: keep the weight masks on at test time and average
//! T stochastic passes. Shows the raw pass tensor layout, the exactness of
//! the p=1 shortcut, and how the predictive mean tightens as T grows.
//!
//! ```text
//! cargo run --example mc_inference [passes]
//! ```

use bdn::data::make_synthetic_gaussians;
use bdn::inference::{mc_predict, standard_predict};
use bdn::layers::NetworkSpec;
use bdn::masks::MaskConfig;
use bdn::train::{train, TrainConfig};

fn main() -> bdn::Result<()> {
    let passes: usize =
        std::env::args().nth(1).map_or(Ok(50), |s| s.parse()).expect("passes is numeric");

    // overlapping blobs so predictions stay genuinely uncertain
    let train_set = make_synthetic_gaussians(3, 300, 4, 1.5, 1)?;
    let test_set = make_synthetic_gaussians(3, 30, 4, 1.5, 2)?;
    let spec = NetworkSpec::mlp(vec![4], 3)?;
    let mask = MaskConfig::dropconnect(0.5, 7);
    let config = TrainConfig {
        learning_rate: 0.1,
        l2_lambda: 1e-4,
        batch_size: 32,
        epochs: 40,
        mask: mask.clone(),
        init_seed: 3,
        shuffle_seed: 4,
        momentum: 0.0,
    };
    let (params, _) = train(&spec, &train_set, &config)?;

    let mc = mc_predict(&spec, &params, &mask, &test_set.inputs, passes)?;
    println!(
        "pass tensor: [T={}, N={}, C={}]",
        mc.pass_count(),
        mc.sample_count(),
        mc.class_count()
    );
    let mean = mc.predictive_mean();
    println!("sample 0 per-pass probabilities (first 5 passes):");
    for t in 0..passes.min(5) {
        println!("  pass {t}: {:?}", rounded(mc.row(t, 0)));
    }
    println!("  mean over {passes}: {:?}", rounded(&mean.data()[0..3]));

    // With keep probability 1 every mask is all-ones, so the MC average is
    // bit-identical to the single deterministic pass no matter how many
    // passes run.
    let std_probs = standard_predict(&spec, &params, &test_set.inputs)?;
    let mc_p1 = mc_predict(&spec, &params, &mask.with_keep_prob(1.0), &test_set.inputs, 10)?;
    let max_diff = mc_p1
        .predictive_mean()
        .data()
        .iter()
        .zip(std_probs.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    println!("keep_prob=1 MC vs standard, max abs difference: {max_diff:e}");

    // predictive mean stabilizes as T grows: distance of the running mean
    // from the full-T mean
    let (n, c) = (mc.sample_count(), mc.class_count());
    for t in [1, 2, 5, 10, passes / 2] {
        if t == 0 || t >= passes {
            continue;
        }
        let head = bdn::Tensor::new(vec![t, n, c], mc.probs().data()[..t * n * c].to_vec())?;
        let partial = McPredictive::new(head, mc.base_seed())?;
        let d = partial
            .predictive_mean()
            .data()
            .iter()
            .zip(mean.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        println!("|mean(T={t:3}) - mean(T={passes})| max: {d:.5}");
    }
    Ok(())
}

use bdn::inference::McPredictive;

fn rounded(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| (x * 1000.0).round() / 1000.0).collect()
}
