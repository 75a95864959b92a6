//! Uncertainty-informed referral: sort predictions by uncertainty, keep only
//! the most-confident fraction, and watch accuracy rise. A random-rejection
//! baseline shows the lift comes from the uncertainty signal, not from
//! shrinking the denominator.
//!
//! ```text
//! cargo run --example referral
//! ```

use bdn::data::make_synthetic_gaussians;
use bdn::eval::{random_referral_baseline, referral_curve};
use bdn::inference::mc_predict;
use bdn::layers::NetworkSpec;
use bdn::masks::MaskConfig;
use bdn::train::{train, TrainConfig};
use bdn::uncertainty::UncertaintyVector;

fn main() -> bdn::Result<()> {
    let train_set = make_synthetic_gaussians(4, 250, 6, 1.5, 1)?;
    let test_set = make_synthetic_gaussians(4, 100, 6, 1.5, 2)?;
    let spec = NetworkSpec::mlp(vec![6], 4)?;
    let mask = MaskConfig::dropconnect(0.5, 7);
    let config = TrainConfig {
        learning_rate: 0.1,
        l2_lambda: 1e-4,
        batch_size: 32,
        epochs: 150,
        mask: mask.clone(),
        init_seed: 3,
        shuffle_seed: 4,
        momentum: 0.0,
    };
    let (params, _) = train(&spec, &train_set, &config)?;
    let mc = mc_predict(&spec, &params, &mask, &test_set.inputs, 100)?;
    let uv = UncertaintyVector::from_mc(&mc);
    println!("full test error: {:.3} on {} samples", uv.error_rate(&test_set.labels), uv.len());

    let fractions: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
    let curve = referral_curve(&uv.predicted, &test_set.labels, &uv.mutual_information, &fractions)?;
    let baseline =
        random_referral_baseline(&uv.predicted, &test_set.labels, &fractions, 20, 0xBA5E)?;

    println!("retained  kept  accuracy  random baseline (mean ± std, 20 draws)");
    for (r, b) in curve.iter().zip(&baseline) {
        println!(
            "   {:>4.0}%  {:>4}     {:.3}  {:.3} ± {:.3}",
            r.fraction * 100.0,
            r.kept,
            r.accuracy,
            b.mean_accuracy,
            b.std_accuracy
        );
    }
    Ok(())
}
