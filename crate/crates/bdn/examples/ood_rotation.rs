//! Out-of-distribution sanity check: a model trained on upright digits should
//! be measurably less certain on heavily rotated ones, and less certain again
//! on digits buried in background noise.
//!
//! ```text
//! cargo run --example ood_rotation [train_count] [epochs] [test_count]
//! ```

use bdn::data::digits::{self, Split};
use bdn::data::{make_background, make_rotated_symmetric};
use bdn::inference::mc_predict;
use bdn::layers::NetworkSpec;
use bdn::masks::MaskConfig;
use bdn::train::{train, TrainConfig};
use bdn::uncertainty::UncertaintyVector;

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn main() -> bdn::Result<()> {
    let args: Vec<usize> = std::env::args()
        .skip(1)
        .map(|s| s.parse().expect("arguments are numeric"))
        .collect();
    let pick = |i: usize, default: usize| args.get(i).copied().unwrap_or(default);
    let train_count = pick(0, 2000);
    let epochs = pick(1, 30);
    let test_count = pick(2, 300);

    let train_set = digits::expanded(Split::Train, train_count, 7)?;
    let clean = digits::expanded(Split::Test, test_count, 8)?;
    // rotation magnitude 45°-90°, sign chosen per sample
    let rotated = make_rotated_symmetric(&clean, 45.0, 90.0, 21)?;
    let noisy = make_background(&clean, 0.8, 22)?;

    let spec = NetworkSpec::mlp(vec![28, 28, 1], 10)?;
    let mask = MaskConfig::dropconnect(0.5, 11);
    let config = TrainConfig {
        learning_rate: 0.1,
        l2_lambda: 1e-4,
        batch_size: 64,
        epochs,
        mask: mask.clone(),
        init_seed: 1,
        shuffle_seed: 2,
        momentum: 0.0,
    };
    println!("training on {train_count} upright digits for {epochs} epochs...");
    let (params, _) = train(&spec, &train_set, &config)?;

    println!("condition          error   mean H   mean MI");
    for (name, set) in [("clean", &clean), ("rotated 45-90", &rotated), ("background", &noisy)] {
        let mc = mc_predict(&spec, &params, &mask, &set.inputs, 50)?;
        let uv = UncertaintyVector::from_mc(&mc);
        println!(
            "{name:<16}  {:.4}   {:.4}    {:.4}",
            uv.error_rate(&set.labels),
            mean(&uv.entropy),
            mean(&uv.mutual_information)
        );
    }
    Ok(())
}
