//! How many MC passes are enough? Sweep the pass count T with fresh mask
//! seeds per repetition and watch the error settle toward its limit. The
//! deterministic (maskless) pass error is printed as the reference line.
//!
//! ```text
//! cargo run --example convergence [repetitions]
//! ```

use bdn::data::make_synthetic_gaussians;
use bdn::eval::convergence_curve;
use bdn::layers::NetworkSpec;
use bdn::masks::MaskConfig;
use bdn::train::{train, TrainConfig};

fn main() -> bdn::Result<()> {
    let repetitions: usize =
        std::env::args().nth(1).map_or(Ok(10), |s| s.parse()).expect("repetitions is numeric");

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

    let t_list = [1, 2, 4, 8, 16, 32, 64, 128];
    let curve =
        convergence_curve(&spec, &params, &mask, &test_set, &t_list, repetitions, 0xC04E)?;
    println!("MC test error vs pass count ({repetitions} repetitions each):");
    println!("    T   mean error   std");
    for p in &curve.points {
        println!("  {:>3}       {:.4}  {:.4}", p.passes, p.mean_error, p.std_error);
    }
    println!("maskless reference error: {:.4}", curve.reference_error);
    Ok(())
}
