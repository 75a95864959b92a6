//! Train a small dense network on separable Gaussian blobs — the fastest way
//! to see the whole train/predict loop work end to end, no image data needed.
//!
//! ```text
//! cargo run --example synthetic_gaussians [classes] [per_class] [separation]
//! ```

use bdn::data::make_synthetic_gaussians;
use bdn::inference::standard_predict;
use bdn::layers::NetworkSpec;
use bdn::masks::MaskConfig;
use bdn::train::{train, TrainConfig};
use bdn::uncertainty::predict_labels;

fn main() -> bdn::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let classes: usize = args.first().map_or(Ok(4), |s| s.parse()).expect("classes is numeric");
    let per_class: usize = args.get(1).map_or(Ok(200), |s| s.parse()).expect("per_class is numeric");
    let separation: f64 = args.get(2).map_or(Ok(3.0), |s| s.parse()).expect("separation is numeric");

    let train_set = make_synthetic_gaussians(classes, per_class, 8, separation, 1)?;
    let test_set = make_synthetic_gaussians(classes, per_class / 4, 8, separation, 2)?;
    println!(
        "{} train / {} test samples, {classes} blobs in 8 dimensions, separation {separation}",
        train_set.len(),
        test_set.len()
    );

    let spec = NetworkSpec::mlp(vec![8], classes)?;
    for mask in [MaskConfig::none(), MaskConfig::dropconnect(0.5, 5), MaskConfig::dropout(0.5, 5)] {
        let config = TrainConfig {
            learning_rate: 0.1,
            l2_lambda: 1e-4,
            batch_size: 32,
            epochs: 30,
            mask: mask.clone(),
            init_seed: 3,
            shuffle_seed: 4,
            momentum: 0.0,
        };
        let (params, stats) = train(&spec, &train_set, &config)?;
        let probs = standard_predict(&spec, &params, &test_set.inputs)?;
        let predicted = predict_labels(&probs);
        let correct =
            predicted.iter().zip(&test_set.labels).filter(|(p, l)| p == l).count();
        let last = stats.last().unwrap();
        println!(
            "{:<22} final objective {:.4}  train accuracy {:.3}  test accuracy {:.3}",
            format!("{:?}", mask.mode),
            last.mean_objective,
            last.train_accuracy,
            correct as f64 / test_set.len() as f64
        );
    }
    Ok(())
}
