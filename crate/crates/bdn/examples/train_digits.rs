//! Train the small convnet on the bundled digit corpus with DropConnect
//! weight masks, then compare the standard (maskless) test against the
//! Monte-Carlo test that averages masked passes.
//!
//! ```text
//! cargo run --example train_digits [train_count] [epochs] [test_count] [passes]
//! ```

use std::time::Instant;

use bdn::data::digits::{self, Split};
use bdn::inference::{mc_predict, standard_predict};
use bdn::layers::NetworkSpec;
use bdn::masks::MaskConfig;
use bdn::train::{train, TrainConfig};
use bdn::uncertainty::{predict_labels, UncertaintyVector};

fn error_rate(predicted: &[usize], labels: &[usize]) -> f64 {
    let wrong = predicted.iter().zip(labels).filter(|(p, l)| p != l).count();
    wrong as f64 / labels.len() as f64
}

fn main() -> bdn::Result<()> {
    let args: Vec<usize> = std::env::args()
        .skip(1)
        .map(|s| s.parse().expect("arguments are numeric"))
        .collect();
    let pick = |i: usize, default: usize| args.get(i).copied().unwrap_or(default);
    let train_count = pick(0, 3000);
    let epochs = pick(1, 5);
    let test_count = pick(2, 500);
    let passes = pick(3, 50);

    let train_set = digits::expanded(Split::Train, train_count, 7)?;
    let test_set = digits::expanded(Split::Test, test_count, 8)?;
    let spec = NetworkSpec::lenet_small(vec![28, 28, 1], 10)?;
    // Plain SGD: momentum fights the per-minibatch mask noise and stalls
    // the run, while a modest rate with small batches rides it out.
    let config = TrainConfig {
        learning_rate: 0.05,
        l2_lambda: 1e-4,
        batch_size: 16,
        epochs,
        mask: MaskConfig::dropconnect(0.5, 11),
        init_seed: 1,
        shuffle_seed: 2,
        momentum: 0.0,
    };

    println!("training on {train_count} digits for {epochs} epochs (DropConnect p=0.5)");
    let t0 = Instant::now();
    let (params, stats) = train(&spec, &train_set, &config)?;
    for s in &stats {
        println!(
            "  epoch {:>2}  objective {:.4}  train accuracy {:.4}",
            s.epoch, s.mean_objective, s.train_accuracy
        );
    }
    println!("trained in {:.1?}", t0.elapsed());

    let t1 = Instant::now();
    let std_probs = standard_predict(&spec, &params, &test_set.inputs)?;
    let std_err = error_rate(&predict_labels(&std_probs), &test_set.labels);
    println!("standard test error: {std_err:.4}  ({:.1?})", t1.elapsed());

    let t2 = Instant::now();
    let mc = mc_predict(&spec, &params, &config.mask, &test_set.inputs, passes)?;
    let uv = UncertaintyVector::from_mc(&mc);
    let mc_err = uv.error_rate(&test_set.labels);
    println!("MC test error ({passes} passes): {mc_err:.4}  ({:.1?})", t2.elapsed());

    // uncertainty should concentrate on the mistakes
    let (mut mi_wrong, mut n_wrong, mut mi_right, mut n_right) = (0.0, 0usize, 0.0, 0usize);
    for ((&mi, &p), &l) in uv.mutual_information.iter().zip(&uv.predicted).zip(&test_set.labels) {
        if p == l {
            mi_right += mi;
            n_right += 1;
        } else {
            mi_wrong += mi;
            n_wrong += 1;
        }
    }
    if n_wrong > 0 && n_right > 0 {
        println!(
            "mean mutual information: correct {:.4}, incorrect {:.4}",
            mi_right / n_right as f64,
            mi_wrong / n_wrong as f64
        );
    }
    Ok(())
}
