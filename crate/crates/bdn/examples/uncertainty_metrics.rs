//! Turn MC passes into per-sample uncertainty (predictive entropy, mutual
//! information, per-class variance), sweep the certain/uncertain threshold
//! to get NPV / TPR / UA curves and their areas, and check that the
//! uncertainty actually separates the mistakes (two-sample KS test).
//!
//! ```text
//! cargo run --example uncertainty_metrics
//! ```

use bdn::data::make_synthetic_gaussians;
use bdn::eval::{ks_two_sample, sweep_curves};
use bdn::inference::mc_predict;
use bdn::layers::NetworkSpec;
use bdn::masks::MaskConfig;
use bdn::train::{train, TrainConfig};
use bdn::uncertainty::UncertaintyVector;

fn main() -> bdn::Result<()> {
    // blobs close enough that the model keeps making mistakes
    let train_set = make_synthetic_gaussians(4, 250, 6, 1.5, 1)?;
    let test_set = make_synthetic_gaussians(4, 60, 6, 1.5, 2)?;
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
    println!("test error: {:.3}", uv.error_rate(&test_set.labels));

    let h_max = (mc.class_count() as f64).ln();
    println!("worst five samples by mutual information (H <= ln C = {h_max:.3}):");
    let mut order: Vec<usize> = (0..uv.len()).collect();
    order.sort_by(|&a, &b| uv.mutual_information[b].total_cmp(&uv.mutual_information[a]));
    println!("  sample  label  predicted  entropy      MI  var(pred class)");
    for &i in order.iter().take(5) {
        let c = uv.predicted[i];
        println!(
            "  {:>6}  {:>5}  {:>9}  {:.4}  {:.4}  {:.6}",
            i,
            test_set.labels[i],
            c,
            uv.entropy[i],
            uv.mutual_information[i],
            uv.variance.data()[i * mc.class_count() + c],
        );
    }

    // positive class = "flagged uncertain"; condition = "prediction wrong"
    let curves = sweep_curves(&uv.predicted, &test_set.labels, &uv.mutual_information, 101)?;
    println!("threshold sweep over 101 points (uncertainty = mutual information):");
    for p in curves.points.iter().step_by(25) {
        println!(
            "  t={:.2}  NPV {:.3}  TPR {:.3}  UA {:.3}",
            p.threshold, p.npv, p.tpr, p.ua
        );
    }
    println!(
        "AUC: NPV {:.4}  TPR {:.4}  UA {:.4}",
        curves.auc_npv, curves.auc_tpr, curves.auc_ua
    );

    // do mistakes really carry more mutual information than hits?
    let (mut right, mut wrong) = (Vec::new(), Vec::new());
    for ((&mi, &p), &l) in uv.mutual_information.iter().zip(&uv.predicted).zip(&test_set.labels) {
        if p == l { right.push(mi) } else { wrong.push(mi) }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let ks = ks_two_sample(&right, &wrong)?;
    println!(
        "mean MI: correct {:.4} ({} samples) vs incorrect {:.4} ({} samples)",
        mean(&right),
        right.len(),
        mean(&wrong),
        wrong.len()
    );
    println!("KS two-sample: D {:.3}, p {:.2e}", ks.statistic, ks.p_value);
    Ok(())
}
