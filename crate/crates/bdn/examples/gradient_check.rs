//! Check analytic gradients against central finite differences on small
//! randomized networks — dense stacks and the conv/pool stack, with and
//! without weight masks. Random inputs keep the check away from relu kinks
//! and pooling ties, where finite differences stop being meaningful.
//!
//! ```text
//! cargo run --example gradient_check [seeds]
//! ```

use bdn::gradcheck::{finite_difference_check, FdSettings};
use bdn::layers::{NetworkParams, NetworkSpec};
use bdn::masks::{MaskConfig, MaskSet};
use bdn::rng::SplitMix64;
use bdn::Tensor;

fn random_batch(rng: &mut SplitMix64, shape: Vec<usize>, classes: usize) -> (Tensor, Vec<usize>) {
    let len = shape.iter().product();
    let data: Vec<f64> = (0..len).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let labels = (0..shape[0]).map(|_| rng.below(classes)).collect();
    (Tensor::new(shape, data).unwrap(), labels)
}

fn main() -> bdn::Result<()> {
    let seeds: u64 =
        std::env::args().nth(1).map_or(Ok(5), |s| s.parse()).expect("seed count is numeric");

    let nets: Vec<(&str, NetworkSpec, Vec<usize>)> = vec![
        ("mlp 6->128->3", NetworkSpec::mlp(vec![6], 3)?, vec![4, 6]),
        ("conv stack 16x16", NetworkSpec::lenet_small(vec![16, 16, 1], 4)?, vec![3, 16, 16, 1]),
    ];
    let settings = FdSettings::default();
    println!(
        "step {:.0e}, tolerance {:.0e}, up to {} coordinates per tensor",
        settings.step, settings.tolerance, settings.max_coords_per_tensor
    );

    for (name, spec, in_shape) in &nets {
        for seed in 0..seeds {
            let mut rng = SplitMix64::new(seed * 1000 + 17);
            let mut params = NetworkParams::init(spec, seed)?;
            // fresh inits leave biases at exactly zero, so a unit whose
            // inputs are all masked away sits exactly on the relu kink,
            // where one-sided differences disagree with any subgradient.
            // Jittering every parameter keeps the probe points smooth.
            for t in params.tensors_mut() {
                for v in t.data_mut() {
                    *v += rng.uniform(-0.05, 0.05);
                }
            }
            let classes = spec.class_count()?;
            let (inputs, labels) = random_batch(&mut rng, in_shape.clone(), classes);

            let plain = finite_difference_check(spec, &params, None, &inputs, &labels, settings)?;
            let masks = MaskSet::sample(spec, &MaskConfig::dropconnect(0.5, seed + 99), 0)?;
            // Masked passes double the surviving weights (z/p at p = 0.5),
            // which parks more preactivations near relu kinks and pool ties.
            // The kink window scales with the step, so probe closer in.
            let masked_settings = FdSettings { step: 1e-6, ..settings };
            let masked = finite_difference_check(
                spec,
                &params,
                Some(&masks),
                &inputs,
                &labels,
                masked_settings,
            )?;
            println!(
                "{name:<18} seed {seed}: plain max rel err {:.2e} ({}), masked {:.2e} ({})",
                plain.max_rel_error,
                if plain.passed { "ok" } else { "FAIL" },
                masked.max_rel_error,
                if masked.passed { "ok" } else { "FAIL" },
            );
        }
    }
    Ok(())
}
