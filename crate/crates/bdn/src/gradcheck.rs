//! Central-difference verification of the backward pass.
//!
//! Perturb one parameter at a time by ±h, difference the loss, and compare
//! against the analytic gradient. Slow and exact — exactly what you want for
//! catching sign errors and forgotten scale factors in hand-written layers.

use crate::error::Result;
use crate::layers::{nll_on_probs, softmax_cross_entropy, LayerSpec, NetworkParams, NetworkSpec};
use crate::masks::MaskSet;
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct FdSettings {
    /// Perturbation half-width.
    pub step: f64,
    /// Max acceptable relative error per coordinate.
    pub tolerance: f64,
    /// Coordinates checked per parameter tensor (all of them when the tensor
    /// is smaller); keeps the cost polynomial-ish on conv nets.
    pub max_coords_per_tensor: usize,
    /// Seed for the coordinate subsample.
    pub coord_seed: u64,
}

impl Default for FdSettings {
    fn default() -> Self {
        FdSettings { step: 1e-5, tolerance: 1e-4, max_coords_per_tensor: 30, coord_seed: 0 }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckReport {
    pub passed: bool,
    pub max_rel_error: f64,
    pub coords_checked: usize,
}

/// Loss used for checking: mean cross-entropy of the network's class
/// distribution. Ends-in-softmax networks are driven through the softmax
/// layer's own backward (NLL upstream); otherwise the output is treated as
/// logits and the fused loss supplies the upstream gradient.
fn loss_and_gradient(
    spec: &NetworkSpec,
    params: &NetworkParams,
    masks: Option<&MaskSet>,
    inputs: &Tensor,
    labels: &[usize],
) -> Result<(f64, NetworkParams)> {
    let pass = spec.forward(params, masks, inputs)?;
    let (loss, upstream) = if matches!(spec.layers.last(), Some(LayerSpec::Softmax)) {
        nll_on_probs(&pass.output, labels)?
    } else {
        softmax_cross_entropy(&pass.output, labels)?
    };
    let grads = spec.backward(params, &pass, &upstream)?;
    Ok((loss, grads))
}

fn loss_only(
    spec: &NetworkSpec,
    params: &NetworkParams,
    masks: Option<&MaskSet>,
    inputs: &Tensor,
    labels: &[usize],
) -> Result<f64> {
    let pass = spec.forward(params, masks, inputs)?;
    if matches!(spec.layers.last(), Some(LayerSpec::Softmax)) {
        Ok(nll_on_probs(&pass.output, labels)?.0)
    } else {
        Ok(softmax_cross_entropy(&pass.output, labels)?.0)
    }
}

/// Compare analytic gradients against central differences of the loss.
/// `masks`, when given, are held fixed across every perturbed evaluation, so
/// masked passes are just as checkable as deterministic ones.
pub fn finite_difference_check(
    spec: &NetworkSpec,
    params: &NetworkParams,
    masks: Option<&MaskSet>,
    inputs: &Tensor,
    labels: &[usize],
    settings: FdSettings,
) -> Result<GradCheckReport> {
    let (_, analytic) = loss_and_gradient(spec, params, masks, inputs, labels)?;
    compare_against_fd(spec, params, masks, inputs, labels, &analytic, settings)
}

/// The comparison half, split out so tests can feed it a deliberately wrong
/// "analytic" gradient and watch it fail.
fn compare_against_fd(
    spec: &NetworkSpec,
    params: &NetworkParams,
    masks: Option<&MaskSet>,
    inputs: &Tensor,
    labels: &[usize],
    analytic: &NetworkParams,
    settings: FdSettings,
) -> Result<GradCheckReport> {
    let mut work = params.clone();
    let mut rng = SplitMix64::new(settings.coord_seed);
    let mut max_rel: f64 = 0.0;
    let mut checked = 0usize;

    let tensor_count = work.tensors().len();
    for ti in 0..tensor_count {
        let len = work.tensors()[ti].len();
        let coords: Vec<usize> = if len <= settings.max_coords_per_tensor {
            (0..len).collect()
        } else {
            rng.choose_indices(len, settings.max_coords_per_tensor)
        };
        for coord in coords {
            let orig = work.tensors()[ti].data()[coord];
            work.tensors_mut()[ti].data_mut()[coord] = orig + settings.step;
            let up = loss_only(spec, &work, masks, inputs, labels)?;
            work.tensors_mut()[ti].data_mut()[coord] = orig - settings.step;
            let down = loss_only(spec, &work, masks, inputs, labels)?;
            work.tensors_mut()[ti].data_mut()[coord] = orig;

            let numeric = (up - down) / (2.0 * settings.step);
            let exact = analytic.tensors()[ti].data()[coord];
            let rel = (numeric - exact).abs() / numeric.abs().max(exact.abs()).max(1e-6);
            max_rel = max_rel.max(rel);
            checked += 1;
        }
    }
    Ok(GradCheckReport { passed: max_rel < settings.tolerance, max_rel_error: max_rel, coords_checked: checked })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masks::MaskConfig;

    fn random_inputs(shape: Vec<usize>, seed: u64) -> Tensor {
        let mut rng = SplitMix64::new(seed);
        Tensor::from_fn(shape, || rng.uniform(-1.0, 1.0))
    }

    fn random_labels(n: usize, classes: usize, seed: u64) -> Vec<usize> {
        let mut rng = SplitMix64::new(seed);
        (0..n).map(|_| rng.below(classes)).collect()
    }

    #[test]
    fn dense_relu_softmax_gradients_match() {
        let spec = NetworkSpec::mlp(vec![6], 3).unwrap();
        let params = NetworkParams::init(&spec, 1).unwrap();
        let x = random_inputs(vec![4, 6], 2);
        let y = random_labels(4, 3, 3);
        let r = finite_difference_check(&spec, &params, None, &x, &y, FdSettings::default())
            .unwrap();
        assert!(r.passed, "max rel err {}", r.max_rel_error);
    }

    #[test]
    fn conv_pool_gradients_match() {
        let spec = NetworkSpec {
            input_shape: vec![6, 6, 2],
            layers: vec![
                LayerSpec::Conv2d { in_channels: 2, out_channels: 3, kernel: 3, stride: 1, padding: 1 },
                LayerSpec::Relu,
                LayerSpec::MaxPool2x2,
                LayerSpec::Dense { in_dim: 27, out_dim: 4 },
                LayerSpec::Softmax,
            ],
        };
        spec.validate().unwrap();
        let params = NetworkParams::init(&spec, 5).unwrap();
        let x = random_inputs(vec![3, 6, 6, 2], 6);
        let y = random_labels(3, 4, 7);
        let r = finite_difference_check(&spec, &params, None, &x, &y, FdSettings::default())
            .unwrap();
        assert!(r.passed, "max rel err {}", r.max_rel_error);
    }

    #[test]
    fn masked_passes_check_out_too() {
        let spec = NetworkSpec::mlp(vec![5], 3).unwrap();
        let params = NetworkParams::init(&spec, 11).unwrap();
        let x = random_inputs(vec![4, 5], 12);
        let y = random_labels(4, 3, 13);
        for cfg in [MaskConfig::dropconnect(0.7, 21), MaskConfig::dropout(0.7, 22)] {
            let masks = MaskSet::sample(&spec, &cfg, 0).unwrap();
            let r = finite_difference_check(&spec, &params, Some(&masks), &x, &y, FdSettings::default())
                .unwrap();
            assert!(r.passed, "{:?}: max rel err {}", cfg.mode, r.max_rel_error);
        }
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let spec = NetworkSpec::mlp(vec![5], 3).unwrap();
        let params = NetworkParams::init(&spec, 31).unwrap();
        let x = random_inputs(vec![4, 5], 32);
        let y = random_labels(4, 3, 33);
        let (_, mut grads) = loss_and_gradient(&spec, &params, None, &x, &y).unwrap();
        grads.tensors_mut()[0].scale(2.0); // the classic missing-factor bug
        let r = compare_against_fd(&spec, &params, None, &x, &y, &grads, FdSettings::default())
            .unwrap();
        assert!(!r.passed, "doubled gradient passed with max rel err {}", r.max_rel_error);
    }
}
