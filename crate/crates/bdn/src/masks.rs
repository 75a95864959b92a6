//! Bernoulli masks and the seed plumbing that makes every stochastic pass
//! reconstructable from (base_seed, pass_index, layer_index).
//!
//! Two masking modes:
//! * `dropconnect` — masks individual weights, `W = (theta . z) / p`;
//! * `dropout` — masks a layer's output units, `a = (a . z) / p`, one mask
//!   per pass shared across the batch.
//!
//! The 1/p inverted scaling keeps masked passes unbiased and means the
//! unmasked network uses its parameters untouched. With keep probability 1
//! the scaling is exact in floating point (multiply and divide by 1.0), so a
//! "stochastic" pass at p = 1 is bit-identical to a deterministic one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::NetworkSpec;
use crate::rng::{mix64, SplitMix64};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// No masking; passes are deterministic.
    None,
    /// Mask layer outputs (classic unit dropout).
    Dropout,
    /// Mask individual weights.
    Dropconnect,
}

/// Keep probability: one value shared by all maskable layers, or one value
/// per maskable layer (in network order).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KeepProb {
    Shared(f64),
    PerLayer(Vec<f64>),
}

impl Default for KeepProb {
    fn default() -> Self {
        KeepProb::Shared(0.5)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskConfig {
    pub mode: MaskMode,
    #[serde(default)]
    pub keep_prob: KeepProb,
    #[serde(default)]
    pub base_seed: u64,
}

impl MaskConfig {
    pub fn none() -> MaskConfig {
        MaskConfig { mode: MaskMode::None, keep_prob: KeepProb::Shared(1.0), base_seed: 0 }
    }

    pub fn dropconnect(keep_prob: f64, base_seed: u64) -> MaskConfig {
        MaskConfig { mode: MaskMode::Dropconnect, keep_prob: KeepProb::Shared(keep_prob), base_seed }
    }

    pub fn dropout(keep_prob: f64, base_seed: u64) -> MaskConfig {
        MaskConfig { mode: MaskMode::Dropout, keep_prob: KeepProb::Shared(keep_prob), base_seed }
    }

    pub fn is_stochastic(&self) -> bool {
        self.mode != MaskMode::None
    }

    /// Same config with a different shared keep probability (used by eval's
    /// keep-prob override).
    pub fn with_keep_prob(&self, p: f64) -> MaskConfig {
        MaskConfig { keep_prob: KeepProb::Shared(p), ..self.clone() }
    }

    /// Resolve to (layer_index, keep_prob) for every maskable layer of
    /// `spec`, validating probabilities. Empty when mode is `none`.
    pub fn resolve(&self, spec: &NetworkSpec) -> Result<Vec<(usize, f64)>> {
        if self.mode == MaskMode::None {
            return Ok(Vec::new());
        }
        let maskable: Vec<usize> = (0..spec.layers.len())
            .filter(|&i| spec.layers[i].is_trainable())
            .collect();
        let probs: Vec<f64> = match &self.keep_prob {
            KeepProb::Shared(p) => vec![*p; maskable.len()],
            KeepProb::PerLayer(ps) => {
                if ps.len() != maskable.len() {
                    return Err(Error::Config(format!(
                        "{} per-layer keep probabilities for {} maskable layers",
                        ps.len(),
                        maskable.len()
                    )));
                }
                ps.clone()
            }
        };
        for &p in &probs {
            check_keep_prob(p)?;
        }
        Ok(maskable.into_iter().zip(probs).collect())
    }
}

fn check_keep_prob(p: f64) -> Result<()> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Config(format!("keep probability {p} outside (0, 1]")));
    }
    Ok(())
}

/// Seed for one (pass, layer) pair. The xor packs the three values into one
/// word (pass and layer live in practice in the low 32 bits, so shifting the
/// layer keeps them from colliding); the mix then spreads them over the full
/// 64-bit space so nearby passes get unrelated streams.
pub fn derive_pass_seed(base_seed: u64, pass_index: u64, layer_index: u64) -> u64 {
    mix64(base_seed ^ pass_index ^ (layer_index << 32))
}

/// An i.i.d. Bernoulli(p) tensor of 0.0/1.0 values.
pub fn sample_mask(shape: &[usize], keep_prob: f64, seed: u64) -> Result<Tensor> {
    check_keep_prob(keep_prob)?;
    let mut rng = SplitMix64::new(seed);
    Ok(Tensor::from_fn(shape.to_vec(), || {
        if rng.next_f64() < keep_prob {
            1.0
        } else {
            0.0
        }
    }))
}

/// Effective weights for one masked pass: `(theta . z) / p` elementwise.
pub fn masked_weights(theta: &Tensor, mask: &Tensor, keep_prob: f64) -> Result<Tensor> {
    check_keep_prob(keep_prob)?;
    if theta.shape() != mask.shape() {
        return Err(Error::Input(format!(
            "mask shape {:?} does not match weights {:?}",
            mask.shape(),
            theta.shape()
        )));
    }
    let mut out = theta.clone();
    out.hadamard(&mask.map(|m| m / keep_prob));
    Ok(out)
}

/// Masked activations: `(a . z) / p` elementwise, same contract as
/// [`masked_weights`].
pub fn masked_activations(activations: &Tensor, mask: &Tensor, keep_prob: f64) -> Result<Tensor> {
    masked_weights(activations, mask, keep_prob)
}

/// The mask applied to one layer during one pass.
#[derive(Clone, Debug)]
pub enum LayerMask {
    /// Bernoulli mask over the layer's weight tensor (the dense matrix or
    /// the conv kernel). Biases are never masked: the conv bias lives
    /// outside the kernel, and the dense layer's folded bias row is exempted
    /// when the mask is applied (its draws here are simply ignored).
    Weights { z: Tensor, keep_prob: f64 },
    /// Bernoulli mask over the layer's per-sample output, broadcast across
    /// the batch within the pass.
    Activations { z: Tensor, keep_prob: f64 },
}

/// One pass worth of masks: entry per network layer, `None` where the layer
/// is not maskable (or mode is `none`).
#[derive(Clone, Debug)]
pub struct MaskSet {
    entries: Vec<Option<LayerMask>>,
}

impl MaskSet {
    /// Sample every maskable layer's mask for pass `pass_index`. The same
    /// (config, spec, pass_index) always yields the same masks.
    pub fn sample(spec: &NetworkSpec, config: &MaskConfig, pass_index: u64) -> Result<MaskSet> {
        let io = spec.layer_io_shapes()?;
        let mut entries: Vec<Option<LayerMask>> = vec![None; spec.layers.len()];
        for (layer_idx, keep_prob) in config.resolve(spec)? {
            let seed = derive_pass_seed(config.base_seed, pass_index, layer_idx as u64);
            let mask = match config.mode {
                MaskMode::None => unreachable!("resolve() is empty for mode none"),
                MaskMode::Dropconnect => {
                    let shape = spec
                        .weight_shape(layer_idx)?
                        .expect("maskable layer has a weight shape");
                    LayerMask::Weights { z: sample_mask(&shape, keep_prob, seed)?, keep_prob }
                }
                MaskMode::Dropout => {
                    let out_shape = &io[layer_idx].1;
                    LayerMask::Activations {
                        z: sample_mask(out_shape, keep_prob, seed)?,
                        keep_prob,
                    }
                }
            };
            entries[layer_idx] = Some(mask);
        }
        Ok(MaskSet { entries })
    }

    pub fn layer(&self, i: usize) -> Option<&LayerMask> {
        self.entries.get(i).and_then(|e| e.as_ref())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
