//! Mask-regularized training: plain SGD on cross-entropy plus an L2 penalty,
//! with a fresh Bernoulli mask set sampled for every minibatch. Minimizing
//! `CE + lambda * sum ||theta||^2` under mask sampling is the usual
//! variational story for these networks; operationally it is just noisy SGD.
//!
//! Also home to the checkpoint format (magic "BDNC"): a JSON header with the
//! network spec, mask config and metadata, followed by the raw little-endian
//! f64 parameter payload. Same inputs -> byte-identical checkpoint.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::layers::{softmax_cross_entropy, LayerSpec, NetworkParams, NetworkSpec};
use crate::masks::{MaskConfig, MaskSet};
use crate::rng::{mix64, SplitMix64};
use crate::uncertainty::predict_labels;

fn default_lr() -> f64 {
    0.01
}
fn default_lambda() -> f64 {
    1e-4
}
fn default_batch() -> usize {
    64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_lambda")]
    pub l2_lambda: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub epochs: usize,
    pub mask: MaskConfig,
    /// Seed for the weight init.
    #[serde(default)]
    pub init_seed: u64,
    /// Seed for the per-epoch sample shuffle.
    #[serde(default)]
    pub shuffle_seed: u64,
    /// Classical momentum; 0 (the default) is plain SGD.
    #[serde(default)]
    pub momentum: f64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(self.l2_lambda.is_finite() && self.l2_lambda >= 0.0) {
            return Err(Error::Config(format!("l2 lambda {} must be >= 0", self.l2_lambda)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("need at least one epoch".into()));
        }
        if !(self.momentum.is_finite() && (0.0..1.0).contains(&self.momentum)) {
            return Err(Error::Config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean over batches of (batch CE + lambda * ||theta||^2), measured
    /// before each update.
    pub mean_objective: f64,
    pub train_accuracy: f64,
}

/// Number of layers the training forward pass runs through: everything
/// except a trailing softmax, which the fused loss replaces.
fn train_depth(spec: &NetworkSpec) -> usize {
    match spec.layers.last() {
        Some(LayerSpec::Softmax) => spec.layers.len() - 1,
        _ => spec.layers.len(),
    }
}

/// The training objective on one batch: mean cross-entropy under one
/// sampled mask set (pass index picks the masks) plus the L2 penalty over
/// all trainable parameters.
pub fn objective_value(
    spec: &NetworkSpec,
    params: &NetworkParams,
    mask: &MaskConfig,
    pass_index: u64,
    inputs: &crate::tensor::Tensor,
    labels: &[usize],
    l2_lambda: f64,
) -> Result<f64> {
    let masks = if mask.is_stochastic() {
        Some(MaskSet::sample(spec, mask, pass_index)?)
    } else {
        None
    };
    let pass = spec.forward_prefix(params, masks.as_ref(), inputs, train_depth(spec))?;
    let (ce, _) = softmax_cross_entropy(&pass.output, labels)?;
    Ok(ce + l2_lambda * params.squared_norm())
}

/// One parameter update. With momentum = 0 this is exactly
/// `theta <- theta - lr * grad`; otherwise velocity = momentum * velocity +
/// grad and the step uses the velocity.
pub fn sgd_step(
    params: &mut NetworkParams,
    grads: &NetworkParams,
    learning_rate: f64,
    momentum: f64,
    velocity: &mut Option<NetworkParams>,
) {
    if momentum == 0.0 {
        params.axpy(-learning_rate, grads);
    } else {
        let v = velocity.as_mut().expect("momentum needs a velocity buffer");
        v.scale(momentum);
        v.axpy(1.0, grads);
        params.axpy(-learning_rate, v);
    }
}

/// One pass over the data in shuffled minibatch order. `step` is the global
/// batch counter; it doubles as the mask pass index, so every batch sees a
/// fresh (but reproducible) mask set.
pub fn sgd_epoch(
    spec: &NetworkSpec,
    params: &mut NetworkParams,
    data: &LabeledDataset,
    config: &TrainConfig,
    epoch: usize,
    step: &mut u64,
    velocity: &mut Option<NetworkParams>,
) -> Result<EpochStats> {
    config.validate()?;
    let n = data.len();
    let mut order: Vec<usize> = (0..n).collect();
    SplitMix64::new(mix64(config.shuffle_seed ^ epoch as u64)).shuffle(&mut order);

    let depth = train_depth(spec);
    let lambda = config.l2_lambda;
    let mut objective_sum = 0.0;
    let mut batches = 0usize;
    let mut hits = 0usize;

    for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
        let batch = data.subset(chunk)?;
        let masks = if config.mask.is_stochastic() {
            Some(MaskSet::sample(spec, &config.mask, *step)?)
        } else {
            None
        };
        let result = (|| -> Result<(f64, NetworkParams, Vec<usize>)> {
            let pass = spec.forward_prefix(params, masks.as_ref(), &batch.inputs, depth)?;
            let (ce, upstream) = softmax_cross_entropy(&pass.output, &batch.labels)?;
            let predicted = predict_labels(&pass.output);
            let grads = spec.backward(params, &pass, &upstream)?;
            Ok((ce, grads, predicted))
        })();
        let (ce, mut grads, predicted) = result.map_err(|e| match e {
            Error::Numeric(m) => {
                Error::Numeric(format!("epoch {epoch} batch {bi}: {m} (training diverged?)"))
            }
            other => other,
        })?;

        objective_sum += ce + lambda * params.squared_norm();
        batches += 1;
        hits += predicted.iter().zip(&batch.labels).filter(|(p, l)| p == l).count();

        if lambda != 0.0 {
            grads.axpy(2.0 * lambda, params); // d/dtheta of lambda*||theta||^2
        }
        sgd_step(params, &grads, config.learning_rate, config.momentum, velocity);
        *step += 1;
    }

    Ok(EpochStats {
        epoch,
        mean_objective: objective_sum / batches as f64,
        train_accuracy: hits as f64 / n as f64,
    })
}

/// Initialize and train for `config.epochs` epochs.
pub fn train(
    spec: &NetworkSpec,
    data: &LabeledDataset,
    config: &TrainConfig,
) -> Result<(NetworkParams, Vec<EpochStats>)> {
    config.validate()?;
    spec.validate()?;
    let classes = spec.class_count()?;
    if classes != data.class_count {
        return Err(Error::Input(format!(
            "network predicts {classes} classes but data has {}",
            data.class_count
        )));
    }
    let mut params = NetworkParams::init(spec, config.init_seed)?;
    let mut velocity = if config.momentum > 0.0 {
        Some(NetworkParams::zeros_like(spec)?)
    } else {
        None
    };
    let mut step = 0u64;
    let mut stats = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        stats.push(sgd_epoch(spec, &mut params, data, config, epoch, &mut step, &mut velocity)?);
    }
    Ok((params, stats))
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

const CKPT_MAGIC: &[u8; 4] = b"BDNC";
const CKPT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub epochs_trained: usize,
    /// Mean objective of the final epoch (NaN-free by construction).
    pub final_objective: f64,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    spec: NetworkSpec,
    mask: MaskConfig,
    meta: CheckpointMeta,
}

/// A trained network ready to save/load: structure, parameters, the mask
/// config it was trained under (eval reuses it by default), and metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub spec: NetworkSpec,
    pub params: NetworkParams,
    pub mask: MaskConfig,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    /// Layout: magic "BDNC", u32 version, u64 header length, JSON header,
    /// u64 parameter count, raw f64 parameters — integers and floats all
    /// little-endian. Same checkpoint -> same bytes.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.params.matches(&self.spec)?;
        let header = CheckpointHeader {
            spec: self.spec.clone(),
            mask: self.mask.clone(),
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&header)
            .map_err(|e| Error::State(format!("unserializable checkpoint header: {e}")))?;
        let count: usize = self.params.tensors().iter().map(|t| t.len()).sum();
        let mut out = Vec::with_capacity(24 + json.len() + count * 8);
        out.extend_from_slice(CKPT_MAGIC);
        out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&(count as u64).to_le_bytes());
        for t in self.params.tensors() {
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Checkpoint> {
        let mut off = 0usize;
        let magic = take(buf, &mut off, 4)?;
        if magic != CKPT_MAGIC {
            return Err(Error::format(0, format!("bad magic {magic:?}, want \"BDNC\"")));
        }
        let version = u32::from_le_bytes(take(buf, &mut off, 4)?.try_into().unwrap());
        if version != CKPT_VERSION {
            return Err(Error::format(4, format!("unsupported version {version}")));
        }
        let json_len = u64::from_le_bytes(take(buf, &mut off, 8)?.try_into().unwrap()) as usize;
        let json_off = off;
        let json = take(buf, &mut off, json_len)?;
        let header: CheckpointHeader = serde_json::from_slice(json)
            .map_err(|e| Error::format(json_off as u64, format!("invalid header JSON: {e}")))?;
        header.spec.validate()?;

        let mut params = NetworkParams::zeros_like(&header.spec)?;
        let expected: usize = params.tensors().iter().map(|t| t.len()).sum();
        let count_off = off;
        let count = u64::from_le_bytes(take(buf, &mut off, 8)?.try_into().unwrap()) as usize;
        if count != expected {
            return Err(Error::format(
                count_off as u64,
                format!("parameter count {count} does not match network ({expected})"),
            ));
        }
        let payload_off = off;
        let payload = take(buf, &mut off, count * 8)?;
        if off != buf.len() {
            return Err(Error::format(off as u64, format!("{} trailing bytes", buf.len() - off)));
        }
        let mut vals = payload.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap()));
        for t in params.tensors_mut() {
            for v in t.data_mut() {
                *v = vals.next().expect("count checked above");
            }
        }
        if !params.all_finite() {
            return Err(Error::format(payload_off as u64, "non-finite parameter value"));
        }
        Ok(Checkpoint { spec: header.spec, params, mask: header.mask, meta: header.meta })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        Checkpoint::from_bytes(&fs::read(path)?)
    }
}

fn take<'a>(buf: &'a [u8], off: &mut usize, n: usize) -> Result<&'a [u8]> {
    let s = buf
        .get(*off..*off + n)
        .ok_or_else(|| Error::format(*off as u64, format!("unexpected end of data (wanted {n} bytes)")))?;
    *off += n;
    Ok(s)
}
