//! Monte-Carlo prediction: run T mask-sampled forward passes and keep every
//! per-pass class distribution. Averaging over passes approximates
//! integrating the predictive distribution over the weight posterior; the
//! spread across passes is what the uncertainty measures feed on.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::layers::{NetworkParams, NetworkSpec};
use crate::masks::{MaskConfig, MaskSet};
use crate::tensor::Tensor;

/// Forward-pass batch size used internally to bound activation memory.
const CHUNK: usize = 256;

/// The stacked per-pass class distributions `[T, N, C]` of one MC run.
#[derive(Clone, Debug, PartialEq)]
pub struct McPredictive {
    probs: Tensor,
    /// Mask base seed the run was generated with; `None` when the tensor was
    /// loaded from disk or produced deterministically.
    base_seed: Option<u64>,
}

impl McPredictive {
    /// Wrap and validate a `[T, N, C]` tensor: finite, non-negative entries,
    /// every distribution summing to 1 within 1e-6.
    pub fn new(probs: Tensor, base_seed: Option<u64>) -> Result<McPredictive> {
        let [t, n, c] = *probs.shape() else {
            return Err(Error::Input(format!(
                "predictive tensor wants [T, N, C], got {:?}",
                probs.shape()
            )));
        };
        if t == 0 || n == 0 || c == 0 {
            return Err(Error::Input("empty predictive tensor".into()));
        }
        probs.ensure_finite("predictive tensor")?;
        let d = probs.data();
        for (row_idx, row) in d.chunks(c).enumerate() {
            let mut sum = 0.0;
            for &p in row {
                if p < 0.0 {
                    return Err(Error::Input(format!(
                        "negative probability {p} in pass {} sample {}",
                        row_idx / n,
                        row_idx % n
                    )));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::Input(format!(
                    "distribution in pass {} sample {} sums to {sum}, not 1",
                    row_idx / n,
                    row_idx % n
                )));
            }
        }
        Ok(McPredictive { probs, base_seed })
    }

    pub fn pass_count(&self) -> usize {
        self.probs.shape()[0]
    }

    pub fn sample_count(&self) -> usize {
        self.probs.shape()[1]
    }

    pub fn class_count(&self) -> usize {
        self.probs.shape()[2]
    }

    pub fn probs(&self) -> &Tensor {
        &self.probs
    }

    pub fn base_seed(&self) -> Option<u64> {
        self.base_seed
    }

    /// Pass `t`'s distribution for sample `n`.
    pub fn row(&self, t: usize, n: usize) -> &[f64] {
        let c = self.class_count();
        let base = (t * self.sample_count() + n) * c;
        &self.probs.data()[base..base + c]
    }

    /// True when every pass produced bit-identical probabilities for sample
    /// `n` — the degenerate "no spread" case the exactness guarantees hinge
    /// on.
    pub fn slices_identical(&self, n: usize) -> bool {
        let first = self.row(0, n);
        (1..self.pass_count()).all(|t| self.row(t, n) == first)
    }

    /// Mean over passes, `[N, C]`. When a sample's pass slices are all
    /// bit-identical the slice itself is returned for that sample, so a
    /// T-pass run over a deterministic network reproduces the single-pass
    /// output exactly (floating-point summation would otherwise smear the
    /// last bits).
    pub fn predictive_mean(&self) -> Tensor {
        let (t, n, c) = (self.pass_count(), self.sample_count(), self.class_count());
        let mut out = vec![0.0; n * c];
        let inv_t = 1.0 / t as f64;
        for s in 0..n {
            let dst = &mut out[s * c..(s + 1) * c];
            if self.slices_identical(s) {
                dst.copy_from_slice(self.row(0, s));
            } else {
                for tt in 0..t {
                    for (o, &p) in dst.iter_mut().zip(self.row(tt, s)) {
                        *o += p;
                    }
                }
                for o in dst.iter_mut() {
                    *o *= inv_t;
                }
            }
        }
        Tensor::new(vec![n, c], out).expect("mean shape")
    }
}

fn thread_count(passes: usize) -> Result<usize> {
    match std::env::var("BDN_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(k) if k >= 1 => Ok(k.min(passes)),
            _ => Err(Error::Config(format!("BDN_THREADS must be a positive integer, got '{v}'"))),
        },
    }
}

/// One forward pass (mask pass index `t`) over `inputs`, chunked; class
/// probabilities are written to `out` (`N x C`, row-major).
fn run_pass(
    spec: &NetworkSpec,
    params: &NetworkParams,
    config: &MaskConfig,
    inputs: &Tensor,
    t: u64,
    classes: usize,
    out: &mut [f64],
) -> Result<()> {
    let masks = if config.is_stochastic() {
        Some(MaskSet::sample(spec, config, t)?)
    } else {
        None
    };
    let n = inputs.batch();
    let stride = inputs.len() / n;
    let mut start = 0usize;
    while start < n {
        let end = (start + CHUNK).min(n);
        let mut shape = vec![end - start];
        shape.extend_from_slice(inputs.sample_shape());
        let chunk = Tensor::new(shape, inputs.data()[start * stride..end * stride].to_vec())?;
        let pass = spec.forward(params, masks.as_ref(), &chunk)?;
        if pass.output.shape() != [end - start, classes] {
            return Err(Error::Config(format!(
                "network output {:?} is not a class distribution (did you forget a softmax?)",
                pass.output.shape()
            )));
        }
        out[start * classes..end * classes].copy_from_slice(pass.output.data());
        start = end;
    }
    Ok(())
}

/// Run `passes` stochastic forward passes. Pass `t` uses the masks derived
/// from `(config.base_seed, t, layer)`, so the result depends only on the
/// arguments — not on threading (`BDN_THREADS` splits work across pass
/// indices) or internal batching.
pub fn mc_predict(
    spec: &NetworkSpec,
    params: &NetworkParams,
    config: &MaskConfig,
    inputs: &Tensor,
    passes: usize,
) -> Result<McPredictive> {
    if passes == 0 {
        return Err(Error::Config("need at least one MC pass".into()));
    }
    let classes = spec.class_count()?;
    config.resolve(spec)?; // validate keep probabilities before spawning work
    let n = inputs.batch();
    if n == 0 {
        return Err(Error::Input("empty batch".into()));
    }
    let threads = thread_count(passes)?;
    let mut probs = vec![0.0; passes * n * classes];

    if threads == 1 {
        for t in 0..passes {
            run_pass(spec, params, config, inputs, t as u64, classes, &mut probs[t * n * classes..(t + 1) * n * classes])?;
        }
    } else {
        // Chop the pass range into contiguous blocks, one per worker.
        let per = passes.div_ceil(threads);
        let blocks: Vec<(usize, &mut [f64])> = probs
            .chunks_mut(per * n * classes)
            .enumerate()
            .map(|(b, chunk)| (b * per, chunk))
            .collect();
        let results: Vec<Result<()>> = std::thread::scope(|scope| {
            let handles: Vec<_> = blocks
                .into_iter()
                .map(|(first_pass, chunk)| {
                    scope.spawn(move || -> Result<()> {
                        for (i, slot) in chunk.chunks_mut(n * classes).enumerate() {
                            run_pass(spec, params, config, inputs, (first_pass + i) as u64, classes, slot)?;
                        }
                        Ok(())
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("mc worker panicked")).collect()
        });
        for r in results {
            r?;
        }
    }
    let seed = config.is_stochastic().then_some(config.base_seed);
    McPredictive::new(Tensor::new(vec![passes, n, classes], probs)?, seed)
}

/// One deterministic (maskless) pass; `[N, C]`.
pub fn standard_predict(
    spec: &NetworkSpec,
    params: &NetworkParams,
    inputs: &Tensor,
) -> Result<Tensor> {
    let mc = mc_predict(spec, params, &MaskConfig::none(), inputs, 1)?;
    Ok(mc.predictive_mean())
}

// ---------------------------------------------------------------------------
// On-disk format: MCPD (binary) + label sidecar + CSV export
// ---------------------------------------------------------------------------

const MCPD_MAGIC: &[u8; 4] = b"MCPD";
const MCPD_VERSION: u32 = 1;

/// Serialize: magic "MCPD", u32 version, u64 T/N/C, then T*N*C f64 values,
/// everything little-endian. Bit-exact round trip.
pub fn mcpd_bytes(mc: &McPredictive) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + mc.probs.len() * 8);
    out.extend_from_slice(MCPD_MAGIC);
    out.extend_from_slice(&MCPD_VERSION.to_le_bytes());
    out.extend_from_slice(&(mc.pass_count() as u64).to_le_bytes());
    out.extend_from_slice(&(mc.sample_count() as u64).to_le_bytes());
    out.extend_from_slice(&(mc.class_count() as u64).to_le_bytes());
    for &v in mc.probs.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn parse_mcpd(buf: &[u8]) -> Result<McPredictive> {
    let mut off = 0usize;
    let magic = take(buf, &mut off, 4)?;
    if magic != MCPD_MAGIC {
        return Err(Error::format(0, format!("bad magic {magic:?}, want \"MCPD\"")));
    }
    let version = u32::from_le_bytes(take(buf, &mut off, 4)?.try_into().unwrap());
    if version != MCPD_VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let t = u64::from_le_bytes(take(buf, &mut off, 8)?.try_into().unwrap()) as usize;
    let n = u64::from_le_bytes(take(buf, &mut off, 8)?.try_into().unwrap()) as usize;
    let c = u64::from_le_bytes(take(buf, &mut off, 8)?.try_into().unwrap()) as usize;
    let count = t
        .checked_mul(n)
        .and_then(|x| x.checked_mul(c))
        .ok_or_else(|| Error::format(8, "dimension overflow"))?;
    let payload = take(buf, &mut off, count * 8)?;
    if off != buf.len() {
        return Err(Error::format(off as u64, format!("{} trailing bytes", buf.len() - off)));
    }
    let data: Vec<f64> = payload
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    McPredictive::new(Tensor::new(vec![t, n, c], data)?, None)
}

fn take<'a>(buf: &'a [u8], off: &mut usize, n: usize) -> Result<&'a [u8]> {
    let s = buf
        .get(*off..*off + n)
        .ok_or_else(|| Error::format(*off as u64, format!("unexpected end of data (wanted {n} bytes)")))?;
    *off += n;
    Ok(s)
}

pub fn write_mcpd(mc: &McPredictive, path: &Path) -> Result<()> {
    fs::write(path, mcpd_bytes(mc))?;
    Ok(())
}

pub fn read_mcpd(path: &Path) -> Result<McPredictive> {
    parse_mcpd(&fs::read(path)?)
}

/// Label sidecar: u64 count, then one u32 per label, little-endian.
pub fn labels_bytes(labels: &[usize]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(8 + labels.len() * 4);
    out.extend_from_slice(&(labels.len() as u64).to_le_bytes());
    for &l in labels {
        let v = u32::try_from(l)
            .map_err(|_| Error::Input(format!("label {l} does not fit in u32")))?;
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn parse_labels(buf: &[u8]) -> Result<Vec<usize>> {
    let mut off = 0usize;
    let n = u64::from_le_bytes(take(buf, &mut off, 8)?.try_into().unwrap()) as usize;
    let payload = take(buf, &mut off, n * 4)?;
    if off != buf.len() {
        return Err(Error::format(off as u64, format!("{} trailing bytes", buf.len() - off)));
    }
    Ok(payload
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize)
        .collect())
}

pub fn write_labels_file(labels: &[usize], path: &Path) -> Result<()> {
    fs::write(path, labels_bytes(labels)?)?;
    Ok(())
}

pub fn read_labels_file(path: &Path) -> Result<Vec<usize>> {
    parse_labels(&fs::read(path)?)
}

/// Plain-text export of the full predictive tensor: `t,n,c,prob` rows.
pub fn probs_csv(mc: &McPredictive) -> String {
    let (t, n) = (mc.pass_count(), mc.sample_count());
    let mut out = String::from("t,n,c,prob\n");
    for tt in 0..t {
        for s in 0..n {
            let row = mc.row(tt, s);
            for (cls, &p) in row.iter().enumerate() {
                out.push_str(&format!("{tt},{s},{cls},{p}\n"));
            }
        }
    }
    out
}
