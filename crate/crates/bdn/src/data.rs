//! Datasets: the IDX image format, a bundled handwritten-digit corpus,
//! synthetic Gaussian blobs, and the out-of-distribution transforms
//! (rotation, background noise) used to stress uncertainty estimates.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::inference::{read_labels_file, read_mcpd, McPredictive};
use crate::rng::{mix64, SplitMix64};
use crate::tensor::Tensor;

/// A batch of inputs with integer class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    /// `[N, ...sample]`; images are `[N, h, w, c]` with values in [0, 1].
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub class_count: usize,
}

impl LabeledDataset {
    pub fn new(inputs: Tensor, labels: Vec<usize>, class_count: usize) -> Result<LabeledDataset> {
        if inputs.batch() == 0 {
            return Err(Error::Input("dataset is empty".into()));
        }
        if inputs.batch() != labels.len() {
            return Err(Error::Input(format!(
                "{} inputs but {} labels",
                inputs.batch(),
                labels.len()
            )));
        }
        if class_count == 0 {
            return Err(Error::Input("class_count must be positive".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::Input(format!("label {bad} out of range for {class_count} classes")));
        }
        Ok(LabeledDataset { inputs, labels, class_count })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Copy out the given rows, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<LabeledDataset> {
        if indices.is_empty() {
            return Err(Error::Input("empty subset".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::Input(format!("index {bad} out of range for {} samples", self.len())));
        }
        let stride = self.inputs.len() / self.len();
        let mut data = Vec::with_capacity(indices.len() * stride);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.inputs.sample(i));
            labels.push(self.labels[i]);
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(self.inputs.sample_shape());
        Ok(LabeledDataset { inputs: Tensor::new(shape, data)?, labels, class_count: self.class_count })
    }

    /// The first `n` samples.
    pub fn take(&self, n: usize) -> Result<LabeledDataset> {
        let indices: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&indices)
    }
}

// ---------------------------------------------------------------------------
// IDX files (the classic big-endian image/label format)
// ---------------------------------------------------------------------------

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn take_bytes<'a>(buf: &'a [u8], off: &mut usize, n: usize) -> Result<&'a [u8]> {
    let s = buf
        .get(*off..*off + n)
        .ok_or_else(|| Error::format(*off as u64, format!("unexpected end of data (wanted {n} bytes)")))?;
    *off += n;
    Ok(s)
}

fn take_u32_be(buf: &[u8], off: &mut usize) -> Result<u32> {
    let s = take_bytes(buf, off, 4)?;
    Ok(u32::from_be_bytes(s.try_into().unwrap()))
}

/// Parse IDX image bytes into `[N, h, w, 1]` with pixels scaled to [0, 1].
pub fn parse_idx_images(buf: &[u8]) -> Result<Tensor> {
    let mut off = 0usize;
    let magic = take_u32_be(buf, &mut off)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::format(0, format!("bad image magic 0x{magic:08X}, want 0x{IDX_IMAGES_MAGIC:08X}")));
    }
    let n = take_u32_be(buf, &mut off)? as usize;
    let h = take_u32_be(buf, &mut off)? as usize;
    let w = take_u32_be(buf, &mut off)? as usize;
    let pixels = take_bytes(buf, &mut off, n * h * w)?;
    if off != buf.len() {
        return Err(Error::format(off as u64, format!("{} trailing bytes", buf.len() - off)));
    }
    let data: Vec<f64> = pixels.iter().map(|&b| b as f64 / 255.0).collect();
    Tensor::new(vec![n, h, w, 1], data)
}

/// Parse IDX label bytes.
pub fn parse_idx_labels(buf: &[u8]) -> Result<Vec<u8>> {
    let mut off = 0usize;
    let magic = take_u32_be(buf, &mut off)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::format(0, format!("bad label magic 0x{magic:08X}, want 0x{IDX_LABELS_MAGIC:08X}")));
    }
    let n = take_u32_be(buf, &mut off)? as usize;
    let labels = take_bytes(buf, &mut off, n)?;
    if off != buf.len() {
        return Err(Error::format(off as u64, format!("{} trailing bytes", buf.len() - off)));
    }
    Ok(labels.to_vec())
}

/// Load an IDX image/label file pair. The class count is the largest label
/// plus one.
pub fn read_idx_dataset(images: &Path, labels: &Path) -> Result<LabeledDataset> {
    let inputs = parse_idx_images(&fs::read(images)?)?;
    let raw = parse_idx_labels(&fs::read(labels)?)?;
    if inputs.batch() != raw.len() {
        return Err(Error::Input(format!(
            "{} images in {} but {} labels in {}",
            inputs.batch(),
            images.display(),
            raw.len(),
            labels.display()
        )));
    }
    let labels: Vec<usize> = raw.iter().map(|&b| b as usize).collect();
    let classes = labels.iter().copied().max().unwrap_or(0) + 1;
    LabeledDataset::new(inputs, labels, classes)
}

/// Serialize images to IDX bytes, quantizing [0, 1] floats back to u8.
/// Values that came from `parse_idx_images` survive the round trip exactly.
pub fn idx_image_bytes(images: &Tensor) -> Result<Vec<u8>> {
    let [n, h, w, c] = *images.shape() else {
        return Err(Error::Input(format!("IDX wants [n, h, w, 1] images, got {:?}", images.shape())));
    };
    if c != 1 {
        return Err(Error::Input(format!("IDX stores single-channel images, got {c} channels")));
    }
    let mut out = Vec::with_capacity(16 + n * h * w);
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(n as u32).to_be_bytes());
    out.extend_from_slice(&(h as u32).to_be_bytes());
    out.extend_from_slice(&(w as u32).to_be_bytes());
    for &v in images.data() {
        out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
    }
    Ok(out)
}

pub fn idx_label_bytes(labels: &[usize]) -> Result<Vec<u8>> {
    if let Some(&bad) = labels.iter().find(|&&l| l > 255) {
        return Err(Error::Input(format!("label {bad} does not fit in a byte")));
    }
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend(labels.iter().map(|&l| l as u8));
    Ok(out)
}

pub fn write_idx_dataset(ds: &LabeledDataset, images: &Path, labels: &Path) -> Result<()> {
    fs::write(images, idx_image_bytes(&ds.inputs)?)?;
    fs::write(labels, idx_label_bytes(&ds.labels)?)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Saved predictive tensors
// ---------------------------------------------------------------------------

/// Load a saved predictive tensor plus its label sidecar (`<path>.labels`),
/// cross-checking that sample counts agree, labels are in range, and each
/// distribution sums to 1 within 1e-6.
pub fn read_prediction_tensor(path: &Path) -> Result<(McPredictive, Vec<usize>)> {
    let mc = read_mcpd(path)?;
    let sidecar = labels_sidecar(path);
    let labels = read_labels_file(&sidecar)?;
    if labels.len() != mc.sample_count() {
        return Err(Error::Input(format!(
            "{} predictions but {} labels in {}",
            mc.sample_count(),
            labels.len(),
            sidecar.display()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= mc.class_count()) {
        return Err(Error::Input(format!(
            "label {bad} out of range for {} classes",
            mc.class_count()
        )));
    }
    Ok((mc, labels))
}

/// `foo.mcpd` -> `foo.labels`.
pub fn labels_sidecar(path: &Path) -> std::path::PathBuf {
    path.with_extension("labels")
}

// ---------------------------------------------------------------------------
// Geometric / photometric transforms
// ---------------------------------------------------------------------------

/// cos/sin of an angle in degrees, snapped to exact values at multiples of
/// 90 so right-angle rotations map pixel grids onto pixel grids exactly.
fn angle_cos_sin(deg: f64) -> (f64, f64) {
    let norm = deg.rem_euclid(360.0);
    if norm % 90.0 == 0.0 {
        match (norm / 90.0) as usize % 4 {
            0 => (1.0, 0.0),
            1 => (0.0, 1.0),
            2 => (-1.0, 0.0),
            _ => (0.0, -1.0),
        }
    } else {
        let r = deg.to_radians();
        (r.cos(), r.sin())
    }
}

fn bilinear(src: &[f64], h: usize, w: usize, c: usize, sy: f64, sx: f64, ch: usize) -> f64 {
    let y0 = sy.floor();
    let x0 = sx.floor();
    let fy = sy - y0;
    let fx = sx - x0;
    let fetch = |y: f64, x: f64| -> f64 {
        if y < 0.0 || x < 0.0 || y >= h as f64 || x >= w as f64 {
            0.0
        } else {
            src[(y as usize * w + x as usize) * c + ch]
        }
    };
    fetch(y0, x0) * (1.0 - fy) * (1.0 - fx)
        + fetch(y0, x0 + 1.0) * (1.0 - fy) * fx
        + fetch(y0 + 1.0, x0) * fy * (1.0 - fx)
        + fetch(y0 + 1.0, x0 + 1.0) * fy * fx
}

/// Rotate one `h x w x c` image about its center by `deg` degrees
/// (bilinear interpolation, zero fill outside the frame).
pub fn rotate_image(src: &[f64], h: usize, w: usize, c: usize, deg: f64) -> Vec<f64> {
    let (cos_t, sin_t) = angle_cos_sin(deg);
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let mut out = vec![0.0; h * w * c];
    for y in 0..h {
        for x in 0..w {
            let dy = y as f64 - cy;
            let dx = x as f64 - cx;
            // inverse map: where did this output pixel come from?
            let sy = cy + cos_t * dy + sin_t * dx;
            let sx = cx - sin_t * dy + cos_t * dx;
            for ch in 0..c {
                out[(y * w + x) * c + ch] = bilinear(src, h, w, c, sy, sx, ch);
            }
        }
    }
    out
}

fn require_images(ds: &LabeledDataset) -> Result<(usize, usize, usize)> {
    match *ds.inputs.sample_shape() {
        [h, w, c] => Ok((h, w, c)),
        ref other => Err(Error::Input(format!("expected [h, w, c] image samples, got {other:?}"))),
    }
}

/// Rotate every image by an angle drawn uniformly from `[lo, hi]` degrees.
/// Labels are unchanged. A `[0, 0]` range is an exact identity.
pub fn make_rotated(ds: &LabeledDataset, range: (f64, f64), seed: u64) -> Result<LabeledDataset> {
    let (lo, hi) = range;
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(Error::Input(format!("bad angle range [{lo}, {hi}]")));
    }
    let (h, w, c) = require_images(ds)?;
    let mut rng = SplitMix64::new(seed);
    let mut data = Vec::with_capacity(ds.inputs.len());
    for i in 0..ds.len() {
        let deg = if lo == hi { lo } else { rng.uniform(lo, hi) };
        data.extend(rotate_image(ds.inputs.sample(i), h, w, c, deg));
    }
    Ok(LabeledDataset {
        inputs: Tensor::new(ds.inputs.shape().to_vec(), data)?,
        labels: ds.labels.clone(),
        class_count: ds.class_count,
    })
}

/// Rotate by a magnitude drawn from `[min_deg, max_deg]` with a random sign —
/// the "rotated far out of distribution" construction.
pub fn make_rotated_symmetric(
    ds: &LabeledDataset,
    min_deg: f64,
    max_deg: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if !(min_deg.is_finite() && max_deg.is_finite() && 0.0 <= min_deg && min_deg <= max_deg) {
        return Err(Error::Input(format!("bad angle magnitude range [{min_deg}, {max_deg}]")));
    }
    let (h, w, c) = require_images(ds)?;
    let mut rng = SplitMix64::new(seed);
    let mut data = Vec::with_capacity(ds.inputs.len());
    for i in 0..ds.len() {
        let mag = if min_deg == max_deg { min_deg } else { rng.uniform(min_deg, max_deg) };
        let sign = if rng.next_u64() & 1 == 0 { 1.0 } else { -1.0 };
        data.extend(rotate_image(ds.inputs.sample(i), h, w, c, sign * mag));
    }
    Ok(LabeledDataset {
        inputs: Tensor::new(ds.inputs.shape().to_vec(), data)?,
        labels: ds.labels.clone(),
        class_count: ds.class_count,
    })
}

/// Replace near-black pixels (value < 0.1) with uniform noise in
/// `[0, noise_scale]`. Scale 0 leaves the images untouched.
pub fn make_background(ds: &LabeledDataset, noise_scale: f64, seed: u64) -> Result<LabeledDataset> {
    if !(0.0..=1.0).contains(&noise_scale) {
        return Err(Error::Config(format!("noise scale {noise_scale} outside [0, 1]")));
    }
    if noise_scale == 0.0 {
        return Ok(ds.clone());
    }
    require_images(ds)?;
    let mut rng = SplitMix64::new(seed);
    let inputs = ds.inputs.map(|v| {
        if v < 0.1 {
            rng.uniform(0.0, noise_scale)
        } else {
            v
        }
    });
    Ok(LabeledDataset { inputs, labels: ds.labels.clone(), class_count: ds.class_count })
}

/// Isotropic unit-variance Gaussian blobs, one per class, centers spaced on
/// a circle of radius `separation` (a line for 1-d). Sample order is
/// class-major; shuffle downstream if you need it mixed.
pub fn make_synthetic_gaussians(
    classes: usize,
    per_class: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if classes < 2 || per_class == 0 || dim == 0 {
        return Err(Error::Config(format!(
            "need >= 2 classes, >= 1 sample, >= 1 dim (got {classes}/{per_class}/{dim})"
        )));
    }
    if !(separation.is_finite() && separation > 0.0) {
        return Err(Error::Config(format!("separation {separation} must be positive")));
    }
    let mut rng = SplitMix64::new(seed);
    let n = classes * per_class;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for class in 0..classes {
        let mut center = vec![0.0; dim];
        if dim == 1 {
            center[0] = class as f64 * separation;
        } else {
            let phi = std::f64::consts::TAU * class as f64 / classes as f64;
            center[0] = separation * phi.cos();
            center[1] = separation * phi.sin();
        }
        for _ in 0..per_class {
            for &c in center.iter() {
                data.push(c + rng.normal());
            }
            labels.push(class);
        }
    }
    LabeledDataset::new(Tensor::new(vec![n, dim], data)?, labels, classes)
}

// ---------------------------------------------------------------------------
// Bundled digit corpus
// ---------------------------------------------------------------------------

/// A small corpus of real handwritten digits that ships inside the crate:
/// the UCI "Optical Recognition of Handwritten Digits" scans (1797 images,
/// 8x8, ten classes), stored as ordinary IDX files. [`expanded`] upsamples
/// them to 28x28 with seeded geometric jitter to make arbitrarily large
/// MNIST-shaped train/test sets that work offline; real MNIST IDX files drop
/// in via [`read_idx_dataset`] unchanged.
pub mod digits {
    use super::*;

    const IMAGES: &[u8] = include_bytes!("../data/digits-images-idx3-ubyte");
    const LABELS: &[u8] = include_bytes!("../data/digits-labels-idx1-ubyte");

    /// Output side length of [`expanded`] images.
    pub const EXPANDED_SIDE: usize = 28;
    /// The digit occupies roughly this many output pixels before jitter.
    const BASE_SCALE: f64 = 20.0 / 8.0;

    #[derive(Clone, Copy, Debug, PartialEq, Eq)]
    pub enum Split {
        Train,
        Test,
    }

    /// The raw corpus: `[1797, 8, 8, 1]`, ten classes.
    pub fn base_corpus() -> Result<LabeledDataset> {
        let inputs = parse_idx_images(IMAGES)?;
        let raw = parse_idx_labels(LABELS)?;
        let labels: Vec<usize> = raw.iter().map(|&b| b as usize).collect();
        LabeledDataset::new(inputs, labels, 10)
    }

    /// Deterministic stratified source split: within each class, every sixth
    /// occurrence goes to the test pool. Keeps both pools balanced and
    /// disjoint so expanded train/test sets never share a source scan.
    fn split_pools(labels: &[usize]) -> (Vec<usize>, Vec<usize>) {
        let mut seen = [0usize; 10];
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (i, &l) in labels.iter().enumerate() {
            if seen[l] % 6 == 5 {
                test.push(i);
            } else {
                train.push(i);
            }
            seen[l] += 1;
        }
        (train, test)
    }

    /// `count` jittered 28x28 digits drawn (with replacement) from the given
    /// source pool. Each output sample gets its own derived seed, so the set
    /// is fully determined by (split, count, seed) and count can exceed the
    /// pool size.
    pub fn expanded(split: Split, count: usize, seed: u64) -> Result<LabeledDataset> {
        if count == 0 {
            return Err(Error::Input("requested an empty digit set".into()));
        }
        let base = base_corpus()?;
        let (train_pool, test_pool) = split_pools(&base.labels);
        let pool = match split {
            Split::Train => train_pool,
            Split::Test => test_pool,
        };
        let side = EXPANDED_SIDE;
        let mut data = Vec::with_capacity(count * side * side);
        let mut labels = Vec::with_capacity(count);
        let split_tag = match split {
            Split::Train => 0u64,
            Split::Test => 1u64 << 40,
        };
        for j in 0..count {
            let mut rng = SplitMix64::new(mix64(seed ^ split_tag ^ j as u64));
            let src_idx = pool[rng.below(pool.len())];
            let src = base.inputs.sample(src_idx);
            labels.push(base.labels[src_idx]);
            render_jittered(src, &mut rng, &mut data);
        }
        LabeledDataset::new(
            Tensor::new(vec![count, side, side, 1], data)?,
            labels,
            10,
        )
    }

    /// One 8x8 source scan -> one 28x28 output: centered upscale to ~20x20
    /// plus seeded rotation, scale, translation and faint pixel noise. A
    /// single inverse-affine bilinear resample, so small digits stay crisp.
    /// Jitter magnitudes are mild on purpose — the corpus stands in for
    /// centered, size-normalized scans, so the variation should read as
    /// handwriting wobble, not as an augmentation regime.
    fn render_jittered(src: &[f64], rng: &mut SplitMix64, out: &mut Vec<f64>) {
        let angle = rng.uniform(-8.0, 8.0).to_radians();
        let scale = rng.uniform(0.93, 1.07);
        let ty = rng.uniform(-1.5, 1.5);
        let tx = rng.uniform(-1.5, 1.5);
        let noise = 0.03;
        let (cos_t, sin_t) = (angle.cos(), angle.sin());
        let side = EXPANDED_SIDE;
        let c_out = (side as f64 - 1.0) / 2.0;
        let c_src = (8.0 - 1.0) / 2.0;
        let inv = 1.0 / (BASE_SCALE * scale);
        for y in 0..side {
            for x in 0..side {
                let dy = y as f64 - c_out - ty;
                let dx = x as f64 - c_out - tx;
                let sy = c_src + (cos_t * dy + sin_t * dx) * inv;
                let sx = c_src + (-sin_t * dy + cos_t * dx) * inv;
                let v = bilinear(src, 8, 8, 1, sy, sx, 0);
                let jitter = rng.uniform(-noise, noise);
                out.push((v + jitter).clamp(0.0, 1.0));
            }
        }
    }

}
