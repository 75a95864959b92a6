//! A minimal dense tensor: row-major `Vec<f64>` plus a shape. No views, no
//! broadcasting — the layer code indexes flat data directly, this type just
//! keeps shape bookkeeping honest.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Input(format!(
                "shape {:?} wants {} elements, data has {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        Tensor { shape, data: vec![0.0; n] }
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor { shape, data: vec![value; n] }
    }

    /// Fresh tensor with entries produced by `f` in row-major order.
    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut() -> f64) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor { shape, data: (0..n).map(|_| f()).collect() }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Same data, different shape (element count must agree).
    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::Input(format!(
                "cannot reshape {:?} ({} elems) to {:?} ({})",
                self.shape,
                self.data.len(),
                shape,
                n
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Leading dimension, i.e. the batch size for batched tensors.
    pub fn batch(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Per-sample shape of a batched tensor (everything after the leading
    /// dimension).
    pub fn sample_shape(&self) -> &[usize] {
        &self.shape[1..]
    }

    /// One sample's flat slice out of a batched tensor.
    pub fn sample(&self, n: usize) -> &[f64] {
        let stride = self.data.len() / self.batch().max(1);
        &self.data[n * stride..(n + 1) * stride]
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn scale(&mut self, s: f64) {
        for x in &mut self.data {
            *x *= s;
        }
    }

    /// self += alpha * other (shapes must match).
    pub fn axpy(&mut self, alpha: f64, other: &Tensor) {
        assert_eq!(self.shape, other.shape, "axpy shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    /// Elementwise product, in place.
    pub fn hadamard(&mut self, other: &Tensor) {
        assert_eq!(self.shape, other.shape, "hadamard shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a *= b;
        }
    }

    pub fn squared_norm(&self) -> f64 {
        self.data.iter().map(|&x| x * x).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Error out (naming `context`) if any entry is NaN or infinite.
    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(Error::Numeric(format!("non-finite value in {context}")))
        }
    }

    /// Max |a - b| over all entries; shapes must match.
    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_checks_element_count() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(
            Tensor::new(vec![2, 3], vec![0.0; 5]),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn reshape_round_trip() {
        let t = Tensor::new(vec![2, 6], (0..12).map(|i| i as f64).collect()).unwrap();
        let r = t.clone().reshape(vec![3, 4]).unwrap();
        assert_eq!(r.shape(), &[3, 4]);
        assert_eq!(r.data(), t.data());
        assert!(t.reshape(vec![5, 5]).is_err());
    }

    #[test]
    fn sample_slices() {
        let t = Tensor::new(vec![3, 2, 2], (0..12).map(|i| i as f64).collect()).unwrap();
        assert_eq!(t.sample(1), &[4.0, 5.0, 6.0, 7.0]);
        assert_eq!(t.sample_shape(), &[2, 2]);
    }

    #[test]
    fn axpy_and_norm() {
        let mut a = Tensor::filled(vec![4], 1.0);
        let b = Tensor::new(vec![4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        a.axpy(0.5, &b);
        assert_eq!(a.data(), &[1.5, 2.0, 2.5, 3.0]);
        assert!((b.squared_norm() - 30.0).abs() < 1e-12);
    }

    #[test]
    fn finite_checks() {
        let mut t = Tensor::zeros(vec![3]);
        assert!(t.ensure_finite("x").is_ok());
        t.data_mut()[1] = f64::NAN;
        assert!(matches!(t.ensure_finite("x"), Err(Error::Numeric(_))));
    }
}
