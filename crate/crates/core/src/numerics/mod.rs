//! Dense arrays, reverse-mode differentiation, parameter storage and
//! reproducible random streams.

mod gradcheck;
mod params;
mod rng;
mod scalar;
mod tape;

pub use gradcheck::{grad_check, GradCheckReport, Objective};
pub use params::ParamStore;
pub use rng::{gaussian, RngStream};
pub use scalar::Scalar;
pub use tape::{Graph, Mat, Var};

use crate::error::{Error, Result};

/// Row-major array of `f32` values with an arbitrary shape.
#[derive(Clone, Debug, PartialEq)]
pub struct RealArray {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl RealArray {
    /// Builds an array, checking element count and finiteness.
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape("RealArray::new", expected, data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("RealArray::new".into()));
        }
        Ok(Self { shape, data })
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f32>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::from_parts(shape.to_vec(), vec![0.0; shape.iter().product()])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Size of the last dimension (1 for a scalar).
    pub fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    /// Number of rows when viewed as `[len / last_dim, last_dim]`.
    pub fn rows(&self) -> usize {
        let c = self.last_dim();
        if c == 0 {
            0
        } else {
            self.data.len() / c
        }
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let c = self.last_dim();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        let c = self.last_dim();
        &mut self.data[i * c..(i + 1) * c]
    }

    /// Two-dimensional view as a computation matrix.
    pub fn to_mat<S: Scalar>(&self) -> Mat<S> {
        Mat::from_vec(
            self.rows(),
            self.last_dim(),
            self.data.iter().map(|&v| S::lift(v as f64)).collect(),
        )
    }

    pub fn from_mat<S: Scalar>(m: &Mat<S>) -> Self {
        Self::from_parts(
            vec![m.rows, m.cols],
            m.data.iter().map(|v| v.as_f64() as f32).collect(),
        )
    }
}

/// Softmax over the last dimension with max subtraction.
pub fn softmax_lastdim(m: &RealArray) -> Result<RealArray> {
    if m.shape().is_empty() {
        return Err(Error::InvalidArgument("softmax of a 0-d array".into()));
    }
    if !m.is_finite() {
        return Err(Error::NonFinite("softmax_lastdim input".into()));
    }
    let mut out = m.clone();
    let c = m.last_dim();
    if c == 0 {
        return Ok(out);
    }
    for row in out.data.chunks_exact_mut(c) {
        let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b as f64));
        let exps: Vec<f64> = row.iter().map(|&v| (v as f64 - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        for (o, e) in row.iter_mut().zip(exps) {
            *o = (e / sum) as f32;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_row() {
        let m = RealArray::new(vec![1, 2], vec![0.0, 0.0]).unwrap();
        assert_eq!(softmax_lastdim(&m).unwrap().data(), &[0.5, 0.5]);
    }

    #[test]
    fn matches_naive_exp_sum() {
        let mut rng = RngStream::new(3);
        let x = gaussian(&mut rng, &[5]);
        let y = softmax_lastdim(&x).unwrap();
        let denom: f64 = x.data().iter().map(|&v| (v as f64).exp()).sum();
        let total: f64 = y.data().iter().map(|&v| v as f64).sum();
        assert!((total - 1.0).abs() < 1e-6);
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!(((*a as f64).exp() / denom - *b as f64).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_non_finite() {
        let m = RealArray::from_parts(vec![2], vec![0.0, f32::NAN]);
        assert!(softmax_lastdim(&m).is_err());
    }

    #[test]
    fn rejects_bad_element_count() {
        assert!(RealArray::new(vec![2, 2], vec![0.0; 3]).is_err());
    }

    proptest! {
        #[test]
        fn rows_sum_to_one(values in prop::collection::vec(-50.0f32..50.0, 1..64), shift in -20.0f32..20.0) {
            let n = values.len();
            let m = RealArray::new(vec![1, n], values.clone()).unwrap();
            let y = softmax_lastdim(&m).unwrap();
            let s: f64 = y.data().iter().map(|&v| v as f64).sum();
            prop_assert!((s - 1.0).abs() < 1e-6);
            prop_assert!(y.data().iter().all(|&v| v >= 0.0));
            let shifted = RealArray::new(vec![1, n], values.iter().map(|v| v + shift).collect()).unwrap();
            let ys = softmax_lastdim(&shifted).unwrap();
            for (a, b) in y.data().iter().zip(ys.data()) {
                prop_assert!((a - b).abs() < 1e-5);
            }
        }
    }
}
