use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("model coordinate {index} is not finite ({value})")]
pub struct NonFiniteError {
    pub index: usize,
    pub value: f64,
}

/// A dense real parameter vector: a device model, a cluster average, or the
/// global model.
///
/// Construction through [`ModelVector::new`] rejects NaN and infinities.
/// Arithmetic helpers do not re-check; the engine checks finiteness of the
/// global model once per step instead.
#[derive(Clone, PartialEq, Default)]
pub struct ModelVector(Vec<f64>);

impl ModelVector {
    pub fn new(coords: Vec<f64>) -> Result<Self, NonFiniteError> {
        if let Some((index, &value)) = coords.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(NonFiniteError { index, value });
        }
        Ok(ModelVector(coords))
    }

    pub fn zeros(dim: usize) -> Self {
        ModelVector(vec![0.0; dim])
    }

    pub(crate) fn from_raw(coords: Vec<f64>) -> Self {
        ModelVector(coords)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn dot(&self, other: &ModelVector) -> f64 {
        dot(&self.0, &other.0)
    }

    pub fn norm_sq(&self) -> f64 {
        dot(&self.0, &self.0)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn distance(&self, other: &ModelVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// `self += a * x`
    pub fn axpy(&mut self, a: f64, x: &ModelVector) {
        axpy(&mut self.0, a, &x.0);
    }

    pub fn scale(&mut self, a: f64) {
        self.0.iter_mut().for_each(|v| *v *= a);
    }

    pub fn sub(&self, other: &ModelVector) -> ModelVector {
        ModelVector(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    /// Arithmetic mean of a nonempty set of equal-length vectors.
    pub fn mean<'a, I>(vectors: I) -> ModelVector
    where
        I: IntoIterator<Item = &'a ModelVector>,
    {
        let mut iter = vectors.into_iter();
        let first = iter.next().expect("mean of an empty set");
        let mut acc = first.clone();
        let mut count = 1usize;
        for v in iter {
            axpy(&mut acc.0, 1.0, &v.0);
            count += 1;
        }
        acc.scale(1.0 / count as f64);
        acc
    }
}

impl fmt::Debug for ModelVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(&self.0).finish()
    }
}

impl From<ModelVector> for Vec<f64> {
    fn from(v: ModelVector) -> Self {
        v.0
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += a * xi);
}
