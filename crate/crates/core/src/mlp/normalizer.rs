use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Per-dimension standard deviations are floored at this value.
pub const STD_FLOOR: f64 = 1e-8;

/// Per-dimension affine map to zero mean, unit variance.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer<T> {
    pub mean: Vec<T>,
    pub std: Vec<T>,
}

impl<T: Scalar> Normalizer<T> {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![T::zero(); dim],
            std: vec![T::one(); dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[T]) -> Vec<T> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((&v, &m), &s)| (v - m) / s)
            .collect()
    }
}

/// Fits mean and population standard deviation over a row-major batch.
pub fn fit_normalizer<T: Scalar>(features: &[T], dim: usize) -> Result<Normalizer<T>> {
    if dim == 0 || features.is_empty() {
        return Err(Error::InvalidInput(
            "cannot fit a normalizer on an empty batch".into(),
        ));
    }
    if !features.len().is_multiple_of(dim) {
        return Err(Error::Dimension {
            expected: dim,
            got: features.len() % dim,
        });
    }
    let rows = features.len() / dim;
    let n = T::from_usize_lossy(rows);
    let mut mean = vec![T::zero(); dim];
    for row in features.chunks_exact(dim) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![T::zero(); dim];
    for row in features.chunks_exact(dim) {
        for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let floor = T::lit(STD_FLOOR);
    let std = var.into_iter().map(|s| (s / n).sqrt().max(floor)).collect();
    Ok(Normalizer { mean, std })
}
