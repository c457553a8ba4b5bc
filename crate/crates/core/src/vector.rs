//! Embedding vectors and the deterministic vector math shared by every stage.
//!
//! Values are stored in single precision (the on-disk dtype) and every
//! reduction is carried out in `f64`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Norm tolerance for the unit-norm invariant.
pub const UNIT_TOLERANCE: f64 = 1e-5;

/// Vectors whose norm is already within this distance of 1 are left untouched
/// by [`normalize`], which makes normalization exactly idempotent at `f32`
/// storage precision.
const ALREADY_UNIT: f64 = 1e-6;

/// Norms below this are treated as zero.
const ZERO_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VectorError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("zero (or cancelled) vector cannot be normalized")]
    ZeroVector,
    #[error("empty vector list")]
    EmptyList,
    #[error("vector has zero dimensions")]
    ZeroDim,
    #[error("non-finite value at coordinate {0}")]
    NonFinite(usize),
}

/// A point in the shared image-text embedding space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f32>", into = "Vec<f32>")]
pub struct EmbeddingVector {
    values: Vec<f32>,
}

impl EmbeddingVector {
    /// Wraps raw values, rejecting empty or non-finite input.
    pub fn new(values: Vec<f32>) -> Result<Self, VectorError> {
        if values.is_empty() {
            return Err(VectorError::ZeroDim);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(VectorError::NonFinite(i));
        }
        Ok(Self { values })
    }

    pub fn from_f64(values: &[f64]) -> Result<Self, VectorError> {
        Self::new(values.iter().map(|&v| v as f32).collect())
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.values
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.values
    }

    pub fn norm(&self) -> f64 {
        norm(&self.values)
    }

    pub fn is_unit(&self) -> bool {
        (self.norm() - 1.0).abs() <= UNIT_TOLERANCE
    }

    /// Multiplies every coordinate by `s`.
    pub fn scaled(&self, s: f64) -> Result<Self, VectorError> {
        Self::new(self.values.iter().map(|&v| (v as f64 * s) as f32).collect())
    }
}

impl TryFrom<Vec<f32>> for EmbeddingVector {
    type Error = VectorError;

    fn try_from(values: Vec<f32>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl From<EmbeddingVector> for Vec<f32> {
    fn from(v: EmbeddingVector) -> Self {
        v.values
    }
}

impl AsRef<[f32]> for EmbeddingVector {
    fn as_ref(&self) -> &[f32] {
        &self.values
    }
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

pub(crate) fn norm(a: &[f32]) -> f64 {
    dot(a, a).sqrt()
}

fn check_dims(a: &[f32], b: &[f32]) -> Result<(), VectorError> {
    if a.len() != b.len() {
        return Err(VectorError::DimMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(())
}

/// Cosine similarity on raw slices, clipped to `[-1, 1]`.
pub fn cosine_slices(a: &[f32], b: &[f32]) -> Result<f64, VectorError> {
    check_dims(a, b)?;
    let (na, nb) = (norm(a), norm(b));
    if na <= ZERO_NORM || nb <= ZERO_NORM {
        return Err(VectorError::ZeroVector);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, VectorError> {
    cosine_slices(&a.values, &b.values)
}

fn normalize_f64(values: &[f64]) -> Result<EmbeddingVector, VectorError> {
    let n = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !n.is_finite() || n <= ZERO_NORM {
        return Err(VectorError::ZeroVector);
    }
    EmbeddingVector::new(values.iter().map(|&v| (v / n) as f32).collect())
}

/// Scales `v` to unit length. Vectors already unit at storage precision are
/// returned bit-for-bit unchanged.
pub fn normalize(v: &EmbeddingVector) -> Result<EmbeddingVector, VectorError> {
    let n = v.norm();
    if n <= ZERO_NORM {
        return Err(VectorError::ZeroVector);
    }
    if (n - 1.0).abs() <= ALREADY_UNIT {
        return Ok(v.clone());
    }
    let widened: Vec<f64> = v.values.iter().map(|&x| x as f64).collect();
    normalize_f64(&widened)
}

/// Normalized arithmetic mean of `vs`.
pub fn renorm_mean<V: AsRef<[f32]>>(vs: &[V]) -> Result<EmbeddingVector, VectorError> {
    weighted_sum_normalized(vs.iter().map(|v| (1.0, v.as_ref())))
}

/// `normalize(sum_i w_i * v_i)`, accumulated in `f64`.
///
/// Zero-weight terms are skipped, and a lone positively weighted term goes
/// through [`normalize`]: the singleton mean of a unit vector is the vector
/// itself, bit for bit.
pub fn weighted_sum_normalized<'a, I>(terms: I) -> Result<EmbeddingVector, VectorError>
where
    I: IntoIterator<Item = (f64, &'a [f32])>,
{
    let terms: Vec<(f64, &[f32])> = terms.into_iter().collect();
    let (_, first) = *terms.first().ok_or(VectorError::EmptyList)?;
    for (_, v) in &terms[1..] {
        check_dims(first, v)?;
    }
    let live: Vec<(f64, &[f32])> = terms.into_iter().filter(|(w, _)| *w != 0.0).collect();
    match live.as_slice() {
        [] => Err(VectorError::ZeroVector),
        [(w, v)] if *w > 0.0 => normalize(&EmbeddingVector::new(v.to_vec())?),
        _ => {
            let mut acc = vec![0.0f64; first.len()];
            for (w, v) in &live {
                for (a, &x) in acc.iter_mut().zip(*v) {
                    *a += w * x as f64;
                }
            }
            normalize_f64(&acc)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(v: &[f32]) -> EmbeddingVector {
        EmbeddingVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine(&ev(&[1., 0.]), &ev(&[1., 0.])).unwrap(), 1.0);
        assert_eq!(cosine(&ev(&[1., 0.]), &ev(&[0., 1.])).unwrap(), 0.0);
        assert!((cosine(&ev(&[1., 0.]), &ev(&[3., 4.])).unwrap() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn cosine_errors() {
        assert_eq!(
            cosine(&ev(&[1., 0.]), &ev(&[1., 0., 0.])),
            Err(VectorError::DimMismatch { left: 2, right: 3 })
        );
        assert_eq!(cosine(&ev(&[0., 0.]), &ev(&[1., 0.])), Err(VectorError::ZeroVector));
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize(&ev(&[2., 0.])).unwrap().as_slice(), &[1.0, 0.0]);
        assert_eq!(normalize(&ev(&[1., 0.])).unwrap().as_slice(), &[1.0, 0.0]);
        let n = normalize(&ev(&[3., 4.])).unwrap();
        assert!((n.as_slice()[0] - 0.6).abs() < 1e-7);
        assert!((n.as_slice()[1] - 0.8).abs() < 1e-7);
        assert_eq!(normalize(&ev(&[0., 0.])), Err(VectorError::ZeroVector));
    }

    #[test]
    fn renorm_mean_examples() {
        assert_eq!(renorm_mean(&[ev(&[1., 0.])]).unwrap().as_slice(), &[1.0, 0.0]);
        let m = renorm_mean(&[ev(&[1., 0.]), ev(&[0., 1.])]).unwrap();
        for &x in m.as_slice() {
            assert!((x as f64 - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-5);
        }
        assert_eq!(
            renorm_mean(&[ev(&[1., 0.]), ev(&[-1., 0.])]),
            Err(VectorError::ZeroVector)
        );
        assert_eq!(renorm_mean::<EmbeddingVector>(&[]), Err(VectorError::EmptyList));
    }

    #[test]
    fn rejects_non_finite() {
        assert_eq!(EmbeddingVector::new(vec![1.0, f32::NAN]), Err(VectorError::NonFinite(1)));
        assert_eq!(EmbeddingVector::new(vec![]), Err(VectorError::ZeroDim));
    }
}
