//! Embedding vectors and the cosine similarity math everything else builds on.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Norms below this are treated as a zero vector.
pub const ZERO_NORM_EPS: f64 = 1e-12;

/// Allowed deviation from unit norm for an embedding flagged as normalized.
pub const UNIT_NORM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VectorError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("zero vector (norm {norm:e} below {ZERO_NORM_EPS:e})")]
    ZeroVector { norm: f64 },
    #[error("embedding is empty")]
    Empty,
    #[error("non-finite component at position {index}")]
    NonFinite { index: usize },
    #[error("embedding flagged normalized but has norm {norm}")]
    NotUnit { norm: f64 },
}

/// A fixed-dimension real vector tagged with the model that produced it.
///
/// Components are stored as `f64` regardless of the precision a provider
/// returns. Construction validates that the vector is non-empty and finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawEmbedding", into = "RawEmbedding")]
pub struct Embedding {
    values: Vec<f64>,
    model_id: String,
    normalized: bool,
}

#[derive(Serialize, Deserialize)]
struct RawEmbedding {
    values: Vec<f64>,
    model_id: String,
    normalized: bool,
}

impl TryFrom<RawEmbedding> for Embedding {
    type Error = VectorError;

    fn try_from(raw: RawEmbedding) -> Result<Self, Self::Error> {
        let e = Embedding::new(raw.values, raw.model_id)?;
        if raw.normalized {
            e.into_checked_unit()
        } else {
            Ok(e)
        }
    }
}

impl From<Embedding> for RawEmbedding {
    fn from(e: Embedding) -> Self {
        RawEmbedding {
            values: e.values,
            model_id: e.model_id,
            normalized: e.normalized,
        }
    }
}

impl Embedding {
    /// Builds an un-normalized embedding after validating it.
    pub fn new(values: Vec<f64>, model_id: impl Into<String>) -> Result<Self, VectorError> {
        if values.is_empty() {
            return Err(VectorError::Empty);
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(VectorError::NonFinite { index });
        }
        Ok(Self {
            values,
            model_id: model_id.into(),
            normalized: false,
        })
    }

    /// Builds an embedding from `f32` components, widening to `f64`.
    pub fn from_f32(values: &[f32], model_id: impl Into<String>) -> Result<Self, VectorError> {
        Self::new(values.iter().map(|&v| f64::from(v)).collect(), model_id)
    }

    /// Reconstructs an embedding that is already unit norm, such as one read
    /// back from a snapshot. Fails if the norm is off by more than
    /// [`UNIT_NORM_TOL`].
    pub fn from_unit(values: Vec<f64>, model_id: impl Into<String>) -> Result<Self, VectorError> {
        Self::new(values, model_id)?.into_checked_unit()
    }

    fn into_checked_unit(mut self) -> Result<Self, VectorError> {
        let norm = l2_norm(&self.values);
        if (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(VectorError::NotUnit { norm });
        }
        self.normalized = true;
        Ok(self)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.values)
    }

    /// Returns a unit-norm copy pointing in the same direction.
    ///
    /// Idempotent: an embedding already flagged normalized is returned as is.
    pub fn normalize(&self) -> Result<Embedding, VectorError> {
        if self.normalized {
            return Ok(self.clone());
        }
        let norm = self.norm();
        if norm < ZERO_NORM_EPS {
            return Err(VectorError::ZeroVector { norm });
        }
        Ok(Embedding {
            values: self.values.iter().map(|v| v / norm).collect(),
            model_id: self.model_id.clone(),
            normalized: true,
        })
    }

    /// Consuming variant of [`Embedding::normalize`].
    pub fn into_normalized(self) -> Result<Embedding, VectorError> {
        if self.normalized {
            Ok(self)
        } else {
            self.normalize()
        }
    }
}

/// Free-function form of [`Embedding::normalize`].
pub fn normalize(a: &Embedding) -> Result<Embedding, VectorError> {
    a.normalize()
}

/// A cosine similarity, clamped into `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimilarityScore(f64);

impl SimilarityScore {
    /// Clamps `value` into `[-1, 1]`. NaN maps to `-1`.
    pub fn new(value: f64) -> Self {
        if value.is_nan() {
            return Self(-1.0);
        }
        Self(value.clamp(-1.0, 1.0))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl From<SimilarityScore> for f64 {
    fn from(s: SimilarityScore) -> f64 {
        s.0
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("threshold {0} outside [-1, 1]")]
pub struct ThresholdOutOfRange(pub f64);

/// A decision threshold on cosine similarity. Scores `>=` the threshold count
/// as a match.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Threshold(f64);

impl Threshold {
    pub fn new(value: f64) -> Result<Self, ThresholdOutOfRange> {
        if value.is_finite() && (-1.0..=1.0).contains(&value) {
            Ok(Self(value))
        } else {
            Err(ThresholdOutOfRange(value))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn accepts(self, score: SimilarityScore) -> bool {
        score.value() >= self.0
    }
}

impl Default for Threshold {
    fn default() -> Self {
        Self(0.9)
    }
}

impl TryFrom<f64> for Threshold {
    type Error = ThresholdOutOfRange;

    fn try_from(value: f64) -> Result<Self, Self::Error> {
        Threshold::new(value)
    }
}

impl From<Threshold> for f64 {
    fn from(t: Threshold) -> f64 {
        t.0
    }
}

pub(crate) fn l2_norm(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `dot(a, b) / (|a| |b|)`, clamped into `[-1, 1]`.
///
/// The products are accumulated in a fixed order that does not depend on
/// argument order, so the result is bitwise symmetric.
pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<SimilarityScore, VectorError> {
    cosine_slices(a.values(), b.values())
}

pub(crate) fn cosine_slices(a: &[f64], b: &[f64]) -> Result<SimilarityScore, VectorError> {
    if a.len() != b.len() {
        return Err(VectorError::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let na = l2_norm(a);
    let nb = l2_norm(b);
    for norm in [na, nb] {
        if norm < ZERO_NORM_EPS {
            return Err(VectorError::ZeroVector { norm });
        }
    }
    Ok(SimilarityScore::new(dot(a, b) / (na * nb)))
}
