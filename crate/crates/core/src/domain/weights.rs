use serde::{Deserialize, Serialize};

use super::DomainError;

/// A point on the probability simplex, aligned to a perspective registry's
/// declaration order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Weights(Vec<f64>);

impl Weights {
    /// Allowed deviation of the coordinate sum from one.
    pub const SUM_TOLERANCE: f64 = 1e-9;

    pub fn new(values: Vec<f64>) -> Result<Self, DomainError> {
        if values.len() < 2 {
            return Err(DomainError::InvalidWeights(format!(
                "need at least 2 coordinates, got {}",
                values.len()
            )));
        }
        if let Some(v) = values
            .iter()
            .find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0)
        {
            return Err(DomainError::InvalidWeights(format!(
                "coordinate {v} outside [0, 1]"
            )));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(DomainError::InvalidWeights(format!(
                "coordinates sum to {sum}, expected 1"
            )));
        }
        Ok(Self(values))
    }

    /// Maps a non-negative, non-zero vector onto the simplex by dividing by
    /// its sum. Vectors already on the simplex are returned unchanged.
    pub fn normalize(values: &[f64]) -> Result<Self, DomainError> {
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(DomainError::InvalidWeights(
                "normalize requires finite non-negative coordinates".into(),
            ));
        }
        let sum: f64 = values.iter().sum();
        if sum <= 0.0 {
            return Err(DomainError::InvalidWeights(
                "cannot normalize the zero vector".into(),
            ));
        }
        if (sum - 1.0).abs() <= 1e-12 && values.iter().all(|v| *v <= 1.0) {
            return Self::new(values.to_vec());
        }
        Self::new(values.iter().map(|v| v / sum).collect())
    }

    pub fn uniform(n: usize) -> Result<Self, DomainError> {
        Self::new(vec![1.0 / n as f64; n])
    }

    pub fn one_hot(n: usize, index: usize) -> Result<Self, DomainError> {
        if index >= n {
            return Err(DomainError::InvalidWeights(format!(
                "vertex index {index} out of range for n = {n}"
            )));
        }
        let mut values = vec![0.0; n];
        values[index] = 1.0;
        Self::new(values)
    }

    /// Zeroes every coordinate strictly below `epsilon` and renormalizes.
    /// The largest coordinate always survives.
    pub fn floored(&self, epsilon: f64) -> Self {
        let max = self.0.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let kept: Vec<f64> = self
            .0
            .iter()
            .map(|&v| if v < epsilon && v < max { 0.0 } else { v })
            .collect();
        if kept == self.0 {
            return self.clone();
        }
        Self::normalize(&kept).expect("flooring keeps the maximum coordinate")
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for Weights {
    type Error = DomainError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl From<Weights> for Vec<f64> {
    fn from(w: Weights) -> Self {
        w.0
    }
}

impl std::ops::Deref for Weights {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}
