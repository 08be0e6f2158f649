use serde::{Deserialize, Serialize};

use super::DomainError;

/// Closed interval of admissible feature scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct ScoreRange {
    low: f64,
    high: f64,
}

impl ScoreRange {
    pub fn new(low: f64, high: f64) -> Result<Self, DomainError> {
        if !(low.is_finite() && high.is_finite() && low < high) {
            return Err(DomainError::InvalidRange(format!(
                "need finite low < high, got [{low}, {high}]"
            )));
        }
        Ok(Self { low, high })
    }

    pub fn unit() -> Self {
        Self {
            low: 0.0,
            high: 1.0,
        }
    }

    pub fn low(&self) -> f64 {
        self.low
    }

    pub fn high(&self) -> f64 {
        self.high
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.low + self.high)
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.low && x <= self.high
    }

    /// `bins + 1` uniformly spaced edges spanning the range. Each edge is
    /// computed directly from its index so that decimal grids land on the
    /// nearest representable value.
    pub fn uniform_edges(&self, bins: usize) -> Vec<f64> {
        let width = self.high - self.low;
        (0..=bins)
            .map(|i| {
                if i == bins {
                    self.high
                } else {
                    self.low + width * i as f64 / bins as f64
                }
            })
            .collect()
    }
}

impl Default for ScoreRange {
    fn default() -> Self {
        Self::unit()
    }
}

impl TryFrom<[f64; 2]> for ScoreRange {
    type Error = DomainError;

    fn try_from(v: [f64; 2]) -> Result<Self, Self::Error> {
        Self::new(v[0], v[1])
    }
}

impl From<ScoreRange> for [f64; 2] {
    fn from(r: ScoreRange) -> Self {
        [r.low, r.high]
    }
}

#[derive(Deserialize)]
struct RawHistogram {
    bin_edges: Vec<f64>,
    masses: Vec<f64>,
}

/// Binned, normalized distribution of feature scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawHistogram")]
pub struct FeatureHistogram {
    bin_edges: Vec<f64>,
    masses: Vec<f64>,
}

impl FeatureHistogram {
    pub const MASS_TOLERANCE: f64 = 1e-9;

    pub fn new(bin_edges: Vec<f64>, masses: Vec<f64>) -> Result<Self, DomainError> {
        if bin_edges.len() < 3 {
            return Err(DomainError::InvalidHistogram(format!(
                "need at least 2 bins, got {}",
                bin_edges.len().saturating_sub(1)
            )));
        }
        if bin_edges.iter().any(|e| !e.is_finite()) || bin_edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DomainError::InvalidHistogram(
                "bin edges must be finite and strictly ascending".into(),
            ));
        }
        if masses.len() + 1 != bin_edges.len() {
            return Err(DomainError::InvalidHistogram(format!(
                "{} masses for {} edges",
                masses.len(),
                bin_edges.len()
            )));
        }
        if masses.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(DomainError::InvalidHistogram(
                "masses must be finite and non-negative".into(),
            ));
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > Self::MASS_TOLERANCE {
            return Err(DomainError::InvalidHistogram(format!(
                "masses sum to {total}, expected 1"
            )));
        }
        Ok(Self { bin_edges, masses })
    }

    /// Builds a histogram from raw bin counts.
    pub fn from_counts(bin_edges: Vec<f64>, counts: &[u64]) -> Result<Self, DomainError> {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(DomainError::InvalidHistogram("no observations".into()));
        }
        let masses = counts.iter().map(|&c| c as f64 / total as f64).collect();
        Self::new(bin_edges, masses)
    }

    pub fn bins(&self) -> usize {
        self.masses.len()
    }

    pub fn bin_edges(&self) -> &[f64] {
        &self.bin_edges
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn same_bins(&self, other: &Self) -> bool {
        self.bin_edges == other.bin_edges
    }
}

impl TryFrom<RawHistogram> for FeatureHistogram {
    type Error = DomainError;

    fn try_from(raw: RawHistogram) -> Result<Self, Self::Error> {
        Self::new(raw.bin_edges, raw.masses)
    }
}
