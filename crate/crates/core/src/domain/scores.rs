use serde::{Deserialize, Serialize};

use super::{DomainError, ScoreRange};

/// Per-question feature scores for one concept: one row per perspective
/// plus the baseline row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScores {
    concept: String,
    question_ids: Vec<String>,
    perspective_scores: Vec<Vec<f64>>,
    baseline_scores: Vec<f64>,
}

impl FeatureScores {
    pub fn new(
        concept: impl Into<String>,
        question_ids: Vec<String>,
        perspective_scores: Vec<Vec<f64>>,
        baseline_scores: Vec<f64>,
        range: ScoreRange,
    ) -> Result<Self, DomainError> {
        let d = question_ids.len();
        if d == 0 {
            return Err(DomainError::InvalidScores("no questions".into()));
        }
        if perspective_scores.is_empty() {
            return Err(DomainError::InvalidScores("no perspective rows".into()));
        }
        if baseline_scores.len() != d || perspective_scores.iter().any(|row| row.len() != d) {
            return Err(DomainError::InvalidScores(format!(
                "every row must hold {d} scores"
            )));
        }
        let out_of_range = perspective_scores
            .iter()
            .flatten()
            .chain(baseline_scores.iter())
            .find(|s| !range.contains(**s));
        if let Some(s) = out_of_range {
            return Err(DomainError::InvalidScores(format!(
                "score {s} outside [{}, {}]",
                range.low(),
                range.high()
            )));
        }
        Ok(Self {
            concept: concept.into(),
            question_ids,
            perspective_scores,
            baseline_scores,
        })
    }

    pub fn concept(&self) -> &str {
        &self.concept
    }

    pub fn question_ids(&self) -> &[String] {
        &self.question_ids
    }

    /// Number of perspectives (rows of the score matrix).
    pub fn perspectives(&self) -> usize {
        self.perspective_scores.len()
    }

    /// Number of questions.
    pub fn questions(&self) -> usize {
        self.question_ids.len()
    }

    pub fn perspective_scores(&self) -> &[Vec<f64>] {
        &self.perspective_scores
    }

    pub fn baseline_scores(&self) -> &[f64] {
        &self.baseline_scores
    }
}
