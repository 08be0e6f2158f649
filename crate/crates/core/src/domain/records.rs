use serde::{Deserialize, Serialize};

use super::{DomainError, HyperParams, Split, Weights};

/// Unscaled objective terms plus the scaled total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveBreakdown {
    pub kl: f64,
    pub calibration: f64,
    pub l2: f64,
    pub sparsity: f64,
    pub total: f64,
}

impl ObjectiveBreakdown {
    pub fn combine(kl: f64, calibration: f64, l2: f64, sparsity: f64, hp: &HyperParams) -> Self {
        let total =
            hp.lambda_kl * kl + hp.lambda_cal * calibration + hp.alpha * l2 + hp.beta * sparsity;
        Self {
            kl,
            calibration,
            l2,
            sparsity,
            total,
        }
    }
}

/// Where the winning candidate of a decomposition came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "index")]
pub enum CandidateOrigin {
    Restart(usize),
    /// Local solve started from the k-th best point of a coarse lattice.
    Lattice(usize),
    /// Local solve restricted to the face spanned by these perspectives.
    Face(Vec<usize>),
    Vertex(usize),
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptSummary {
    pub restart_index: usize,
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Optimized weights for one concept with the objective evaluated at them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionResult {
    pub concept: String,
    pub weights: Weights,
    pub objective_value: f64,
    pub breakdown: ObjectiveBreakdown,
    pub converged: bool,
    pub iterations_used: usize,
    /// Position of the winner among all candidates: the random restarts
    /// first, then lattice starts, faces, vertices and the uniform point.
    /// `origin` says which kind it is.
    pub restart_index: usize,
    pub origin: CandidateOrigin,
    pub attempts: Vec<AttemptSummary>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationMode {
    Sampled,
    Aggregated,
    Normal,
    SinglePerspective,
}

impl GenerationMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Sampled => "sampled",
            Self::Aggregated => "aggregated",
            Self::Normal => "normal",
            Self::SinglePerspective => "single_perspective",
        }
    }
}

/// One generated response with its provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub question_id: String,
    pub concept: String,
    pub split: Split,
    pub mode: GenerationMode,
    pub chosen_perspectives: Vec<String>,
    pub sample_texts: Vec<String>,
    pub final_text: String,
    pub rng_seed_used: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_hash: Option<String>,
}

impl GenerationRecord {
    /// Label of the system that produced this record, e.g. `mpf_sampled`
    /// or `perspective:cautious`.
    pub fn system_label(&self) -> String {
        match self.mode {
            GenerationMode::Sampled => "mpf_sampled".into(),
            GenerationMode::Aggregated => "mpf_aggregated".into(),
            GenerationMode::Normal => "normal".into(),
            GenerationMode::SinglePerspective => format!(
                "perspective:{}",
                self.chosen_perspectives
                    .first()
                    .map(String::as_str)
                    .unwrap_or("")
            ),
        }
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        let bad = |msg: String| {
            Err(DomainError::InvalidRecord(format!(
                "{}: {msg}",
                self.question_id
            )))
        };
        match self.mode {
            GenerationMode::Sampled | GenerationMode::SinglePerspective => {
                if self.chosen_perspectives.len() != 1 || self.sample_texts.len() != 1 {
                    return bad(format!(
                        "{} record needs exactly one perspective and one sample",
                        self.mode.as_str()
                    ));
                }
            }
            GenerationMode::Aggregated => {
                if self.sample_texts.is_empty()
                    || self.chosen_perspectives.len() != self.sample_texts.len()
                {
                    return bad(
                        "aggregated record needs k >= 1 samples, one perspective each".into(),
                    );
                }
                if self.template_hash.is_none() {
                    return bad("aggregated record lacks the aggregation template hash".into());
                }
            }
            GenerationMode::Normal => {
                if !self.chosen_perspectives.is_empty() {
                    return bad("normal record must not name a perspective".into());
                }
            }
        }
        if self.final_text.is_empty() {
            return bad("empty final text".into());
        }
        Ok(())
    }
}
