//! Domain types shared by every stage: perspectives, simplex weights,
//! feature histograms, per-question score matrices, hyperparameters,
//! benchmarks and the records produced along the way.

mod benchmark;
mod histogram;
mod hyperparams;
mod perspective;
mod records;
mod scores;
mod weights;

pub use benchmark::{validate_benchmark, Benchmark, BenchmarkDocument, Question, Split};
pub use histogram::{FeatureHistogram, ScoreRange};
pub use hyperparams::HyperParams;
pub use perspective::{Perspective, PerspectiveRegistry, HR_BASELINE_PERSONA};
pub use records::{
    AttemptSummary, CandidateOrigin, DecompositionResult, GenerationMode, GenerationRecord,
    ObjectiveBreakdown,
};
pub use scores::FeatureScores;
pub use weights::Weights;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("invalid histogram: {0}")]
    InvalidHistogram(String),
    #[error("invalid score range: {0}")]
    InvalidRange(String),
    #[error("invalid feature scores: {0}")]
    InvalidScores(String),
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperParams(String),
    #[error("invalid perspective: {0}")]
    InvalidPerspective(String),
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("unknown concept `{concept}` referenced by question `{question}`")]
    UnknownConcept { question: String, concept: String },
    #[error("unknown perspective `{0}` in response map")]
    UnknownPerspective(String),
    #[error("unknown question `{0}` in response map")]
    UnknownQuestion(String),
    #[error("benchmark declares no questions")]
    EmptyQuestionSet,
    #[error("invalid generation record: {0}")]
    InvalidRecord(String),
}
