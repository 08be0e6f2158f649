//! File formats, counterfactual expansion, evaluation and end-to-end
//! orchestration.
//!
//! A run is driven by a TOML manifest and proceeds through stages that
//! each leave an artifact in the output directory:
//!
//! | stage          | artifact                     |
//! |----------------|------------------------------|
//! | `perspectives` | `perspective_records.json`   |
//! | `score`        | `scores.json`                |
//! | `decompose`    | `weights.json` (`oracle.json`) |
//! | `generate`     | `records.json`               |
//! | `evaluate`     | `record_scores.json`, `report.json` |
//!
//! [`run_pipeline`] runs them all and adds `run_log.json`.

mod benchmark_file;
mod config;
mod evaluate;
mod format;
mod run;

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use benchmark_file::{
    expand_counterfactual, load_benchmark_file, BenchmarkFile, ExpansionError, QuestionTemplate,
    DEFAULT_PLACEHOLDER,
};
pub use config::{GenerationConfig, Overrides, RunContext, RunManifest, DEFAULT_ORACLE_STEP};
pub use evaluate::{
    evaluate, mpf_systems, perspective_system, ConceptMetrics, EvaluationConfig, EvaluationError,
    ReportCell, ScoredResponse,
};
pub use format::*;
pub use run::{
    run_pipeline, stage_decompose, stage_evaluate, stage_generate, stage_perspectives, stage_score,
    stage_sweep, ConceptWeights, EvaluationReport, OracleCheck, RecordsArtifact, RunLog,
    ScoresArtifact, WeightsArtifact, ORACLE_TOLERANCE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Load,
    Expand,
    Perspectives,
    Score,
    Decompose,
    Oracle,
    Generate,
    Evaluate,
    Sweep,
    Write,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Load => "load",
            Stage::Expand => "expand",
            Stage::Perspectives => "perspectives",
            Stage::Score => "score",
            Stage::Decompose => "decompose",
            Stage::Oracle => "oracle",
            Stage::Generate => "generate",
            Stage::Evaluate => "evaluate",
            Stage::Sweep => "sweep",
            Stage::Write => "write",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureKind {
    /// Bad input: manifest, benchmark, fixture or a missing prerequisite.
    Validation,
    /// A stage failed while processing valid input.
    Stage,
    /// The optimizer lost to the lattice oracle.
    OracleDominance,
}

#[derive(Debug, Clone, Error, PartialEq)]
#[error("[{stage}] {message}")]
pub struct PipelineError {
    pub stage: Stage,
    pub kind: FailureKind,
    pub message: String,
}

impl PipelineError {
    pub fn validation(stage: Stage, message: impl fmt::Display) -> Self {
        Self {
            stage,
            kind: FailureKind::Validation,
            message: message.to_string(),
        }
    }

    pub fn failure(stage: Stage, message: impl fmt::Display) -> Self {
        Self {
            stage,
            kind: FailureKind::Stage,
            message: message.to_string(),
        }
    }

    /// Process exit status: 1 validation, 2 stage failure, 3 oracle
    /// dominance violation.
    pub fn exit_code(&self) -> i32 {
        match self.kind {
            FailureKind::Validation => 1,
            FailureKind::Stage => 2,
            FailureKind::OracleDominance => 3,
        }
    }

    /// Re-tags the error with the stage that was running.
    pub fn at(mut self, stage: Stage) -> Self {
        self.stage = stage;
        self
    }

    fn encode(kind: &str, e: serde_json::Error) -> Self {
        Self::failure(Stage::Write, format!("encoding {kind}: {e}"))
    }

    fn decode(kind: &str, e: serde_json::Error) -> Self {
        Self::validation(Stage::Load, format!("{kind}: {e}"))
    }

    fn read(path: &Path, e: std::io::Error) -> Self {
        Self::validation(Stage::Load, format!("{}: {e}", path.display()))
    }

    fn write(path: &Path, e: std::io::Error) -> Self {
        Self::failure(Stage::Write, format!("{}: {e}", path.display()))
    }
}
