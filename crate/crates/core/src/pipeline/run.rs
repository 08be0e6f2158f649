//! Pipeline stages and their artifacts.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::{
    Benchmark, DecompositionResult, GenerationRecord, HyperParams, ScoreRange, Split, Weights,
};
use crate::generation::{
    generate_suite, Backend, BackendError, CompletionRequest, GenerationError, Generator,
    SuiteFailure, SuiteMode, SuiteSpec,
};
use crate::mitigator::{
    decompose_benchmark, grid_search_oracle, sweep, sweep_table, MitigatorError, SweepRow,
    MAX_ORACLE_PERSPECTIVES,
};
use crate::scoring::{
    assemble_scored, score_benchmark, QuestionScores, ResponseSet, ScoredBenchmark, ScoringError,
};

use super::{
    evaluate, mpf_systems, perspective_system, read_artifact, write_artifact, EvaluationConfig,
    PipelineError, ReportCell, RunContext, ScoredResponse, Stage,
};

/// Largest accepted excess of the optimizer's objective over the oracle's.
pub const ORACLE_TOLERANCE: f64 = 1e-3;

const PERSPECTIVE_RECORDS: &str = "perspective_records.json";
const SCORES: &str = "scores.json";
const WEIGHTS: &str = "weights.json";
const ORACLE: &str = "oracle.json";
const RECORDS: &str = "records.json";
const RECORD_SCORES: &str = "record_scores.json";
const REPORT: &str = "report.json";
const RUN_LOG: &str = "run_log.json";
const SWEEP: &str = "sweep.tsv";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RecordsArtifact {
    pub records: Vec<GenerationRecord>,
    #[serde(default)]
    pub failures: Vec<SuiteFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoresArtifact {
    pub perspectives: Vec<String>,
    pub score_range: ScoreRange,
    pub bin_edges: Vec<f64>,
    pub questions: Vec<QuestionScores>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptWeights {
    #[serde(flatten)]
    pub result: DecompositionResult,
    /// The questions the weights were fitted on.
    pub decomposition_questions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsArtifact {
    pub perspectives: Vec<String>,
    pub hyperparams: HyperParams,
    pub concepts: BTreeMap<String, ConceptWeights>,
}

impl WeightsArtifact {
    pub fn weights(&self) -> BTreeMap<String, Weights> {
        self.concepts
            .iter()
            .map(|(c, w)| (c.clone(), w.result.weights.clone()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCheck {
    pub optimized: f64,
    pub oracle: f64,
    /// Best lattice point.
    pub weights: Weights,
    pub evaluated: usize,
    pub step: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub seed: u64,
    pub config_hash: String,
    pub bin_edges: Vec<f64>,
    pub smoothing_epsilon: f64,
    pub splits: Vec<Split>,
    pub systems: Vec<String>,
    pub cells: Vec<ReportCell>,
}

impl EvaluationReport {
    pub fn cell(&self, split: Split, system: &str) -> Option<&ReportCell> {
        self.cells
            .iter()
            .find(|c| c.split == split && c.system == system)
    }

    /// Plain-text table of the headline and pooled metrics.
    pub fn table(&self) -> String {
        let width = self
            .systems
            .iter()
            .map(String::len)
            .max()
            .unwrap_or(6)
            .max(6);
        let mut out = format!(
            "{:<13}  {:<width$}  {:>10}  {:>11}  {:>10}  {:>11}\n",
            "split", "system", "kl", "calibration", "kl_pooled", "cal_pooled"
        );
        for c in &self.cells {
            out.push_str(&format!(
                "{:<13}  {:<width$}  {:>10.4}  {:>11.4}  {:>10.4}  {:>11.4}\n",
                c.split.as_str(),
                c.system,
                c.kl,
                c.calibration,
                c.kl_pooled,
                c.calibration_pooled
            ));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub stage: Stage,
    pub message: String,
}

/// Reproducibility log of a full run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
    pub input_hashes: BTreeMap<String, String>,
    pub completed_stages: Vec<Stage>,
    /// SHA-256 of every artifact written, keyed by file name.
    pub artifacts: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<RunFailure>,
}

fn scoring_error(stage: Stage, e: ScoringError) -> PipelineError {
    match e {
        ScoringError::Transport(_) | ScoringError::EmptyText | ScoringError::OutOfRange { .. } => {
            PipelineError::failure(stage, e)
        }
        _ => PipelineError::validation(stage, e),
    }
}

fn mitigator_error(stage: Stage, e: MitigatorError) -> PipelineError {
    match e {
        MitigatorError::MissingConcept(_)
        | MitigatorError::RegistryMismatch { .. }
        | MitigatorError::NonDecompositionQuestion { .. }
        | MitigatorError::InvalidGrid(_)
        | MitigatorError::InvalidStep(_)
        | MitigatorError::TooManyPerspectives { .. }
        | MitigatorError::TooFewPerspectives(_) => PipelineError::validation(stage, e),
        _ => PipelineError::failure(stage, e),
    }
}

fn generation_error(stage: Stage, e: GenerationError) -> PipelineError {
    match e {
        GenerationError::Backend { .. } => PipelineError::failure(stage, e),
        _ => PipelineError::validation(stage, e),
    }
}

fn failures_error(stage: Stage, failures: &[SuiteFailure], file: &str) -> PipelineError {
    let first = &failures[0];
    PipelineError::failure(
        stage,
        format!(
            "{} generation(s) failed, see {file}; first: {} ({}): {}",
            failures.len(),
            first.question_id,
            first.mode,
            first.error
        ),
    )
}

fn check_registry(ctx: &RunContext, names: &[String], file: &str) -> Result<(), PipelineError> {
    let registry: Vec<String> = ctx
        .benchmark
        .perspectives()
        .names()
        .into_iter()
        .map(String::from)
        .collect();
    if registry != names {
        return Err(PipelineError::validation(
            Stage::Load,
            format!("{file} was produced for perspectives {names:?}, the benchmark declares {registry:?}"),
        ));
    }
    Ok(())
}

/// Reads an intermediate artifact, naming the command that produces it
/// when it is missing.
fn read_stage_artifact<T: serde::de::DeserializeOwned>(
    ctx: &RunContext,
    file: &str,
    kind: &str,
    producer: &str,
) -> Result<T, PipelineError> {
    let path = ctx.output_path(file);
    if !path.exists() {
        return Err(PipelineError::validation(
            Stage::Load,
            format!("{} not found; run `mpf {producer}` first", path.display()),
        ));
    }
    read_artifact(&path, kind)
}

impl RunContext {
    pub fn read_perspective_records(&self) -> Result<RecordsArtifact, PipelineError> {
        read_stage_artifact(self, PERSPECTIVE_RECORDS, "records", "score")
    }

    pub fn read_scores(&self) -> Result<ScoresArtifact, PipelineError> {
        read_stage_artifact(self, SCORES, "scores", "score")
    }

    pub fn read_weights(&self) -> Result<WeightsArtifact, PipelineError> {
        read_stage_artifact(self, WEIGHTS, "weights", "decompose")
    }

    pub fn read_records(&self) -> Result<RecordsArtifact, PipelineError> {
        read_stage_artifact(self, RECORDS, "records", "generate")
    }

    fn write<T: Serialize>(&self, file: &str, kind: &str, body: &T) -> Result<(), PipelineError> {
        self.ensure_output_dir()?;
        write_artifact(&self.output_path(file), kind, body)
    }
}

/// Serves perspective responses embedded in the benchmark and forwards
/// everything else.
struct Prefilled<'a> {
    benchmark: &'a Benchmark,
    inner: &'a dyn Backend,
}

impl Backend for Prefilled<'_> {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, BackendError> {
        match self
            .benchmark
            .perspective_response(request.persona, request.question_id)
        {
            Some(text) => Ok(text.to_string()),
            None => self.inner.complete(request),
        }
    }

    fn max_concurrency(&self) -> usize {
        self.inner.max_concurrency()
    }
}

/// Produces one single-perspective record per (perspective, question) on
/// both splits, taking texts from the benchmark where it has them.
pub fn stage_perspectives(ctx: &RunContext) -> Result<RecordsArtifact, PipelineError> {
    let stage = Stage::Perspectives;
    let backend = ctx.backend()?;
    let prefilled = Prefilled {
        benchmark: &ctx.benchmark,
        inner: backend.as_ref(),
    };
    let registry = ctx.benchmark.perspectives();
    let generator = Generator::new(registry, &prefilled, &ctx.template);
    let modes: Vec<SuiteMode> = registry
        .iter()
        .map(|p| SuiteMode::Perspective(p.name.clone()))
        .collect();
    let spec = SuiteSpec {
        modes: &modes,
        splits: &Split::ALL,
        k: 1,
        rng_seed: ctx.manifest.seed,
    };
    let out = generate_suite(&ctx.benchmark, &BTreeMap::new(), &generator, &spec)
        .map_err(|e| generation_error(stage, e))?;
    let artifact = RecordsArtifact {
        records: out.records,
        failures: out.failures,
    };
    ctx.write(PERSPECTIVE_RECORDS, "records", &artifact)?;
    if !artifact.failures.is_empty() {
        return Err(failures_error(
            stage,
            &artifact.failures,
            PERSPECTIVE_RECORDS,
        ));
    }
    Ok(artifact)
}

/// Scores the baseline and every perspective response.
pub fn stage_score(
    ctx: &RunContext,
    perspective_records: &RecordsArtifact,
) -> Result<ScoresArtifact, PipelineError> {
    let stage = Stage::Score;
    let mut responses = ResponseSet {
        baseline: ResponseSet::from_benchmark(&ctx.benchmark).baseline,
        perspectives: BTreeMap::new(),
    };
    for r in &perspective_records.records {
        if let Some(p) = r.chosen_perspectives.first() {
            responses
                .perspectives
                .entry(p.clone())
                .or_default()
                .insert(r.question_id.clone(), r.final_text.clone());
        }
    }
    let scorer = ctx.scorer()?;
    let scored = score_benchmark(
        &ctx.benchmark,
        &responses,
        scorer.as_ref(),
        &ctx.scorer_config,
    )
    .map_err(|e| scoring_error(stage, e))?;
    let artifact = ScoresArtifact {
        perspectives: ctx
            .benchmark
            .perspectives()
            .names()
            .into_iter()
            .map(String::from)
            .collect(),
        score_range: ctx.scorer_config.score_range,
        bin_edges: ctx.scorer_config.bin_edges(),
        questions: scored.questions,
    };
    ctx.write(SCORES, "scores", &artifact)?;
    // Later stages see the rounded values on disk, as they would when run alone.
    ctx.read_scores()
}

fn assemble(
    ctx: &RunContext,
    scores: &ScoresArtifact,
    stage: Stage,
) -> Result<ScoredBenchmark, PipelineError> {
    check_registry(ctx, &scores.perspectives, SCORES)?;
    if scores.bin_edges != ctx.scorer_config.bin_edges() {
        return Err(PipelineError::validation(
            stage,
            format!("{SCORES} uses different histogram bins than the manifest; rerun `mpf score`"),
        ));
    }
    assemble_scored(&ctx.benchmark, scores.questions.clone(), &ctx.scorer_config)
        .map_err(|e| scoring_error(stage, e))
}

/// Fits weights per concept. With `oracle_check`, also compares every
/// concept against the lattice oracle and fails with an oracle-dominance
/// error if the optimizer loses by more than [`ORACLE_TOLERANCE`].
pub fn stage_decompose(
    ctx: &RunContext,
    scores: &ScoresArtifact,
    oracle_check: bool,
) -> Result<WeightsArtifact, PipelineError> {
    let stage = Stage::Decompose;
    let scored = assemble(ctx, scores, stage)?;
    let n = ctx.benchmark.perspectives().len();
    if oracle_check && n > MAX_ORACLE_PERSPECTIVES {
        return Err(PipelineError::validation(
            Stage::Oracle,
            format!("the oracle supports at most {MAX_ORACLE_PERSPECTIVES} perspectives, the benchmark has {n}"),
        ));
    }
    let results = decompose_benchmark(&ctx.benchmark, &scored.concepts, &ctx.hyperparams)
        .map_err(|e| mitigator_error(stage, e))?;
    let concepts = results
        .into_iter()
        .map(|(concept, result)| {
            let decomposition_questions = scored.concepts[&concept].scores.question_ids().to_vec();
            (
                concept,
                ConceptWeights {
                    result,
                    decomposition_questions,
                },
            )
        })
        .collect();
    let artifact = WeightsArtifact {
        perspectives: scores.perspectives.clone(),
        hyperparams: ctx.hyperparams.clone(),
        concepts,
    };
    ctx.write(WEIGHTS, "weights", &artifact)?;

    if oracle_check {
        let step = ctx.manifest.oracle_step;
        let checks: BTreeMap<String, OracleCheck> = scored
            .concepts
            .par_iter()
            .map(|(concept, d)| {
                let o =
                    grid_search_oracle(&d.components, &d.target, &d.scores, &ctx.hyperparams, step)
                        .map_err(|e| mitigator_error(Stage::Oracle, e))?;
                let optimized = artifact.concepts[concept].result.objective_value;
                Ok((
                    concept.clone(),
                    OracleCheck {
                        optimized,
                        oracle: o.objective,
                        weights: o.weights,
                        evaluated: o.evaluated,
                        step,
                        passed: optimized <= o.objective + ORACLE_TOLERANCE,
                    },
                ))
            })
            .collect::<Result<_, PipelineError>>()?;
        ctx.write(ORACLE, "oracle", &serde_json::json!({ "concepts": checks }))?;
        if let Some((concept, c)) = checks.iter().find(|(_, c)| !c.passed) {
            return Err(PipelineError {
                stage: Stage::Oracle,
                kind: super::FailureKind::OracleDominance,
                message: format!(
                    "concept `{concept}`: optimizer objective {} exceeds oracle {} by more than {ORACLE_TOLERANCE}",
                    c.optimized, c.oracle
                ),
            });
        }
    }
    Ok(artifact)
}

/// Generates sampled, aggregated and normal records for the configured
/// splits.
pub fn stage_generate(
    ctx: &RunContext,
    weights: &WeightsArtifact,
) -> Result<RecordsArtifact, PipelineError> {
    let stage = Stage::Generate;
    check_registry(ctx, &weights.perspectives, WEIGHTS)?;
    let backend = ctx.backend()?;
    let aggregator = ctx.aggregator_backend()?;
    let mut generator = Generator::new(
        ctx.benchmark.perspectives(),
        backend.as_ref(),
        &ctx.template,
    );
    if let Some(a) = &aggregator {
        generator.aggregator = a.as_ref();
    }
    generator.normal_system_prompt = &ctx.manifest.generation.normal_system_prompt;
    let spec = SuiteSpec {
        modes: &[SuiteMode::Sampled, SuiteMode::Aggregated, SuiteMode::Normal],
        splits: &ctx.manifest.generation.splits,
        k: ctx.manifest.generation.k,
        rng_seed: ctx.manifest.seed,
    };
    let out = generate_suite(&ctx.benchmark, &weights.weights(), &generator, &spec)
        .map_err(|e| generation_error(stage, e))?;
    let artifact = RecordsArtifact {
        records: out.records,
        failures: out.failures,
    };
    ctx.write(RECORDS, "records", &artifact)?;
    if !artifact.failures.is_empty() {
        return Err(failures_error(stage, &artifact.failures, RECORDS));
    }
    Ok(artifact)
}

/// Scores the generated records and builds the report over every
/// perspective, the normal baseline and both fusion modes.
pub fn stage_evaluate(
    ctx: &RunContext,
    scores: &ScoresArtifact,
    records: &RecordsArtifact,
) -> Result<EvaluationReport, PipelineError> {
    let stage = Stage::Evaluate;
    check_registry(ctx, &scores.perspectives, SCORES)?;
    let scorer = ctx.scorer()?;
    let mut responses: Vec<ScoredResponse> = records
        .records
        .par_iter()
        .map(|r| {
            let score = scorer
                .score(&r.final_text)
                .map_err(|e| scoring_error(stage, e))?;
            Ok(ScoredResponse {
                question_id: r.question_id.clone(),
                concept: r.concept.clone(),
                split: r.split,
                system: r.system_label(),
                score,
            })
        })
        .collect::<Result<_, PipelineError>>()?;
    let mut baseline = BTreeMap::new();
    for q in &scores.questions {
        baseline.insert(q.question_id.clone(), q.baseline);
        for (name, &score) in scores.perspectives.iter().zip(&q.perspectives) {
            responses.push(ScoredResponse {
                question_id: q.question_id.clone(),
                concept: q.concept.clone(),
                split: q.split,
                system: perspective_system(name),
                score,
            });
        }
    }
    responses.sort_by(|a, b| (&a.system, &a.question_id).cmp(&(&b.system, &b.question_id)));
    ctx.write(
        RECORD_SCORES,
        "record_scores",
        &serde_json::json!({ "responses": responses }),
    )?;

    let mut systems: Vec<String> = scores
        .perspectives
        .iter()
        .map(|p| perspective_system(p))
        .collect();
    systems.extend(mpf_systems().map(String::from));
    let mut splits = ctx.manifest.generation.splits.clone();
    splits.sort();
    splits.dedup();
    let config = EvaluationConfig {
        bin_edges: scores.bin_edges.clone(),
        smoothing_epsilon: ctx.hyperparams.smoothing_epsilon,
    };
    let cells = evaluate(
        &responses,
        &baseline,
        ctx.benchmark.questions(),
        &splits,
        &systems,
        &config,
    )
    .map_err(|e| PipelineError::failure(stage, e))?;
    let report = EvaluationReport {
        seed: ctx.manifest.seed,
        config_hash: ctx.config_hash(),
        bin_edges: config.bin_edges,
        smoothing_epsilon: config.smoothing_epsilon,
        splits,
        systems,
        cells,
    };
    ctx.write(REPORT, "report", &report)?;
    Ok(report)
}

/// Reruns the decomposition for every cell of the manifest's sweep grid
/// (the default grid if unset) and writes `sweep.tsv`.
pub fn stage_sweep(
    ctx: &RunContext,
    scores: &ScoresArtifact,
) -> Result<Vec<SweepRow>, PipelineError> {
    let stage = Stage::Sweep;
    let scored = assemble(ctx, scores, stage)?;
    let grid = ctx.manifest.sweep.clone().unwrap_or_default();
    let rows = sweep(&ctx.benchmark, &scored.concepts, &grid, &ctx.hyperparams)
        .map_err(|e| mitigator_error(stage, e))?;
    let table = sweep_table(&rows, ctx.benchmark.perspectives())
        .map_err(|e| PipelineError::failure(Stage::Write, e))?;
    ctx.ensure_output_dir()?;
    let path = ctx.output_path(SWEEP);
    std::fs::write(&path, table).map_err(|e| PipelineError::write(&path, e))?;
    Ok(rows)
}

fn hash_file(path: &Path) -> Result<String, PipelineError> {
    let bytes = std::fs::read(path).map_err(|e| PipelineError::read(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

/// Runs every stage in order and writes `run_log.json`, also when a stage
/// fails. Artifacts of completed stages are left in place.
pub fn run_pipeline(
    ctx: &RunContext,
    oracle_check: bool,
) -> Result<(EvaluationReport, RunLog), PipelineError> {
    ctx.ensure_output_dir()?;
    let mut completed = Vec::new();
    let outcome = (|| {
        let perspective_records = stage_perspectives(ctx)?;
        completed.push(Stage::Perspectives);
        let scores = stage_score(ctx, &perspective_records)?;
        completed.push(Stage::Score);
        let weights = stage_decompose(ctx, &scores, oracle_check)?;
        completed.push(Stage::Decompose);
        let records = stage_generate(ctx, &weights)?;
        completed.push(Stage::Generate);
        let report = stage_evaluate(ctx, &scores, &records)?;
        completed.push(Stage::Evaluate);
        Ok(report)
    })();

    let mut artifacts = BTreeMap::new();
    for file in [
        PERSPECTIVE_RECORDS,
        SCORES,
        WEIGHTS,
        ORACLE,
        RECORDS,
        RECORD_SCORES,
        REPORT,
    ] {
        let path = ctx.output_path(file);
        if path.exists() {
            artifacts.insert(file.to_string(), hash_file(&path)?);
        }
    }
    let log = RunLog {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: ctx.manifest.seed,
        config_hash: ctx.config_hash(),
        input_hashes: ctx.file_hashes.clone(),
        completed_stages: completed,
        artifacts,
        failure: outcome.as_ref().err().map(|e: &PipelineError| RunFailure {
            stage: e.stage,
            message: e.message.clone(),
        }),
    };
    ctx.write(RUN_LOG, "run_log", &log)?;
    outcome.map(|report| (report, log))
}
