//! Response generation under fitted perspective weights.
//!
//! Sampled mode draws one perspective per question by weight and answers
//! under its system prompt. Aggregated mode draws `k` such samples and asks
//! an aggregator to merge them. Normal mode answers with no system prompt,
//! and single-perspective mode always uses one named perspective.

mod backend;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::domain::{
    Benchmark, GenerationMode, GenerationRecord, PerspectiveRegistry, Question, Split, Weights,
};
use crate::rng::{derive_seed, SeededRng};

pub use backend::{
    parse_completion, Backend, BackendConfig, BackendError, BackendKind, CompletionRequest,
    HttpBackend, MockBackend, MockFixture, AGGREGATOR_PERSONA, NORMAL_PERSONA,
};

/// Aggregated mode samples this many responses by default.
pub const DEFAULT_K: usize = 3;

pub const DEFAULT_AGGREGATION_SYSTEM_PROMPT: &str =
    include_str!("../../templates/aggregation_system.txt");
pub const DEFAULT_AGGREGATION_TEMPLATE: &str = include_str!("../../templates/aggregation.txt");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GenerationError {
    #[error("question `{question}`: {source}")]
    Backend {
        question: String,
        #[source]
        source: BackendError,
    },
    #[error("aggregated generation needs k >= 1")]
    ZeroSamples,
    #[error("no weights for concept `{0}`")]
    MissingWeights(String),
    #[error("weights for concept `{concept}` have {got} entries, registry has {expected}")]
    WeightMismatch {
        concept: String,
        expected: usize,
        got: usize,
    },
    #[error("unknown perspective `{0}`")]
    UnknownPerspective(String),
    #[error("aggregation template: {0}")]
    Template(String),
}

/// Draws an index with probability `weights[i]` by inverse CDF: one uniform
/// draw `u` in [0, 1), then the first index whose cumulative weight exceeds
/// `u`. Rounding slack at the top goes to the last index with positive
/// weight.
pub fn sample_perspective(weights: &Weights, rng: &mut SeededRng) -> usize {
    let u = rng.next_unit();
    let mut cumulative = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        cumulative += w;
        if u < cumulative {
            return i;
        }
    }
    weights
        .iter()
        .rposition(|&w| w > 0.0)
        .unwrap_or(weights.len() - 1)
}

/// System prompt plus a user-prompt template for the aggregation call. The
/// template must contain `{samples}` and may contain `{question}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AggregationTemplate {
    system_prompt: String,
    user_template: String,
    hash: String,
}

impl AggregationTemplate {
    pub fn new(
        system_prompt: impl Into<String>,
        user_template: impl Into<String>,
    ) -> Result<Self, GenerationError> {
        let system_prompt = system_prompt.into();
        let user_template = user_template.into();
        if !user_template.contains("{samples}") {
            return Err(GenerationError::Template("missing `{samples}` slot".into()));
        }
        let mut hasher = Sha256::new();
        hasher.update(system_prompt.as_bytes());
        hasher.update([0u8]);
        hasher.update(user_template.as_bytes());
        let hash = hex::encode(hasher.finalize());
        Ok(Self {
            system_prompt,
            user_template,
            hash,
        })
    }

    pub fn builtin() -> Self {
        Self::new(
            DEFAULT_AGGREGATION_SYSTEM_PROMPT,
            DEFAULT_AGGREGATION_TEMPLATE,
        )
        .expect("shipped template is valid")
    }

    /// Reads a user template file and pairs it with the shipped system prompt.
    pub fn load(path: &Path) -> Result<Self, GenerationError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GenerationError::Template(format!("{}: {e}", path.display())))?;
        Self::new(DEFAULT_AGGREGATION_SYSTEM_PROMPT, text)
    }

    pub fn system_prompt(&self) -> &str {
        &self.system_prompt
    }

    /// Hex SHA-256 of the system prompt and user template.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    /// Fills the template; samples are numbered in sampling order.
    pub fn render(&self, question: &str, samples: &[String]) -> String {
        let listed = samples
            .iter()
            .enumerate()
            .map(|(i, s)| format!("Candidate {}:\n{}", i + 1, s.trim()))
            .collect::<Vec<_>>()
            .join("\n\n");
        self.user_template
            .replace("{question}", question)
            .replace("{samples}", &listed)
    }
}

/// Backends and prompts shared by every generation call.
#[derive(Clone, Copy)]
pub struct Generator<'a> {
    pub registry: &'a PerspectiveRegistry,
    pub backend: &'a dyn Backend,
    /// Backend for the aggregation call; usually the same as `backend`.
    pub aggregator: &'a dyn Backend,
    pub template: &'a AggregationTemplate,
    /// System prompt for normal mode; empty means none is sent.
    pub normal_system_prompt: &'a str,
}

impl<'a> Generator<'a> {
    pub fn new(
        registry: &'a PerspectiveRegistry,
        backend: &'a dyn Backend,
        template: &'a AggregationTemplate,
    ) -> Self {
        Self {
            registry,
            backend,
            aggregator: backend,
            template,
            normal_system_prompt: "",
        }
    }

    fn ask(&self, question: &Question, index: usize) -> Result<(String, String), GenerationError> {
        let perspective = self.registry.get(index).expect("index within registry");
        let text = call(
            self.backend,
            question,
            &perspective.name,
            &perspective.system_prompt,
            &question.text,
            &[],
        )?;
        Ok((perspective.name.clone(), text))
    }

    fn check_weights(&self, question: &Question, weights: &Weights) -> Result<(), GenerationError> {
        if weights.len() != self.registry.len() {
            return Err(GenerationError::WeightMismatch {
                concept: question.concept.clone(),
                expected: self.registry.len(),
                got: weights.len(),
            });
        }
        Ok(())
    }

    pub fn generate_sampled(
        &self,
        question: &Question,
        weights: &Weights,
        seed: u64,
    ) -> Result<GenerationRecord, GenerationError> {
        self.check_weights(question, weights)?;
        let mut rng = SeededRng::new(seed);
        let (name, text) = self.ask(question, sample_perspective(weights, &mut rng))?;
        Ok(record(
            question,
            GenerationMode::Sampled,
            vec![name],
            vec![text.clone()],
            text,
            seed,
            None,
        ))
    }

    pub fn generate_aggregated(
        &self,
        question: &Question,
        weights: &Weights,
        k: usize,
        seed: u64,
    ) -> Result<GenerationRecord, GenerationError> {
        if k == 0 {
            return Err(GenerationError::ZeroSamples);
        }
        self.check_weights(question, weights)?;
        let mut rng = SeededRng::new(seed);
        let mut names = Vec::with_capacity(k);
        let mut samples = Vec::with_capacity(k);
        for _ in 0..k {
            let (name, text) = self.ask(question, sample_perspective(weights, &mut rng))?;
            names.push(name);
            samples.push(text);
        }
        let user_prompt = self.template.render(&question.text, &samples);
        let final_text = call(
            self.aggregator,
            question,
            AGGREGATOR_PERSONA,
            self.template.system_prompt(),
            &user_prompt,
            &samples,
        )?;
        Ok(record(
            question,
            GenerationMode::Aggregated,
            names,
            samples,
            final_text,
            seed,
            Some(self.template.hash().to_string()),
        ))
    }

    pub fn generate_normal(
        &self,
        question: &Question,
        seed: u64,
    ) -> Result<GenerationRecord, GenerationError> {
        let text = call(
            self.backend,
            question,
            NORMAL_PERSONA,
            self.normal_system_prompt,
            &question.text,
            &[],
        )?;
        Ok(record(
            question,
            GenerationMode::Normal,
            vec![],
            vec![],
            text,
            seed,
            None,
        ))
    }

    pub fn generate_single(
        &self,
        question: &Question,
        perspective: &str,
        seed: u64,
    ) -> Result<GenerationRecord, GenerationError> {
        let index = self
            .registry
            .index_of(perspective)
            .ok_or_else(|| GenerationError::UnknownPerspective(perspective.to_string()))?;
        let (name, text) = self.ask(question, index)?;
        Ok(record(
            question,
            GenerationMode::SinglePerspective,
            vec![name],
            vec![text.clone()],
            text,
            seed,
            None,
        ))
    }
}

fn call(
    backend: &dyn Backend,
    question: &Question,
    persona: &str,
    system_prompt: &str,
    user_prompt: &str,
    samples: &[String],
) -> Result<String, GenerationError> {
    let request = CompletionRequest {
        persona,
        question_id: &question.id,
        system_prompt,
        user_prompt,
        samples,
    };
    let text = backend
        .complete(&request)
        .map_err(|source| GenerationError::Backend {
            question: question.id.clone(),
            source,
        })?;
    if text.trim().is_empty() {
        return Err(GenerationError::Backend {
            question: question.id.clone(),
            source: BackendError::Malformed("empty completion".into()),
        });
    }
    Ok(text)
}

fn record(
    question: &Question,
    mode: GenerationMode,
    chosen_perspectives: Vec<String>,
    sample_texts: Vec<String>,
    final_text: String,
    rng_seed_used: u64,
    template_hash: Option<String>,
) -> GenerationRecord {
    GenerationRecord {
        question_id: question.id.clone(),
        concept: question.concept.clone(),
        split: question.split,
        mode,
        chosen_perspectives,
        sample_texts,
        final_text,
        rng_seed_used,
        template_hash,
    }
}

/// One kind of record requested from [`generate_suite`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "perspective")]
pub enum SuiteMode {
    Sampled,
    Aggregated,
    Normal,
    Perspective(String),
}

impl SuiteMode {
    /// Label used in seeds and reports, e.g. `sampled` or `perspective:realist`.
    pub fn label(&self) -> String {
        match self {
            Self::Sampled => "sampled".into(),
            Self::Aggregated => "aggregated".into(),
            Self::Normal => "normal".into(),
            Self::Perspective(p) => format!("perspective:{p}"),
        }
    }

    /// Normal, sampled, aggregated and one single-perspective mode per
    /// registry entry.
    pub fn all(registry: &PerspectiveRegistry) -> Vec<SuiteMode> {
        let mut modes = vec![SuiteMode::Sampled, SuiteMode::Aggregated, SuiteMode::Normal];
        modes.extend(
            registry
                .iter()
                .map(|p| SuiteMode::Perspective(p.name.clone())),
        );
        modes
    }

    fn uses_weights(&self) -> bool {
        matches!(self, Self::Sampled | Self::Aggregated)
    }
}

/// Per-question seed, independent of iteration order.
pub fn question_seed(rng_seed: u64, question_id: &str, mode: &SuiteMode) -> u64 {
    derive_seed(rng_seed, &[question_id, &mode.label()])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteFailure {
    pub question_id: String,
    pub mode: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SuiteOutput {
    /// Ordered by (mode, question id).
    pub records: Vec<GenerationRecord>,
    pub failures: Vec<SuiteFailure>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteSpec<'a> {
    pub modes: &'a [SuiteMode],
    pub splits: &'a [Split],
    pub k: usize,
    pub rng_seed: u64,
}

/// Produces one record per (mode, question in the selected splits).
/// Backend failures are collected rather than aborting the run; records
/// are generated concurrently up to the backend's concurrency limit.
pub fn generate_suite(
    benchmark: &Benchmark,
    weights: &BTreeMap<String, Weights>,
    generator: &Generator<'_>,
    spec: &SuiteSpec<'_>,
) -> Result<SuiteOutput, GenerationError> {
    if spec.modes.contains(&SuiteMode::Aggregated) && spec.k == 0 {
        return Err(GenerationError::ZeroSamples);
    }
    let questions: Vec<&Question> = benchmark
        .questions()
        .iter()
        .filter(|q| spec.splits.contains(&q.split))
        .collect();
    let mut modes: Vec<&SuiteMode> = spec.modes.iter().collect();
    modes.sort();
    modes.dedup();
    for mode in &modes {
        if let SuiteMode::Perspective(p) = mode {
            if generator.registry.index_of(p).is_none() {
                return Err(GenerationError::UnknownPerspective(p.clone()));
            }
        }
    }
    if modes.iter().any(|m| m.uses_weights()) {
        for q in &questions {
            let w = weights
                .get(&q.concept)
                .ok_or_else(|| GenerationError::MissingWeights(q.concept.clone()))?;
            generator.check_weights(q, w)?;
        }
    }

    let mut jobs: Vec<(&SuiteMode, &Question)> = Vec::new();
    for mode in &modes {
        let mut qs = questions.clone();
        qs.sort_by(|a, b| a.id.cmp(&b.id));
        jobs.extend(qs.into_iter().map(|q| (*mode, q)));
    }

    let run = |(mode, question): (&SuiteMode, &Question)| {
        let seed = question_seed(spec.rng_seed, &question.id, mode);
        match mode {
            SuiteMode::Sampled => {
                generator.generate_sampled(question, &weights[&question.concept], seed)
            }
            SuiteMode::Aggregated => {
                generator.generate_aggregated(question, &weights[&question.concept], spec.k, seed)
            }
            SuiteMode::Normal => generator.generate_normal(question, seed),
            SuiteMode::Perspective(p) => generator.generate_single(question, p, seed),
        }
    };

    let slots: Vec<Mutex<Option<Result<GenerationRecord, GenerationError>>>> =
        jobs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = generator
        .backend
        .max_concurrency()
        .max(generator.aggregator.max_concurrency())
        .clamp(1, jobs.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&job) = jobs.get(i) else { break };
                *slots[i].lock().expect("slot lock") = Some(run(job));
            });
        }
    });

    let mut output = SuiteOutput::default();
    for ((mode, question), slot) in jobs.iter().zip(slots) {
        match slot
            .into_inner()
            .expect("slot lock")
            .expect("every job ran")
        {
            Ok(r) => output.records.push(r),
            Err(e) => output.failures.push(SuiteFailure {
                question_id: question.id.clone(),
                mode: mode.label(),
                error: e.to_string(),
            }),
        }
    }
    Ok(output)
}
