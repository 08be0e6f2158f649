//! Turns response texts into scalar feature scores and binned histograms.
//!
//! The default scorer counts lexicon hits:
//! `(positive - negative) / max(1, positive + negative)` is mapped affinely
//! from `[-1, 1]` onto the configured score range, so texts without any
//! hit land on the midpoint. An HTTP adapter lets a model-based scorer
//! stand in for the lexicon.

mod lexicon;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Benchmark, DomainError, FeatureHistogram, FeatureScores, ScoreRange, Split};
use crate::mitigator::ConceptData;

pub use lexicon::{tokenize, Lexicon, Polarity, DEFAULT_LEXICON};

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("cannot score empty text")]
    EmptyText,
    #[error("lexicon {path}: {message}")]
    Lexicon { path: String, message: String },
    #[error("external scorer: {0}")]
    Transport(String),
    #[error("score {score} outside [{low}, {high}]")]
    OutOfRange { score: f64, low: f64, high: f64 },
    #[error("cannot build a histogram from zero scores")]
    NoScores,
    #[error("missing {kind} response for question `{question}`")]
    MissingResponse { kind: String, question: String },
    #[error("concept `{0}` has no decomposition questions")]
    EmptyConcept(String),
    #[error("invalid scorer config: {0}")]
    Config(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    #[default]
    Lexicon,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalScorerConfig {
    pub endpoint: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
}

fn default_timeout_secs() -> f64 {
    30.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScorerConfig {
    pub kind: ScorerKind,
    pub score_range: ScoreRange,
    pub bins: usize,
    pub lexicon_path: Option<PathBuf>,
    pub external: Option<ExternalScorerConfig>,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        Self {
            kind: ScorerKind::Lexicon,
            score_range: ScoreRange::unit(),
            bins: 10,
            lexicon_path: None,
            external: None,
        }
    }
}

impl ScorerConfig {
    pub fn validate(&self) -> Result<(), ScoringError> {
        if self.bins < 2 {
            return Err(ScoringError::Config("bins must be at least 2".into()));
        }
        if self.kind == ScorerKind::External && self.external.is_none() {
            return Err(ScoringError::Config(
                "external scorer needs an [external] endpoint".into(),
            ));
        }
        Ok(())
    }

    pub fn bin_edges(&self) -> Vec<f64> {
        self.score_range.uniform_edges(self.bins)
    }

    /// Instantiates the configured scorer. Relative lexicon paths resolve
    /// against `base_dir`.
    pub fn build(&self, base_dir: &Path) -> Result<Box<dyn Scorer>, ScoringError> {
        self.validate()?;
        match self.kind {
            ScorerKind::Lexicon => {
                let lexicon = match &self.lexicon_path {
                    Some(p) => Lexicon::load(&base_dir.join(p))?,
                    None => Lexicon::builtin(),
                };
                Ok(Box::new(LexiconScorer::new(lexicon, self.score_range)))
            }
            ScorerKind::External => {
                let cfg = self.external.as_ref().expect("validated");
                Ok(Box::new(ExternalScorer::new(cfg, self.score_range)?))
            }
        }
    }
}

/// Maps a text to a feature score inside [`Scorer::range`].
pub trait Scorer: Send + Sync {
    fn score(&self, text: &str) -> Result<f64, ScoringError>;
    fn range(&self) -> ScoreRange;
}

#[derive(Debug, Clone)]
pub struct LexiconScorer {
    lexicon: Lexicon,
    range: ScoreRange,
}

impl LexiconScorer {
    pub fn new(lexicon: Lexicon, range: ScoreRange) -> Self {
        Self { lexicon, range }
    }

    pub fn builtin(range: ScoreRange) -> Self {
        Self::new(Lexicon::builtin(), range)
    }
}

impl Scorer for LexiconScorer {
    fn score(&self, text: &str) -> Result<f64, ScoringError> {
        if text.trim().is_empty() {
            return Err(ScoringError::EmptyText);
        }
        let (pos, neg) = self.lexicon.count_hits(text);
        let polarity = (pos as f64 - neg as f64) / (pos + neg).max(1) as f64;
        let (low, high) = (self.range.low(), self.range.high());
        Ok((low + (polarity + 1.0) / 2.0 * (high - low)).clamp(low, high))
    }

    fn range(&self) -> ScoreRange {
        self.range
    }
}

/// Posts `{"text": …}` to an HTTP endpoint and reads `{"score": …}`.
#[derive(Debug)]
pub struct ExternalScorer {
    endpoint: String,
    client: reqwest::blocking::Client,
    range: ScoreRange,
}

#[derive(Deserialize)]
struct ExternalScore {
    score: f64,
}

impl ExternalScorer {
    pub fn new(cfg: &ExternalScorerConfig, range: ScoreRange) -> Result<Self, ScoringError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(cfg.timeout_secs))
            .build()
            .map_err(|e| ScoringError::Transport(e.to_string()))?;
        Ok(Self {
            endpoint: cfg.endpoint.clone(),
            client,
            range,
        })
    }
}

impl Scorer for ExternalScorer {
    fn score(&self, text: &str) -> Result<f64, ScoringError> {
        if text.trim().is_empty() {
            return Err(ScoringError::EmptyText);
        }
        let response = self
            .client
            .post(&self.endpoint)
            .json(&serde_json::json!({ "text": text }))
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(|e| ScoringError::Transport(e.to_string()))?;
        let body: ExternalScore = response
            .json()
            .map_err(|e| ScoringError::Transport(e.to_string()))?;
        if !self.range.contains(body.score) {
            return Err(ScoringError::OutOfRange {
                score: body.score,
                low: self.range.low(),
                high: self.range.high(),
            });
        }
        Ok(body.score)
    }

    fn range(&self) -> ScoreRange {
        self.range
    }
}

/// Bin index for `score` over ascending `edges`: interior edges belong to
/// the bin above them, the top edge to the last bin.
pub fn bin_index(edges: &[f64], score: f64) -> usize {
    let bins = edges.len() - 1;
    edges[1..bins].partition_point(|e| *e <= score)
}

pub fn build_histogram(
    scores: &[f64],
    config: &ScorerConfig,
) -> Result<FeatureHistogram, ScoringError> {
    if scores.is_empty() {
        return Err(ScoringError::NoScores);
    }
    let range = config.score_range;
    if let Some(&s) = scores.iter().find(|s| !range.contains(**s)) {
        return Err(ScoringError::OutOfRange {
            score: s,
            low: range.low(),
            high: range.high(),
        });
    }
    let edges = config.bin_edges();
    let mut counts = vec![0u64; config.bins];
    for &s in scores {
        counts[bin_index(&edges, s)] += 1;
    }
    Ok(FeatureHistogram::from_counts(edges, &counts)?)
}

/// Response texts feeding the scorer: baseline per question and
/// perspective per (perspective, question).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResponseSet {
    pub baseline: BTreeMap<String, String>,
    pub perspectives: BTreeMap<String, BTreeMap<String, String>>,
}

impl ResponseSet {
    /// Responses embedded in the benchmark file.
    pub fn from_benchmark(benchmark: &Benchmark) -> Self {
        let mut set = Self::default();
        for q in benchmark.questions() {
            if let Some(t) = benchmark.baseline_response(&q.id) {
                set.baseline.insert(q.id.clone(), t.to_string());
            }
            for p in benchmark.perspectives() {
                if let Some(t) = benchmark.perspective_response(&p.name, &q.id) {
                    set.perspectives
                        .entry(p.name.clone())
                        .or_default()
                        .insert(q.id.clone(), t.to_string());
                }
            }
        }
        set
    }

    fn perspective(&self, name: &str, question: &str) -> Option<&str> {
        self.perspectives
            .get(name)?
            .get(question)
            .map(String::as_str)
    }
}

/// Scores of one question under the baseline and every perspective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionScores {
    pub question_id: String,
    pub concept: String,
    pub split: Split,
    pub baseline: f64,
    /// Aligned to the perspective registry order.
    pub perspectives: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredBenchmark {
    /// Decomposition-split data per concept, ready for the mitigator.
    pub concepts: BTreeMap<String, ConceptData>,
    /// Validation-split score matrices per concept (concepts without
    /// validation questions are absent).
    pub validation: BTreeMap<String, FeatureScores>,
    /// Every scored question, ordered by question id.
    pub questions: Vec<QuestionScores>,
}

/// Scores every required response once and assembles per-concept
/// histograms and score matrices from the decomposition split.
pub fn score_benchmark(
    benchmark: &Benchmark,
    responses: &ResponseSet,
    scorer: &dyn Scorer,
    config: &ScorerConfig,
) -> Result<ScoredBenchmark, ScoringError> {
    let registry = benchmark.perspectives();
    let mut jobs: Vec<&str> = Vec::new();
    for q in benchmark.questions() {
        let baseline =
            responses
                .baseline
                .get(&q.id)
                .ok_or_else(|| ScoringError::MissingResponse {
                    kind: "baseline".into(),
                    question: q.id.clone(),
                })?;
        jobs.push(baseline);
        for p in registry {
            let text = responses.perspective(&p.name, &q.id).ok_or_else(|| {
                ScoringError::MissingResponse {
                    kind: format!("perspective `{}`", p.name),
                    question: q.id.clone(),
                }
            })?;
            jobs.push(text);
        }
    }
    let scored: Vec<f64> = jobs
        .par_iter()
        .map(|t| scorer.score(t))
        .collect::<Result<_, _>>()?;

    let stride = registry.len() + 1;
    let questions: Vec<QuestionScores> = benchmark
        .questions()
        .iter()
        .zip(scored.chunks(stride))
        .map(|(q, chunk)| QuestionScores {
            question_id: q.id.clone(),
            concept: q.concept.clone(),
            split: q.split,
            baseline: chunk[0],
            perspectives: chunk[1..].to_vec(),
        })
        .collect();

    assemble_scored(benchmark, questions, config)
}

/// Builds per-concept histograms and score matrices from already scored
/// questions. Only decomposition-split questions feed the histograms.
pub fn assemble_scored(
    benchmark: &Benchmark,
    questions: Vec<QuestionScores>,
    config: &ScorerConfig,
) -> Result<ScoredBenchmark, ScoringError> {
    let registry = benchmark.perspectives();
    if let Some(q) = questions
        .iter()
        .find(|q| q.perspectives.len() != registry.len())
    {
        return Err(ScoringError::MissingResponse {
            kind: format!(
                "{} perspective score(s), got {}",
                registry.len(),
                q.perspectives.len()
            ),
            question: q.question_id.clone(),
        });
    }
    for q in benchmark.questions() {
        if !questions.iter().any(|s| s.question_id == q.id) {
            return Err(ScoringError::MissingResponse {
                kind: "scored".into(),
                question: q.id.clone(),
            });
        }
    }
    let range = config.score_range;
    let matrix = |concept: &str, split: Split| -> Option<Result<FeatureScores, ScoringError>> {
        let rows: Vec<&QuestionScores> = questions
            .iter()
            .filter(|q| q.concept == concept && q.split == split)
            .collect();
        if rows.is_empty() {
            return None;
        }
        let ids = rows.iter().map(|q| q.question_id.clone()).collect();
        let per_perspective = (0..registry.len())
            .map(|i| rows.iter().map(|q| q.perspectives[i]).collect())
            .collect();
        let baseline = rows.iter().map(|q| q.baseline).collect();
        Some(FeatureScores::new(concept, ids, per_perspective, baseline, range).map_err(Into::into))
    };

    let mut concepts = BTreeMap::new();
    let mut validation = BTreeMap::new();
    for concept in benchmark.concepts() {
        let scores = matrix(concept, Split::Decomposition)
            .ok_or_else(|| ScoringError::EmptyConcept(concept.clone()))??;
        let components = scores
            .perspective_scores()
            .iter()
            .map(|row| build_histogram(row, config))
            .collect::<Result<_, _>>()?;
        let target = build_histogram(scores.baseline_scores(), config)?;
        concepts.insert(
            concept.clone(),
            ConceptData {
                components,
                target,
                scores,
            },
        );
        if let Some(v) = matrix(concept, Split::Validation) {
            validation.insert(concept.clone(), v?);
        }
    }
    Ok(ScoredBenchmark {
        concepts,
        validation,
        questions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scorer() -> LexiconScorer {
        LexiconScorer::builtin(ScoreRange::unit())
    }

    #[test]
    fn all_positive_text_saturates_high() {
        assert_eq!(
            scorer()
                .score("Brilliant, inspiring and excellent.")
                .unwrap(),
            1.0
        );
        let wide = LexiconScorer::builtin(ScoreRange::new(-1.0, 1.0).unwrap());
        assert_eq!(wide.score("great growth").unwrap(), 1.0);
    }

    #[test]
    fn text_without_hits_maps_to_midpoint() {
        assert_eq!(
            scorer()
                .score("The campus is located near the river.")
                .unwrap(),
            0.5
        );
        let shifted = LexiconScorer::builtin(ScoreRange::new(2.0, 4.0).unwrap());
        assert_eq!(shifted.score("Lectures start in October.").unwrap(), 3.0);
    }

    #[test]
    fn three_positive_one_negative_hit() {
        // (3 - 1) / 4 = 0.5 on [-1, 1] -> 0.75 on [0, 1]
        let s = scorer()
            .score("Strong research, great teaching, good housing, some risk.")
            .unwrap();
        assert_eq!(s, 0.75);
    }

    #[test]
    fn empty_text_is_an_error() {
        assert!(matches!(
            scorer().score("   "),
            Err(ScoringError::EmptyText)
        ));
    }

    #[test]
    fn missing_lexicon_file_is_an_error() {
        let cfg = ScorerConfig {
            lexicon_path: Some("does/not/exist.txt".into()),
            ..ScorerConfig::default()
        };
        assert!(matches!(
            cfg.build(Path::new(".")),
            Err(ScoringError::Lexicon { .. })
        ));
    }

    #[test]
    fn unreachable_external_scorer_reports_transport_error() {
        let cfg = ScorerConfig {
            kind: ScorerKind::External,
            external: Some(ExternalScorerConfig {
                endpoint: "http://127.0.0.1:9/score".into(),
                timeout_secs: 2.0,
            }),
            ..ScorerConfig::default()
        };
        let s = cfg.build(Path::new(".")).unwrap();
        assert!(matches!(s.score("good"), Err(ScoringError::Transport(_))));
    }

    #[test]
    fn histogram_boundary_placement() {
        let cfg = ScorerConfig {
            bins: 2,
            ..ScorerConfig::default()
        };
        let h = build_histogram(&[0.0, 0.5, 1.0], &cfg).unwrap();
        assert!((h.masses()[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((h.masses()[1] - 2.0 / 3.0).abs() < 1e-15);

        let cfg = ScorerConfig::default();
        let edges = cfg.bin_edges();
        for (i, e) in edges.iter().enumerate().take(10) {
            assert_eq!(bin_index(&edges, *e), i);
        }
        assert_eq!(bin_index(&edges, 1.0), 9);
        assert_eq!(bin_index(&edges, 0.2999999), 2);
    }

    #[test]
    fn histogram_point_mass_and_uniform_spread() {
        let cfg = ScorerConfig::default();
        let h = build_histogram(&[0.42; 7], &cfg).unwrap();
        assert_eq!(h.masses()[4], 1.0);
        let spread: Vec<f64> = (0..10).map(|i| i as f64 / 10.0 + 0.05).collect();
        let h = build_histogram(&spread, &cfg).unwrap();
        assert!(h.masses().iter().all(|m| (m - 0.1).abs() < 1e-15));
    }

    #[test]
    fn histogram_errors() {
        let cfg = ScorerConfig::default();
        assert!(matches!(
            build_histogram(&[], &cfg),
            Err(ScoringError::NoScores)
        ));
        assert!(matches!(
            build_histogram(&[1.5], &cfg),
            Err(ScoringError::OutOfRange { .. })
        ));
    }

    proptest::proptest! {
        #[test]
        fn histogram_conserves_mass(scores in proptest::collection::vec(0.0f64..=1.0, 1..200)) {
            let cfg = ScorerConfig::default();
            let h = build_histogram(&scores, &cfg).unwrap();
            proptest::prop_assert!((h.masses().iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let counts: f64 = h.masses().iter().map(|m| m * scores.len() as f64).sum();
            proptest::prop_assert!((counts - scores.len() as f64).abs() < 1e-6);
        }

        #[test]
        fn scoring_is_deterministic_and_in_range(text in "[a-z ,.!]{1,80}") {
            proptest::prop_assume!(!text.trim().is_empty());
            let s = scorer();
            let a = s.score(&text).unwrap();
            proptest::prop_assert_eq!(a, s.score(&text).unwrap());
            proptest::prop_assert!((0.0..=1.0).contains(&a));
        }
    }
}
