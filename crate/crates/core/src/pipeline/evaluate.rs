//! Alignment of generated responses with the baseline.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{FeatureHistogram, Question, Split};
use crate::metrics::{kl_divergence, MetricsError};
use crate::scoring::bin_index;

/// Report label of the responses produced under one perspective.
pub fn perspective_system(name: &str) -> String {
    format!("perspective:{name}")
}

/// Labels of the non-perspective systems, in report order.
pub fn mpf_systems() -> [&'static str; 3] {
    ["normal", "mpf_sampled", "mpf_aggregated"]
}

/// Feature score of one system's response to one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredResponse {
    pub question_id: String,
    pub concept: String,
    pub split: Split,
    pub system: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationConfig {
    pub bin_edges: Vec<f64>,
    pub smoothing_epsilon: f64,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EvaluationError {
    #[error("system `{system}` has no score for question `{question}`")]
    MissingScore { system: String, question: String },
    #[error("system `{system}` scored question `{question}` more than once")]
    DuplicateScore { system: String, question: String },
    #[error("no baseline score for question `{0}`")]
    MissingBaseline(String),
    #[error("split `{0}` has no questions to evaluate")]
    EmptySplit(&'static str),
    #[error("score {score} for question `{question}` lies outside the histogram range")]
    OutOfRange { question: String, score: f64 },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptMetrics {
    pub kl: f64,
    pub calibration: f64,
    pub questions: usize,
}

/// Metrics of one system on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCell {
    pub split: Split,
    pub system: String,
    /// Uniform average of the per-concept KL(system ‖ baseline).
    pub kl: f64,
    /// Uniform average of the per-concept mean |score − baseline|.
    pub calibration: f64,
    /// KL with all concepts' questions pooled into one histogram pair.
    pub kl_pooled: f64,
    /// Mean |score − baseline| over all questions of the split.
    pub calibration_pooled: f64,
    pub questions: usize,
    pub concepts: BTreeMap<String, ConceptMetrics>,
    /// Pooled histogram masses, for plotting.
    pub system_masses: Vec<f64>,
    pub baseline_masses: Vec<f64>,
}

fn histogram(scores: &[(&str, f64)], edges: &[f64]) -> Result<FeatureHistogram, EvaluationError> {
    let (low, high) = (edges[0], edges[edges.len() - 1]);
    let mut counts = vec![0u64; edges.len() - 1];
    for &(question, s) in scores {
        if !(low..=high).contains(&s) {
            return Err(EvaluationError::OutOfRange {
                question: question.to_string(),
                score: s,
            });
        }
        counts[bin_index(edges, s)] += 1;
    }
    FeatureHistogram::from_counts(edges.to_vec(), &counts)
        .map_err(|e| EvaluationError::Metrics(MetricsError::Domain(e)))
}

/// (question, system score, baseline score) triples of one group.
type Triples<'a> = Vec<(&'a str, f64, f64)>;

fn metrics_of(
    rows: &Triples<'_>,
    config: &EvaluationConfig,
) -> Result<(f64, f64, FeatureHistogram, FeatureHistogram), EvaluationError> {
    let system: Vec<(&str, f64)> = rows.iter().map(|&(q, s, _)| (q, s)).collect();
    let baseline: Vec<(&str, f64)> = rows.iter().map(|&(q, _, b)| (q, b)).collect();
    let p = histogram(&system, &config.bin_edges)?;
    let q = histogram(&baseline, &config.bin_edges)?;
    let kl = kl_divergence(&p, &q, config.smoothing_epsilon)?;
    let calibration = rows.iter().map(|&(_, s, b)| (s - b).abs()).sum::<f64>() / rows.len() as f64;
    Ok((kl, calibration, p, q))
}

/// One cell per (split, system), splits outer, systems in the given order.
/// Each system must have exactly one score for every question of each
/// split, and every such question needs a baseline score.
pub fn evaluate(
    responses: &[ScoredResponse],
    baseline: &BTreeMap<String, f64>,
    questions: &[Question],
    splits: &[Split],
    systems: &[String],
    config: &EvaluationConfig,
) -> Result<Vec<ReportCell>, EvaluationError> {
    let mut by_key: BTreeMap<(&str, &str), f64> = BTreeMap::new();
    for r in responses {
        if by_key
            .insert((r.system.as_str(), r.question_id.as_str()), r.score)
            .is_some()
        {
            return Err(EvaluationError::DuplicateScore {
                system: r.system.clone(),
                question: r.question_id.clone(),
            });
        }
    }
    let splits: BTreeSet<Split> = splits.iter().copied().collect();

    let mut cells = Vec::with_capacity(splits.len() * systems.len());
    for &split in &splits {
        let in_split: Vec<&Question> = questions.iter().filter(|q| q.split == split).collect();
        if in_split.is_empty() {
            return Err(EvaluationError::EmptySplit(split.as_str()));
        }
        for system in systems {
            let mut pooled: Triples<'_> = Vec::with_capacity(in_split.len());
            let mut per_concept: BTreeMap<&str, Triples<'_>> = BTreeMap::new();
            for q in &in_split {
                let s = *by_key
                    .get(&(system.as_str(), q.id.as_str()))
                    .ok_or_else(|| EvaluationError::MissingScore {
                        system: system.clone(),
                        question: q.id.clone(),
                    })?;
                let b = *baseline
                    .get(&q.id)
                    .ok_or_else(|| EvaluationError::MissingBaseline(q.id.clone()))?;
                pooled.push((&q.id, s, b));
                per_concept
                    .entry(&q.concept)
                    .or_default()
                    .push((&q.id, s, b));
            }
            let mut concepts = BTreeMap::new();
            for (concept, rows) in &per_concept {
                let (kl, calibration, _, _) = metrics_of(rows, config)?;
                concepts.insert(
                    concept.to_string(),
                    ConceptMetrics {
                        kl,
                        calibration,
                        questions: rows.len(),
                    },
                );
            }
            let count = concepts.len() as f64;
            let (kl_pooled, calibration_pooled, p, q) = metrics_of(&pooled, config)?;
            cells.push(ReportCell {
                split,
                system: system.clone(),
                kl: concepts.values().map(|c| c.kl).sum::<f64>() / count,
                calibration: concepts.values().map(|c| c.calibration).sum::<f64>() / count,
                kl_pooled,
                calibration_pooled,
                questions: pooled.len(),
                concepts,
                system_masses: p.masses().to_vec(),
                baseline_masses: q.masses().to_vec(),
            });
        }
    }
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::ScoreRange;

    fn q(id: &str, concept: &str, split: Split) -> Question {
        Question {
            id: id.into(),
            concept: concept.into(),
            text: String::new(),
            split,
        }
    }

    fn config() -> EvaluationConfig {
        EvaluationConfig {
            bin_edges: ScoreRange::unit().uniform_edges(10),
            smoothing_epsilon: 1e-9,
        }
    }

    fn responses(system: &str, scores: &[(&str, &str, f64)]) -> Vec<ScoredResponse> {
        scores
            .iter()
            .map(|(id, c, s)| ScoredResponse {
                question_id: id.to_string(),
                concept: c.to_string(),
                split: Split::Decomposition,
                system: system.into(),
                score: *s,
            })
            .collect()
    }

    #[test]
    fn identical_scores_give_zero_metrics() {
        let qs = [
            q("a", "c", Split::Decomposition),
            q("b", "c", Split::Decomposition),
        ];
        let base = BTreeMap::from([("a".to_string(), 0.15), ("b".to_string(), 0.72)]);
        let rs = responses("s", &[("a", "c", 0.15), ("b", "c", 0.72)]);
        let cells = evaluate(
            &rs,
            &base,
            &qs,
            &[Split::Decomposition],
            &["s".into()],
            &config(),
        )
        .unwrap();
        assert_eq!(cells.len(), 1);
        assert!(cells[0].kl.abs() < 1e-12);
        assert_eq!(cells[0].calibration, 0.0);
    }

    #[test]
    fn constant_shift_matches_hand_computation() {
        // Baseline: one score in each of bins 1 and 5. System: +0.1 moves
        // them to bins 2 and 6, disjoint from the baseline support.
        let qs = [
            q("a", "c", Split::Decomposition),
            q("b", "c", Split::Decomposition),
        ];
        let base = BTreeMap::from([("a".to_string(), 0.15), ("b".to_string(), 0.55)]);
        let rs = responses("s", &[("a", "c", 0.25), ("b", "c", 0.65)]);
        let eps: f64 = 1e-9;
        let cells = evaluate(
            &rs,
            &base,
            &qs,
            &[Split::Decomposition],
            &["s".into()],
            &config(),
        )
        .unwrap();
        assert!((cells[0].calibration - 0.1).abs() < 1e-12);
        // Each system bin carries (0.5 + eps) / (1 + 10 eps); its baseline
        // counterpart carries eps / (1 + 10 eps).
        let z = 1.0 + 10.0 * eps;
        let hot = (0.5 + eps) / z;
        let cold = eps / z;
        let expected = 2.0 * hot * (hot / cold).ln() + 2.0 * cold * (cold / hot).ln();
        assert!(
            (cells[0].kl - expected).abs() < 1e-9,
            "{} vs {expected}",
            cells[0].kl
        );
    }

    #[test]
    fn averaged_and_pooled_differ_across_concepts() {
        let qs = [
            q("a1", "A", Split::Decomposition),
            q("b1", "B", Split::Decomposition),
            q("b2", "B", Split::Decomposition),
        ];
        let base = BTreeMap::from([
            ("a1".to_string(), 0.5),
            ("b1".to_string(), 0.5),
            ("b2".to_string(), 0.5),
        ]);
        let rs = responses("s", &[("a1", "A", 0.8), ("b1", "B", 0.5), ("b2", "B", 0.5)]);
        let cells = evaluate(
            &rs,
            &base,
            &qs,
            &[Split::Decomposition],
            &["s".into()],
            &config(),
        )
        .unwrap();
        let c = &cells[0];
        assert!((c.calibration - 0.15).abs() < 1e-12);
        assert!((c.calibration_pooled - 0.1).abs() < 1e-12);
        assert_eq!(c.concepts["B"].calibration, 0.0);
        assert_eq!(c.questions, 3);
    }

    #[test]
    fn one_cell_per_split_and_system() {
        let qs = [
            q("a", "c", Split::Decomposition),
            q("v", "c", Split::Validation),
        ];
        let base = BTreeMap::from([("a".to_string(), 0.5), ("v".to_string(), 0.5)]);
        let mut rs = Vec::new();
        for sys in ["x", "y", "z"] {
            for (id, split) in [("a", Split::Decomposition), ("v", Split::Validation)] {
                rs.push(ScoredResponse {
                    question_id: id.into(),
                    concept: "c".into(),
                    split,
                    system: sys.into(),
                    score: 0.4,
                });
            }
        }
        let systems: Vec<String> = ["x", "y", "z"].map(String::from).to_vec();
        let cells = evaluate(&rs, &base, &qs, &Split::ALL, &systems, &config()).unwrap();
        assert_eq!(cells.len(), 6);
        assert_eq!(cells[3].split, Split::Validation);
        assert_eq!(cells[3].system, "x");
    }

    #[test]
    fn errors_surface() {
        let qs = [
            q("a", "c", Split::Decomposition),
            q("b", "c", Split::Decomposition),
        ];
        let base = BTreeMap::from([("a".to_string(), 0.5)]);
        let rs = responses("s", &[("a", "c", 0.5)]);
        let sys = ["s".to_string()];
        assert!(matches!(
            evaluate(&rs, &base, &qs, &[Split::Decomposition], &sys, &config()),
            Err(EvaluationError::MissingScore { .. })
        ));
        let rs = responses("s", &[("a", "c", 0.5), ("b", "c", 0.5)]);
        assert_eq!(
            evaluate(&rs, &base, &qs, &[Split::Decomposition], &sys, &config()),
            Err(EvaluationError::MissingBaseline("b".into()))
        );
        assert_eq!(
            evaluate(&rs, &base, &qs, &[Split::Validation], &sys, &config()),
            Err(EvaluationError::EmptySplit("validation"))
        );
        let mut dup = rs.clone();
        dup.push(rs[0].clone());
        assert!(matches!(
            evaluate(&dup, &base, &qs, &[Split::Decomposition], &sys, &config()),
            Err(EvaluationError::DuplicateScore { .. })
        ));
    }
}
