//! Fits perspective weights per concept by minimizing the combined
//! objective over the probability simplex.
//!
//! [`optimize`] runs several Dirichlet-initialized local solves, then
//! polishes: local solves from the best points of a coarse simplex lattice,
//! local solves restricted to lower-dimensional faces, and plain
//! evaluation of every one-hot vertex and the uniform point. Each local
//! solve ends with a pattern search. The best candidate wins. The objective
//! is not smooth: the absolute values in the calibration term create kinks
//! with several local minima, and the nonzero count in the sparsity
//! penalty jumps at face boundaries. [`grid_search_oracle`] enumerates a
//! simplex lattice and is used to check the optimizer. [`sweep`] repeats the decomposition over a
//! hyperparameter grid.

mod local;
mod oracle;
mod sweep;

use std::collections::BTreeMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::domain::{
    AttemptSummary, Benchmark, CandidateOrigin, DecompositionResult, DomainError, FeatureHistogram,
    FeatureScores, HyperParams, Split, Weights,
};
use crate::metrics::{MetricsError, Objective};
use crate::rng::{derive_seed, SeededRng};

pub use oracle::{grid_search_oracle, OracleResult, MAX_ORACLE_PERSPECTIVES};
pub use sweep::{sweep, sweep_table, SweepGrid, SweepRow};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MitigatorError {
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("objective is not finite at {0:?}; check smoothing_epsilon")]
    NonFiniteObjective(Vec<f64>),
    #[error("need at least 2 perspectives, got {0}")]
    TooFewPerspectives(usize),
    #[error("grid oracle supports at most {max} perspectives, got {got}")]
    TooManyPerspectives { max: usize, got: usize },
    #[error("grid step {0} does not divide 1")]
    InvalidStep(f64),
    #[error("no scored data for concept `{0}`")]
    MissingConcept(String),
    #[error("concept `{concept}` has {got} perspective components, registry has {expected}")]
    RegistryMismatch {
        concept: String,
        expected: usize,
        got: usize,
    },
    #[error("concept `{concept}` uses question `{question}` outside the decomposition split")]
    NonDecompositionQuestion { concept: String, question: String },
    #[error("invalid sweep grid: {0}")]
    InvalidGrid(String),
}

/// Everything the objective needs for one concept.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptData {
    pub components: Vec<FeatureHistogram>,
    pub target: FeatureHistogram,
    pub scores: FeatureScores,
}

/// Objective values within this distance are treated as ties.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Lattice points evaluated when seeding the lattice starts, at most.
pub const LATTICE_BUDGET: usize = 2000;
/// Number of best lattice points used as local-solve starts.
pub const LATTICE_STARTS: usize = 4;

/// Finest lattice resolution whose point count fits [`LATTICE_BUDGET`].
fn lattice_divisions(n: usize) -> usize {
    let points = |m: usize| -> f64 {
        // C(m + n - 1, n - 1)
        (1..n).fold(1.0, |acc, i| acc * (m + i) as f64 / i as f64)
    };
    (1..=20)
        .rev()
        .find(|&m| points(m) <= LATTICE_BUDGET as f64)
        .unwrap_or(1)
}

/// The [`LATTICE_STARTS`] best lattice points, best first.
fn lattice_starts(n: usize, f: &dyn Fn(&[f64]) -> f64) -> Vec<Vec<f64>> {
    let m = lattice_divisions(n);
    let mut scored: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut counts = vec![0usize; n];
    oracle::visit(&mut counts, 0, m, &mut |counts| {
        let w: Vec<f64> = counts.iter().map(|&k| k as f64 / m as f64).collect();
        scored.push((f(&w), w));
    });
    scored.sort_by(|(va, a), (vb, b)| {
        va.total_cmp(vb)
            .then_with(|| b.partial_cmp(a).expect("finite lattice"))
    });
    scored
        .into_iter()
        .take(LATTICE_STARTS)
        .map(|(_, w)| w)
        .collect()
}

/// Above this many perspectives only two-perspective faces are polished.
pub const MAX_FULL_FACE_ENUMERATION: usize = 8;

/// Supports of the faces polished after the restarts: every proper subset
/// with at least two members for small `n`, otherwise every pair. Ordered
/// by size, then lexicographically.
fn polish_faces(n: usize) -> Vec<Vec<usize>> {
    let max_size = if n <= MAX_FULL_FACE_ENUMERATION {
        n - 1
    } else {
        2
    };
    let mut faces = Vec::new();
    for size in 2..=max_size {
        let mut current = Vec::with_capacity(size);
        push_combinations(n, size, 0, &mut current, &mut faces);
    }
    faces
}

fn push_combinations(
    n: usize,
    size: usize,
    start: usize,
    current: &mut Vec<usize>,
    out: &mut Vec<Vec<usize>>,
) {
    if current.len() == size {
        out.push(current.clone());
        return;
    }
    for i in start..n {
        current.push(i);
        push_combinations(n, size, i + 1, current, out);
        current.pop();
    }
}

#[derive(Debug, Clone)]
struct Candidate {
    weights: Weights,
    value: f64,
    origin: CandidateOrigin,
    converged: bool,
    iterations: usize,
}

/// True when `a` should replace `b`: lower objective, or a tie broken in
/// favour of the lexicographically larger weight vector.
fn improves(a_value: f64, a: &[f64], b_value: f64, b: &[f64]) -> bool {
    if a_value < b_value - TIE_TOLERANCE {
        return true;
    }
    if (a_value - b_value).abs() <= TIE_TOLERANCE {
        return a
            .iter()
            .zip(b)
            .find(|(x, y)| x != y)
            .is_some_and(|(x, y)| x > y);
    }
    false
}

pub fn optimize(
    components: &[FeatureHistogram],
    target: &FeatureHistogram,
    scores: &FeatureScores,
    hp: &HyperParams,
) -> Result<DecompositionResult, MitigatorError> {
    hp.validate()?;
    let objective = Objective::new(components, target, scores, hp)?;
    let n = objective.dimension();
    if n < 2 {
        return Err(MitigatorError::TooFewPerspectives(n));
    }
    if hp.nonzero_epsilon >= 1.0 / n as f64 {
        return Err(DomainError::InvalidHyperParams(format!(
            "nonzero_epsilon {} must be below 1/n = {}",
            hp.nonzero_epsilon,
            1.0 / n as f64
        ))
        .into());
    }
    let evaluate = |w: &[f64]| -> Result<f64, MitigatorError> {
        let v = objective.total(w);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(MitigatorError::NonFiniteObjective(w.to_vec()))
        }
    };

    let settings = local::LocalSettings {
        max_iterations: hp.max_iterations,
        tolerance: hp.tolerance,
        fd_step: hp.fd_step,
    };
    let mut candidates = Vec::new();
    let mut attempts = Vec::with_capacity(hp.restarts);
    for restart in 0..hp.restarts {
        let seed = derive_seed(hp.rng_seed, &["restart", &restart.to_string()]);
        let x0 = SeededRng::new(seed).dirichlet_uniform(n);
        let outcome = local::minimize(|w| objective.total(w), x0.clone(), settings, |_| {})
            .map_err(|_| MitigatorError::NonFiniteObjective(x0))?;
        let point = local::pattern_search(|w| objective.total(w), outcome.point);
        let weights = Weights::normalize(&point)?.floored(hp.nonzero_epsilon);
        let value = evaluate(&weights)?;
        attempts.push(AttemptSummary {
            restart_index: restart,
            objective: value,
            converged: outcome.converged,
            iterations: outcome.iterations,
        });
        candidates.push(Candidate {
            weights,
            value,
            origin: CandidateOrigin::Restart(restart),
            converged: outcome.converged,
            iterations: outcome.iterations,
        });
    }
    for (rank, x0) in lattice_starts(n, &|w| objective.total(w))
        .into_iter()
        .enumerate()
    {
        let outcome = local::minimize(|w| objective.total(w), x0.clone(), settings, |_| {})
            .map_err(|_| MitigatorError::NonFiniteObjective(x0))?;
        let point = local::pattern_search(|w| objective.total(w), outcome.point);
        let weights = Weights::normalize(&point)?.floored(hp.nonzero_epsilon);
        candidates.push(Candidate {
            value: evaluate(&weights)?,
            weights,
            origin: CandidateOrigin::Lattice(rank),
            converged: outcome.converged,
            iterations: outcome.iterations,
        });
    }
    for support in polish_faces(n) {
        let embed = |u: &[f64]| {
            let mut w = vec![0.0; n];
            for (&i, &ui) in support.iter().zip(u) {
                w[i] = ui;
            }
            w
        };
        let u0 = vec![1.0 / support.len() as f64; support.len()];
        let start = embed(&u0);
        let outcome = local::minimize(|u| objective.total(&embed(u)), u0, settings, |_| {})
            .map_err(|_| MitigatorError::NonFiniteObjective(start))?;
        let point = local::pattern_search(|u| objective.total(&embed(u)), outcome.point);
        let weights = Weights::normalize(&embed(&point))?.floored(hp.nonzero_epsilon);
        candidates.push(Candidate {
            value: evaluate(&weights)?,
            weights,
            origin: CandidateOrigin::Face(support),
            converged: outcome.converged,
            iterations: outcome.iterations,
        });
    }
    for vertex in 0..n {
        let weights = Weights::one_hot(n, vertex)?;
        let value = evaluate(&weights)?;
        candidates.push(Candidate {
            weights,
            value,
            origin: CandidateOrigin::Vertex(vertex),
            converged: true,
            iterations: 0,
        });
    }
    let uniform = Weights::uniform(n)?;
    candidates.push(Candidate {
        value: evaluate(&uniform)?,
        weights: uniform,
        origin: CandidateOrigin::Uniform,
        converged: true,
        iterations: 0,
    });

    let (restart_index, best) = candidates
        .into_iter()
        .enumerate()
        .reduce(|best, c| {
            if improves(c.1.value, &c.1.weights, best.1.value, &best.1.weights) {
                c
            } else {
                best
            }
        })
        .expect("at least one candidate");

    let breakdown = objective.evaluate(&best.weights);
    Ok(DecompositionResult {
        concept: scores.concept().to_string(),
        weights: best.weights,
        objective_value: breakdown.total,
        breakdown,
        converged: best.converged,
        iterations_used: best.iterations,
        restart_index,
        origin: best.origin,
        attempts,
    })
}

/// Optimizes every concept of `benchmark` independently. Concepts are
/// processed in parallel; the result map is ordered by concept.
pub fn decompose_benchmark(
    benchmark: &Benchmark,
    data: &BTreeMap<String, ConceptData>,
    hp: &HyperParams,
) -> Result<BTreeMap<String, DecompositionResult>, MitigatorError> {
    let n = benchmark.perspectives().len();
    for concept in benchmark.concepts() {
        let d = data
            .get(concept)
            .ok_or_else(|| MitigatorError::MissingConcept(concept.clone()))?;
        if d.components.len() != n {
            return Err(MitigatorError::RegistryMismatch {
                concept: concept.clone(),
                expected: n,
                got: d.components.len(),
            });
        }
        for id in d.scores.question_ids() {
            let in_split = benchmark
                .question(id)
                .is_some_and(|q| q.split == Split::Decomposition && &q.concept == concept);
            if !in_split {
                return Err(MitigatorError::NonDecompositionQuestion {
                    concept: concept.clone(),
                    question: id.clone(),
                });
            }
        }
    }
    benchmark
        .concepts()
        .par_iter()
        .map(|concept| {
            let d = &data[concept];
            let mut result = optimize(&d.components, &d.target, &d.scores, hp)?;
            result.concept = concept.clone();
            Ok((concept.clone(), result))
        })
        .collect()
}
