//! Objective terms for fitting perspective weights: mixture composition,
//! smoothed KL divergence, calibration error, the L2 pull toward uniform
//! weights and the sparsity penalty, plus their weighted combination.
//!
//! Weight arguments are plain slices so that the optimizer can evaluate
//! probe points that are slightly off the simplex (finite differences).
//! Every function here is pure.

use thiserror::Error;

use crate::domain::{
    DomainError, FeatureHistogram, FeatureScores, HyperParams, ObjectiveBreakdown,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("histograms do not share bin edges")]
    MismatchedBins,
    #[error("dimension mismatch: expected {expected} {what}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error(transparent)]
    Domain(#[from] DomainError),
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<(), MetricsError> {
    if expected != got {
        return Err(MetricsError::Dimension {
            what,
            expected,
            got,
        });
    }
    Ok(())
}

/// Mixture `Σ w_i P_i` over the shared bins of `components`.
pub fn compose_histogram(
    weights: &[f64],
    components: &[FeatureHistogram],
) -> Result<FeatureHistogram, MetricsError> {
    check_len("components", weights.len(), components.len())?;
    let first = components.first().ok_or(MetricsError::Dimension {
        what: "components",
        expected: 1,
        got: 0,
    })?;
    if components.iter().any(|c| !c.same_bins(first)) {
        return Err(MetricsError::MismatchedBins);
    }
    let rows: Vec<&[f64]> = components.iter().map(|c| c.masses()).collect();
    let masses = mixture_masses(weights, &rows);
    Ok(FeatureHistogram::new(first.bin_edges().to_vec(), masses)?)
}

pub(crate) fn mixture_masses(weights: &[f64], rows: &[&[f64]]) -> Vec<f64> {
    let bins = rows.first().map_or(0, |r| r.len());
    let mut out = vec![0.0; bins];
    for (w, row) in weights.iter().zip(rows) {
        for (o, m) in out.iter_mut().zip(row.iter()) {
            *o += w * m;
        }
    }
    out
}

/// `KL(p ‖ q)` in nats after adding `smoothing` to every bin of both
/// distributions and renormalizing.
pub fn kl_divergence(
    p: &FeatureHistogram,
    q: &FeatureHistogram,
    smoothing: f64,
) -> Result<f64, MetricsError> {
    if !p.same_bins(q) {
        return Err(MetricsError::MismatchedBins);
    }
    Ok(smoothed_kl(p.masses(), q.masses(), smoothing))
}

/// KL on raw mass vectors. Inputs need not be normalized; each side is
/// normalized after smoothing.
pub(crate) fn smoothed_kl(p: &[f64], q: &[f64], smoothing: f64) -> f64 {
    let bins = p.len() as f64;
    let p_total: f64 = p.iter().sum::<f64>() + bins * smoothing;
    let q_total: f64 = q.iter().sum::<f64>() + bins * smoothing;
    p.iter()
        .zip(q)
        .map(|(&pi, &qi)| {
            let ps = (pi + smoothing) / p_total;
            let qs = (qi + smoothing) / q_total;
            ps * (ps / qs).ln()
        })
        .sum()
}

/// Mean absolute difference between the weight-composed per-question score
/// and the baseline score.
pub fn calibration_error(weights: &[f64], scores: &FeatureScores) -> Result<f64, MetricsError> {
    check_len("weights", scores.perspectives(), weights.len())?;
    Ok(calibration_unchecked(weights, scores))
}

pub(crate) fn calibration_unchecked(weights: &[f64], scores: &FeatureScores) -> f64 {
    let rows = scores.perspective_scores();
    let total: f64 = scores
        .baseline_scores()
        .iter()
        .enumerate()
        .map(|(j, &b)| {
            let composed: f64 = weights.iter().zip(rows).map(|(w, row)| w * row[j]).sum();
            (composed - b).abs()
        })
        .sum();
    total / scores.questions() as f64
}

/// Squared Euclidean distance to the uniform vector. Unscaled.
pub fn l2_regularizer(weights: &[f64]) -> f64 {
    let uniform = 1.0 / weights.len() as f64;
    weights.iter().map(|w| (w - uniform).powi(2)).sum()
}

/// `n_nonzero / n + (1 - max(w))`, where a coordinate counts as non-zero
/// when it exceeds `nonzero_epsilon`. Unscaled.
pub fn sparsity_penalty(weights: &[f64], nonzero_epsilon: f64) -> f64 {
    let n = weights.len() as f64;
    let nonzero = weights.iter().filter(|&&w| w > nonzero_epsilon).count() as f64;
    let max = weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    nonzero / n + (1.0 - max)
}

/// Full objective at `weights`.
pub fn objective(
    weights: &[f64],
    components: &[FeatureHistogram],
    target: &FeatureHistogram,
    scores: &FeatureScores,
    hp: &HyperParams,
) -> Result<ObjectiveBreakdown, MetricsError> {
    Ok(Objective::new(components, target, scores, hp)?.evaluate(weights))
}

/// Objective with dimensions checked once, for repeated evaluation.
#[derive(Debug, Clone)]
pub struct Objective<'a> {
    rows: Vec<&'a [f64]>,
    target: &'a [f64],
    scores: &'a FeatureScores,
    hp: &'a HyperParams,
}

impl<'a> Objective<'a> {
    pub fn new(
        components: &'a [FeatureHistogram],
        target: &'a FeatureHistogram,
        scores: &'a FeatureScores,
        hp: &'a HyperParams,
    ) -> Result<Self, MetricsError> {
        if components.iter().any(|c| !c.same_bins(target)) {
            return Err(MetricsError::MismatchedBins);
        }
        check_len(
            "perspective score rows",
            components.len(),
            scores.perspectives(),
        )?;
        Ok(Self {
            rows: components.iter().map(|c| c.masses()).collect(),
            target: target.masses(),
            scores,
            hp,
        })
    }

    pub fn dimension(&self) -> usize {
        self.rows.len()
    }

    pub fn hyperparams(&self) -> &HyperParams {
        self.hp
    }

    /// Evaluates all four terms regardless of their strengths.
    pub fn evaluate(&self, weights: &[f64]) -> ObjectiveBreakdown {
        let composed = mixture_masses(weights, &self.rows);
        let kl = smoothed_kl(&composed, self.target, self.hp.smoothing_epsilon);
        let calibration = calibration_unchecked(weights, self.scores);
        let l2 = l2_regularizer(weights);
        let sparsity = sparsity_penalty(weights, self.hp.nonzero_epsilon);
        ObjectiveBreakdown::combine(kl, calibration, l2, sparsity, self.hp)
    }

    pub fn total(&self, weights: &[f64]) -> f64 {
        self.evaluate(weights).total
    }
}
