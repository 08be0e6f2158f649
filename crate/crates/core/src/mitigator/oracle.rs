//! Exhaustive lattice search over the simplex, used to check [`super::optimize`].

use crate::domain::{FeatureHistogram, FeatureScores, HyperParams, Weights};
use crate::metrics::Objective;

use super::{improves, MitigatorError};

/// Largest registry size the lattice search accepts.
pub const MAX_ORACLE_PERSPECTIVES: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub weights: Weights,
    pub objective: f64,
    /// Number of lattice points evaluated.
    pub evaluated: usize,
}

/// Evaluates the objective at every simplex point whose coordinates are
/// multiples of `step` and returns the best one (ties go to the
/// lexicographically larger vector).
pub fn grid_search_oracle(
    components: &[FeatureHistogram],
    target: &FeatureHistogram,
    scores: &FeatureScores,
    hp: &HyperParams,
    step: f64,
) -> Result<OracleResult, MitigatorError> {
    let objective = Objective::new(components, target, scores, hp)?;
    let n = objective.dimension();
    if n > MAX_ORACLE_PERSPECTIVES {
        return Err(MitigatorError::TooManyPerspectives {
            max: MAX_ORACLE_PERSPECTIVES,
            got: n,
        });
    }
    if n < 2 {
        return Err(MitigatorError::TooFewPerspectives(n));
    }
    let divisions = (1.0 / step).round();
    if !(step > 0.0 && divisions >= 1.0 && (divisions * step - 1.0).abs() <= 1e-9) {
        return Err(MitigatorError::InvalidStep(step));
    }
    let m = divisions as usize;

    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut evaluated = 0;
    let mut counts = vec![0usize; n];
    visit(&mut counts, 0, m, &mut |counts| {
        let w: Vec<f64> = counts.iter().map(|&k| k as f64 / m as f64).collect();
        let value = objective.total(&w);
        evaluated += 1;
        let replace = match &best {
            None => true,
            Some((bw, bv)) => value.is_finite() && improves(value, &w, *bv, bw),
        };
        if replace {
            best = Some((w, value));
        }
    });
    let (w, value) = best.expect("lattice is non-empty");
    if !value.is_finite() {
        return Err(MitigatorError::NonFiniteObjective(w));
    }
    Ok(OracleResult {
        weights: Weights::normalize(&w)?,
        objective: value,
        evaluated,
    })
}

pub(super) fn visit(counts: &mut Vec<usize>, i: usize, left: usize, f: &mut dyn FnMut(&[usize])) {
    if i == counts.len() - 1 {
        counts[i] = left;
        f(counts);
        return;
    }
    for k in 0..=left {
        counts[i] = k;
        visit(counts, i + 1, left - k, f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::ScoreRange;

    fn hist(masses: &[f64]) -> FeatureHistogram {
        FeatureHistogram::new(
            ScoreRange::unit().uniform_edges(masses.len()),
            masses.to_vec(),
        )
        .unwrap()
    }

    fn flat_scores(n: usize) -> FeatureScores {
        FeatureScores::new(
            "c",
            vec!["q".into()],
            vec![vec![0.5]; n],
            vec![0.5],
            ScoreRange::unit(),
        )
        .unwrap()
    }

    #[test]
    fn finds_exact_mixture_on_lattice() {
        let comps = [hist(&[1.0, 0.0]), hist(&[0.0, 1.0])];
        let hp = HyperParams::with_strengths(0.0, 0.0, 1.0, 0.0);
        let r = grid_search_oracle(&comps, &hist(&[0.3, 0.7]), &flat_scores(2), &hp, 0.01).unwrap();
        assert!((r.weights[0] - 0.3).abs() < 1e-12 && (r.weights[1] - 0.7).abs() < 1e-12);
        assert!(r.objective.abs() < 1e-12);
        assert_eq!(r.evaluated, 101);
    }

    #[test]
    fn l2_only_picks_nearest_lattice_point_to_uniform() {
        let comps = [hist(&[0.5, 0.5]), hist(&[0.2, 0.8]), hist(&[0.9, 0.1])];
        let hp = HyperParams::with_strengths(1.0, 0.0, 0.0, 0.0);
        let r = grid_search_oracle(&comps, &hist(&[0.5, 0.5]), &flat_scores(3), &hp, 0.05).unwrap();
        let expected = [0.35, 0.35, 0.30];
        for (a, e) in r.weights.iter().zip(expected) {
            assert!((a - e).abs() < 1e-12, "{:?}", r.weights);
        }
        assert_eq!(r.evaluated, 231);
    }

    #[test]
    fn coarse_grid_counts_points() {
        let comps = [hist(&[0.5, 0.5]), hist(&[0.5, 0.5])];
        let hp = HyperParams::with_strengths(1.0, 0.0, 0.0, 0.0);
        let r = grid_search_oracle(&comps, &hist(&[0.5, 0.5]), &flat_scores(2), &hp, 0.5).unwrap();
        assert_eq!(r.evaluated, 3);
    }

    #[test]
    fn rejects_large_registries_and_bad_steps() {
        let comps = vec![hist(&[0.5, 0.5]); 5];
        let hp = HyperParams::with_strengths(1.0, 0.0, 0.0, 0.0);
        assert!(matches!(
            grid_search_oracle(&comps, &hist(&[0.5, 0.5]), &flat_scores(5), &hp, 0.1),
            Err(MitigatorError::TooManyPerspectives { .. })
        ));
        let comps = vec![hist(&[0.5, 0.5]); 2];
        assert!(matches!(
            grid_search_oracle(&comps, &hist(&[0.5, 0.5]), &flat_scores(2), &hp, 0.3),
            Err(MitigatorError::InvalidStep(_))
        ));
    }
}
