//! Hyperparameter sweep over the full Cartesian product of a grid.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{Benchmark, DecompositionResult, HyperParams, PerspectiveRegistry};

use super::{decompose_benchmark, ConceptData, MitigatorError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    /// `(lambda_kl, lambda_cal)` pairs.
    pub lambda_pairs: Vec<(f64, f64)>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            alphas: vec![0.0, 0.5],
            betas: vec![0.0, 0.1, 0.3, 1.0, 3.0],
            lambda_pairs: vec![(0.2, 0.8), (0.5, 0.5), (0.8, 0.2)],
        }
    }
}

impl SweepGrid {
    pub fn validate(&self) -> Result<(), MitigatorError> {
        let bad = |m: &str| Err(MitigatorError::InvalidGrid(m.into()));
        if self.alphas.is_empty() || self.betas.is_empty() || self.lambda_pairs.is_empty() {
            return bad("alphas, betas and lambda_pairs must all be non-empty");
        }
        let values = self
            .alphas
            .iter()
            .chain(&self.betas)
            .chain(self.lambda_pairs.iter().flat_map(|(a, b)| [a, b]));
        for v in values {
            if !v.is_finite() || *v < 0.0 {
                return bad("grid values must be finite and non-negative");
            }
        }
        Ok(())
    }

    /// Cells in declaration order: alpha outermost, then beta, then the
    /// lambda pair.
    pub fn cells(&self) -> Vec<(f64, f64, f64, f64)> {
        let mut cells = Vec::new();
        for &a in &self.alphas {
            for &b in &self.betas {
                for &(kl, cal) in &self.lambda_pairs {
                    cells.push((a, b, kl, cal));
                }
            }
        }
        cells
    }

    pub fn len(&self) -> usize {
        self.alphas.len() * self.betas.len() * self.lambda_pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub alpha: f64,
    pub beta: f64,
    pub lambda_kl: f64,
    pub lambda_cal: f64,
    pub results: BTreeMap<String, DecompositionResult>,
    /// Mean unscaled KL term across concepts.
    pub aggregate_kl: f64,
    /// Mean unscaled calibration term across concepts.
    pub aggregate_calibration: f64,
}

/// Runs [`decompose_benchmark`] for every grid cell. All other
/// hyperparameters come from `base`.
pub fn sweep(
    benchmark: &Benchmark,
    data: &BTreeMap<String, ConceptData>,
    grid: &SweepGrid,
    base: &HyperParams,
) -> Result<Vec<SweepRow>, MitigatorError> {
    grid.validate()?;
    grid.cells()
        .into_par_iter()
        .map(|(alpha, beta, lambda_kl, lambda_cal)| {
            let hp = HyperParams {
                alpha,
                beta,
                lambda_kl,
                lambda_cal,
                ..base.clone()
            };
            let results = decompose_benchmark(benchmark, data, &hp)?;
            let count = results.len().max(1) as f64;
            let aggregate_kl = results.values().map(|r| r.breakdown.kl).sum::<f64>() / count;
            let aggregate_calibration = results
                .values()
                .map(|r| r.breakdown.calibration)
                .sum::<f64>()
                / count;
            Ok(SweepRow {
                alpha,
                beta,
                lambda_kl,
                lambda_cal,
                results,
                aggregate_kl,
                aggregate_calibration,
            })
        })
        .collect()
}

/// Tab-separated table with one line per (grid cell, concept).
pub fn sweep_table(
    rows: &[SweepRow],
    registry: &PerspectiveRegistry,
) -> Result<String, csv::Error> {
    let mut writer = csv::WriterBuilder::new()
        .delimiter(b'\t')
        .from_writer(Vec::new());
    let mut header = vec![
        "alpha".to_string(),
        "beta".into(),
        "lambda_kl".into(),
        "lambda_cal".into(),
        "concept".into(),
    ];
    header.extend(registry.iter().map(|p| format!("w_{}", p.name)));
    header.extend(["kl".into(), "calibration".into(), "objective".into()]);
    writer.write_record(&header)?;
    let fmt = crate::pipeline::format_sig;
    for row in rows {
        for (concept, r) in &row.results {
            let mut line = vec![
                fmt(row.alpha),
                fmt(row.beta),
                fmt(row.lambda_kl),
                fmt(row.lambda_cal),
                concept.clone(),
            ];
            line.extend(r.weights.iter().map(|w| fmt(*w)));
            line.extend([
                fmt(r.breakdown.kl),
                fmt(r.breakdown.calibration),
                fmt(r.objective_value),
            ]);
            writer.write_record(&line)?;
        }
    }
    let bytes = writer.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("table is utf-8"))
}
