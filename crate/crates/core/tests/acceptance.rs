//! Acceptance checks, one line per criterion. Exits non-zero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use mpf_core::domain::{FeatureHistogram, FeatureScores, HyperParams, ScoreRange, Split, Weights};
use mpf_core::generation::sample_perspective;
use mpf_core::metrics::{
    calibration_error, compose_histogram, kl_divergence, l2_regularizer, objective,
    sparsity_penalty,
};
use mpf_core::mitigator::{grid_search_oracle, optimize};
use mpf_core::pipeline::{
    expand_counterfactual, run_pipeline, stage_perspectives, stage_score, stage_sweep, Overrides,
    QuestionTemplate, RunContext, DEFAULT_PLACEHOLDER,
};
use mpf_core::rng::SeededRng;

type Check = Result<(), String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn edges(bins: usize) -> Vec<f64> {
    ScoreRange::unit().uniform_edges(bins)
}

fn hist(masses: &[f64]) -> FeatureHistogram {
    FeatureHistogram::new(edges(masses.len()), masses.to_vec()).unwrap()
}

fn random_hist(rng: &mut SeededRng, bins: usize) -> FeatureHistogram {
    hist(&rng.dirichlet_uniform(bins))
}

fn random_scores(rng: &mut SeededRng, n: usize, d: usize) -> FeatureScores {
    let ids = (0..d).map(|j| format!("q{j}")).collect();
    let rows = (0..n)
        .map(|_| (0..d).map(|_| rng.next_unit()).collect())
        .collect();
    let baseline = (0..d).map(|_| rng.next_unit()).collect();
    FeatureScores::new("c", ids, rows, baseline, ScoreRange::unit()).unwrap()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures/hermetic")
        .join(name)
}

fn hermetic_context(manifest: &str, out: &Path) -> RunContext {
    let overrides = Overrides {
        output_dir: Some(out.to_path_buf()),
        ..Overrides::default()
    };
    RunContext::load(&fixture(manifest), &overrides).unwrap()
}

fn metric_exactness() -> Check {
    let eps = HyperParams::default().smoothing_epsilon;
    let mut rng = SeededRng::new(1);
    for i in 0..100 {
        let p = random_hist(&mut rng, 2 + i % 19);
        let kl = kl_divergence(&p, &p, eps).unwrap();
        ensure(kl.abs() <= 1e-12, || {
            format!("KL(p, p) = {kl:e} on histogram {i}")
        })?;
    }

    let kl = kl_divergence(&hist(&[0.5, 0.5]), &hist(&[0.25, 0.75]), eps).unwrap();
    ensure(close(kl, 0.14384, 1e-4), || format!("KL example gave {kl}"))?;
    let unsmoothed = 0.5 * (2.0f64).ln() + 0.5 * (0.5f64 / 0.75).ln();
    ensure(close(kl, unsmoothed, 1e-6), || {
        "smoothing moved the KL example by more than 1e-6".into()
    })?;
    let disjoint = kl_divergence(&hist(&[1.0, 0.0]), &hist(&[0.0, 1.0]), eps).unwrap();
    ensure(
        disjoint.is_finite() && disjoint <= (1.0 / eps).ln() * 1.01,
        || format!("disjoint KL {disjoint}"),
    )?;

    let composed = compose_histogram(&[0.5, 0.5], &[hist(&[1.0, 0.0]), hist(&[0.0, 1.0])]).unwrap();
    ensure(linf(composed.masses(), &[0.5, 0.5]) < 1e-12, || {
        "mixture example".into()
    })?;

    let ids = vec!["q1".to_string(), "q2".to_string()];
    let scores = |baseline: Vec<f64>| {
        FeatureScores::new(
            "c",
            ids.clone(),
            vec![vec![0.8, 0.6], vec![0.2, 0.4]],
            baseline,
            ScoreRange::unit(),
        )
        .unwrap()
    };
    let exact = calibration_error(&[0.5, 0.5], &scores(vec![0.5, 0.5])).unwrap();
    let shifted = calibration_error(&[0.5, 0.5], &scores(vec![0.6, 0.4])).unwrap();
    ensure(close(exact, 0.0, 1e-4) && close(shifted, 0.1, 1e-4), || {
        format!("calibration examples gave {exact} and {shifted}")
    })?;
    let single = FeatureScores::new(
        "c",
        ids.clone(),
        vec![vec![0.3, 0.9]],
        vec![0.3, 0.9],
        ScoreRange::unit(),
    )
    .unwrap();
    ensure(calibration_error(&[1.0], &single).unwrap() == 0.0, || {
        "single-perspective calibration".into()
    })?;

    for (w, expected) in [
        (vec![0.2; 5], 0.0),
        (vec![1.0, 0.0], 0.5),
        (vec![1.0, 0.0, 0.0, 0.0, 0.0], 0.8),
    ] {
        let got = l2_regularizer(&w);
        ensure(close(got, expected, 1e-4), || {
            format!("l2 {w:?} gave {got}")
        })?;
    }
    let nz = HyperParams::default().nonzero_epsilon;
    for (w, expected) in [
        (vec![1.0, 0.0, 0.0, 0.0, 0.0], 0.2),
        (vec![0.2; 5], 1.8),
        (vec![0.5, 0.5, 0.0, 0.0, 0.0], 0.9),
    ] {
        let got = sparsity_penalty(&w, nz);
        ensure(close(got, expected, 1e-4), || {
            format!("sparsity {w:?} gave {got}")
        })?;
    }

    // Recombination under the default strengths.
    let comps = [hist(&[0.5, 0.5]), hist(&[0.25, 0.75])];
    let target = hist(&[0.25, 0.75]);
    let w = [1.0, 0.0];
    let b = objective(
        &w,
        &comps,
        &target,
        &scores(vec![0.6, 0.4]),
        &HyperParams::default(),
    )
    .unwrap();
    let expected = 0.2 * kl
        + 0.8 * calibration_error(&w, &scores(vec![0.6, 0.4])).unwrap()
        + sparsity_penalty(&w, nz);
    ensure(close(b.total, expected, 1e-9), || {
        format!("objective total {} vs {expected}", b.total)
    })
}

fn oracle_dominance() -> Check {
    let settings = [
        HyperParams::default(),
        HyperParams::with_strengths(0.0, 0.0, 1.0, 0.0),
        HyperParams::with_strengths(0.0, 0.0, 0.0, 1.0),
        HyperParams::with_strengths(0.5, 0.3, 0.5, 0.5),
        HyperParams::with_strengths(0.5, 3.0, 0.8, 0.2),
    ];
    let mut worst = f64::NEG_INFINITY;
    for instance in 0..20u64 {
        let mut rng = SeededRng::new(1000 + instance);
        let comps: Vec<_> = (0..3).map(|_| random_hist(&mut rng, 10)).collect();
        let target = random_hist(&mut rng, 10);
        let scores = random_scores(&mut rng, 3, 10);
        for (s, base) in settings.iter().enumerate() {
            let hp = HyperParams {
                rng_seed: instance,
                ..base.clone()
            };
            let opt = optimize(&comps, &target, &scores, &hp).map_err(|e| e.to_string())?;
            let oracle = grid_search_oracle(&comps, &target, &scores, &hp, 0.01)
                .map_err(|e| e.to_string())?;
            let gap = opt.objective_value - oracle.objective;
            worst = worst.max(gap);
            ensure(gap <= 1e-3, || {
                format!(
                    "instance {instance} setting {s}: optimize {} vs oracle {}",
                    opt.objective_value, oracle.objective
                )
            })?;
        }
    }
    println!("    worst optimize - oracle gap: {worst:.3e}");
    Ok(())
}

fn mixture_recovery() -> Check {
    let hp = HyperParams::with_strengths(0.0, 0.0, 1.0, 0.0);
    for instance in 0..10u64 {
        let n = 2 + (instance % 2) as usize;
        let mut rng = SeededRng::new(2000 + instance);
        let comps: Vec<_> = (0..n).map(|_| random_hist(&mut rng, 10)).collect();
        // Coordinates under the reporting floor would be zeroed; keep w* interior.
        let truth = loop {
            let w = rng.dirichlet_uniform(n);
            if w.iter().all(|&x| x >= 0.05) {
                break w;
            }
        };
        let target = compose_histogram(&truth, &comps).unwrap();
        let scores = random_scores(&mut rng, n, 10);
        let r = optimize(
            &comps,
            &target,
            &scores,
            &HyperParams {
                rng_seed: instance,
                ..hp.clone()
            },
        )
        .map_err(|e| e.to_string())?;
        let err = linf(r.weights.as_slice(), &truth);
        ensure(err <= 1e-3, || {
            format!(
                "instance {instance}: {:?} vs {truth:?} (L∞ {err:e})",
                r.weights
            )
        })?;
    }
    Ok(())
}

fn regularizer_limits() -> Check {
    for instance in 0..5u64 {
        let mut rng = SeededRng::new(3000 + instance);
        let comps: Vec<_> = (0..3).map(|_| random_hist(&mut rng, 10)).collect();
        let target = random_hist(&mut rng, 10);
        let scores = random_scores(&mut rng, 3, 10);

        let sparse = HyperParams {
            rng_seed: instance,
            ..HyperParams::with_strengths(0.0, 10.0, 0.0, 0.0)
        };
        let w = optimize(&comps, &target, &scores, &sparse)
            .map_err(|e| e.to_string())?
            .weights;
        let to_vertex = (0..3)
            .map(|i| linf(w.as_slice(), Weights::one_hot(3, i).unwrap().as_slice()))
            .fold(f64::INFINITY, f64::min);
        ensure(to_vertex <= 1e-3, || format!("β=10 gave {w:?}"))?;

        let spread = HyperParams {
            rng_seed: instance,
            ..HyperParams::with_strengths(10.0, 0.0, 0.0, 0.0)
        };
        let w = optimize(&comps, &target, &scores, &spread)
            .map_err(|e| e.to_string())?
            .weights;
        ensure(linf(w.as_slice(), &[1.0 / 3.0; 3]) <= 1e-3, || {
            format!("α=10 gave {w:?}")
        })?;
    }
    Ok(())
}

fn sampling_fidelity() -> Check {
    let w = Weights::new(vec![0.3, 0.7]).unwrap();
    let mut rng = SeededRng::new(42);
    let draws = 100_000;
    let mut counts = [0usize; 2];
    for _ in 0..draws {
        counts[sample_perspective(&w, &mut rng)] += 1;
    }
    let freq = [
        counts[0] as f64 / draws as f64,
        counts[1] as f64 / draws as f64,
    ];
    ensure(linf(&freq, &[0.3, 0.7]) <= 0.01, || {
        format!("frequencies {freq:?}")
    })?;

    let one_hot = Weights::one_hot(4, 2).unwrap();
    let mut rng = SeededRng::new(7);
    ensure(
        (0..10_000).all(|_| sample_perspective(&one_hot, &mut rng) == 2),
        || "one-hot weights drew another perspective".into(),
    )
}

fn sweep_cardinality() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let ctx = hermetic_context("manifest.toml", dir.path());
    ensure(ctx.manifest.sweep.is_none(), || {
        "hermetic manifest should use the default grid".into()
    })?;
    let scores = stage_perspectives(&ctx)
        .and_then(|p| stage_score(&ctx, &p))
        .map_err(|e| e.to_string())?;
    let rows = stage_sweep(&ctx, &scores).map_err(|e| e.to_string())?;
    ensure(rows.len() == 30, || format!("{} rows", rows.len()))?;
    let table = std::fs::read_to_string(dir.path().join("sweep.tsv")).map_err(|e| e.to_string())?;
    let concepts = ctx.benchmark.concepts().len();
    ensure(table.lines().count() == 1 + 30 * concepts, || {
        "sweep.tsv line count".into()
    })
}

fn hermetic_ordering() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (report, _) = run_pipeline(&hermetic_context("manifest.toml", dir.path()), false)
        .map_err(|e| e.to_string())?;
    for split in Split::ALL {
        let kl = |system: &str| {
            report
                .cell(split, system)
                .map(|c| c.kl)
                .ok_or(format!("missing {system} cell"))
        };
        let normal = kl("normal")?;
        for system in ["mpf_sampled", "mpf_aggregated"] {
            let fused = kl(system)?;
            ensure(fused < normal, || {
                format!("{}: {system} {fused} vs normal {normal}", split.as_str())
            })?;
        }
        println!(
            "    {}: normal {normal:.4}, mpf_sampled {:.4}, mpf_aggregated {:.4}",
            split.as_str(),
            kl("mpf_sampled")?,
            kl("mpf_aggregated")?
        );
    }
    Ok(())
}

fn determinism() -> Check {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    for dir in [&a, &b] {
        run_pipeline(&hermetic_context("manifest.toml", dir.path()), false)
            .map_err(|e| e.to_string())?;
    }
    let mut names: Vec<_> = std::fs::read_dir(a.path())
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    ensure(!names.is_empty(), || "no artifacts written".into())?;
    for name in names {
        let x = std::fs::read(a.path().join(&name)).map_err(|e| e.to_string())?;
        let y = std::fs::read(b.path().join(&name)).map_err(|e| e.to_string())?;
        ensure(x == y, || format!("{name:?} differs between runs"))?;
    }
    Ok(())
}

fn counterfactual_expansion() -> Check {
    let text = std::fs::read_to_string(fixture("universities.txt")).map_err(|e| e.to_string())?;
    let concepts: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();
    let template = QuestionTemplate {
        id: "t01".into(),
        text: format!("What is {DEFAULT_PLACEHOLDER} known for?"),
        split: Split::Decomposition,
    };
    let questions = expand_counterfactual(&[template], &concepts, DEFAULT_PLACEHOLDER)
        .map_err(|e| e.to_string())?;
    ensure(questions.len() == 30 && concepts.len() == 30, || {
        format!("{} questions", questions.len())
    })?;
    for (q, c) in questions.iter().zip(&concepts) {
        let expected = format!("What is {c} known for?");
        ensure(q.text == expected && &q.concept == c, || {
            format!("{:?} for {c}", q.text)
        })?;
    }
    Ok(())
}

struct Criterion {
    number: u32,
    name: &'static str,
    check: fn() -> Check,
    limit: Option<Duration>,
}

fn main() {
    let criteria = [
        Criterion {
            number: 1,
            name: "metric exactness",
            check: metric_exactness,
            limit: Some(Duration::from_secs(1)),
        },
        Criterion {
            number: 2,
            name: "oracle dominance",
            check: oracle_dominance,
            limit: Some(Duration::from_secs(30)),
        },
        Criterion {
            number: 3,
            name: "mixture recovery",
            check: mixture_recovery,
            limit: None,
        },
        Criterion {
            number: 4,
            name: "regularizer limits",
            check: regularizer_limits,
            limit: None,
        },
        Criterion {
            number: 5,
            name: "sampling fidelity",
            check: sampling_fidelity,
            limit: None,
        },
        Criterion {
            number: 6,
            name: "sweep cardinality",
            check: sweep_cardinality,
            limit: None,
        },
        Criterion {
            number: 7,
            name: "hermetic ordering",
            check: hermetic_ordering,
            limit: Some(Duration::from_secs(60)),
        },
        Criterion {
            number: 8,
            name: "determinism",
            check: determinism,
            limit: None,
        },
        Criterion {
            number: 9,
            name: "counterfactual expansion",
            check: counterfactual_expansion,
            limit: None,
        },
    ];
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let outcome =
            catch_unwind(AssertUnwindSafe(c.check)).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let outcome = outcome.and_then(|()| match c.limit {
            Some(limit) if elapsed > limit => Err(format!("took {elapsed:.2?}, limit {limit:?}")),
            _ => Ok(()),
        });
        match outcome {
            Ok(()) => println!("PASS  {}. {} ({elapsed:.2?})", c.number, c.name),
            Err(msg) => {
                failed += 1;
                println!("FAIL  {}. {}: {msg}", c.number, c.name);
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
