use mpf_core::domain::{FeatureHistogram, FeatureScores, HyperParams, ScoreRange, Weights};
use mpf_core::metrics::objective;
use mpf_core::mitigator::{grid_search_oracle, optimize, TIE_TOLERANCE};
use proptest::prelude::*;

fn histogram(bins: usize) -> impl Strategy<Value = FeatureHistogram> {
    prop::collection::vec(0.0f64..1.0, bins)
        .prop_filter("needs mass", |v| v.iter().sum::<f64>() > 1e-3)
        .prop_map(move |v| {
            let total: f64 = v.iter().sum();
            let masses = v.iter().map(|x| x / total).collect();
            FeatureHistogram::new(ScoreRange::unit().uniform_edges(bins), masses).unwrap()
        })
}

fn scores(n: usize, d: usize) -> impl Strategy<Value = FeatureScores> {
    (
        prop::collection::vec(prop::collection::vec(0.0f64..=1.0, d), n),
        prop::collection::vec(0.0f64..=1.0, d),
    )
        .prop_map(move |(rows, baseline)| {
            let ids = (0..d).map(|j| format!("q{j}")).collect();
            FeatureScores::new("c", ids, rows, baseline, ScoreRange::unit()).unwrap()
        })
}

fn strengths() -> impl Strategy<Value = HyperParams> {
    (
        0.0f64..2.0,
        0.0f64..3.0,
        0.0f64..1.0,
        0.0f64..1.0,
        any::<u64>(),
    )
        .prop_map(
            |(alpha, beta, lambda_kl, lambda_cal, rng_seed)| HyperParams {
                rng_seed,
                restarts: 4,
                ..HyperParams::with_strengths(alpha, beta, lambda_kl, lambda_cal)
            },
        )
}

fn instance(
    n: usize,
) -> impl Strategy<
    Value = (
        Vec<FeatureHistogram>,
        FeatureHistogram,
        FeatureScores,
        HyperParams,
    ),
> {
    (
        prop::collection::vec(histogram(10), n),
        histogram(10),
        scores(n, 10),
        strengths(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn result_is_feasible_and_dominates_every_candidate(
        (comps, target, s, hp) in (2usize..=5).prop_flat_map(instance)
    ) {
        let r = optimize(&comps, &target, &s, &hp).unwrap();
        let w = r.weights.as_slice();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(w.iter().all(|&x| (0.0..=1.0).contains(&x)));
        for a in &r.attempts {
            prop_assert!(r.objective_value <= a.objective + TIE_TOLERANCE, "{} > {}", r.objective_value, a.objective);
        }
        let n = comps.len();
        let mut polish: Vec<Weights> = (0..n).map(|i| Weights::one_hot(n, i).unwrap()).collect();
        polish.push(Weights::uniform(n).unwrap());
        for p in polish {
            let v = objective(p.as_slice(), &comps, &target, &s, &hp).unwrap().total;
            prop_assert!(r.objective_value <= v + TIE_TOLERANCE, "{} > {v} at {p:?}", r.objective_value);
        }
        let recomputed = objective(w, &comps, &target, &s, &hp).unwrap();
        prop_assert_eq!(recomputed, r.breakdown);
    }

    #[test]
    fn identical_inputs_give_identical_results(
        (comps, target, s, hp) in (2usize..=4).prop_flat_map(instance)
    ) {
        let a = optimize(&comps, &target, &s, &hp).unwrap();
        let b = optimize(&comps, &target, &s, &hp).unwrap();
        prop_assert_eq!(a, b);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn optimizer_is_within_tolerance_of_the_lattice_oracle(
        (comps, target, s, hp) in (2usize..=3).prop_flat_map(instance)
    ) {
        let r = optimize(&comps, &target, &s, &hp).unwrap();
        let oracle = grid_search_oracle(&comps, &target, &s, &hp, 0.01).unwrap();
        prop_assert!(
            r.objective_value <= oracle.objective + 1e-3,
            "optimize {} vs oracle {} at {:?}",
            r.objective_value,
            oracle.objective,
            oracle.weights
        );
    }
}
