use std::sync::Arc;

use proptest::prelude::*;

use var_bdca::bench::{self, AggregateOptions, InitScheme, RunRecord, SchemeId, Statistic};
use var_bdca::data::ScenarioSet;
use var_bdca::objective::{self, ProblemSpec};
use var_bdca::risk;
use var_bdca::simplex;
use var_bdca::solvers::{self, Algorithm};

fn scenarios(n: usize, s: usize) -> impl Strategy<Value = ScenarioSet> {
    (
        prop::collection::vec(prop::collection::vec(0.7f64..1.3, n), s),
        prop::collection::vec(0.05f64..1.0, s),
        any::<bool>(),
    )
        .prop_map(|(rows, raw, uniform)| {
            let total: f64 = raw.iter().sum();
            let probs = (!uniform).then(|| raw.iter().map(|p| p / total).collect());
            ScenarioSet::from_rows(&rows, probs, "prop").unwrap()
        })
}

fn weights(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, n).prop_map(|mut w| {
        let total: f64 = w.iter().sum();
        if total == 0.0 {
            return simplex::uniform(w.len());
        }
        w.iter_mut().for_each(|x| *x /= total);
        w
    })
}

fn set_and_weights() -> impl Strategy<Value = (ScenarioSet, Vec<f64>)> {
    (1usize..6, 2usize..30).prop_flat_map(|(n, s)| (scenarios(n, s), weights(n)))
}

fn record(feasible: bool, ret: f64, scheme: bool, algorithm: bool, start: usize) -> RunRecord {
    RunRecord {
        dataset: "p".into(),
        r_min: 0.96,
        algorithm: if algorithm { Algorithm::Bdca } else { Algorithm::Dca },
        scheme: if scheme { SchemeId::Skewed } else { SchemeId::NearUniform },
        config: "c".into(),
        start_index: start,
        seed: start as u64,
        expected_return: ret,
        var: 0.9,
        feasible,
        iterations: start % 7,
        kkt_residual: None,
        reason: "converged".into(),
        wall_seconds: 0.0,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cvar_bounds_var_and_matches_the_lp((set, w) in set_and_weights(), alpha in 0.02f64..0.9) {
        let cvar = risk::discrete_cvar(&set, &w, alpha).unwrap();
        let var = risk::discrete_var(&set, &w, alpha).unwrap();
        prop_assert!(cvar <= var + 1e-12);
        let ru = risk::ru_cvar(&set, &w, alpha).unwrap();
        prop_assert!((cvar - ru).abs() < 1e-10);
    }

    #[test]
    fn dc_identity_holds_below_the_boundary_mass((set, w) in set_and_weights(), alpha in 0.02f64..0.9, frac in 0.01f64..0.99) {
        let eps = risk::tail_index(&set, &w, alpha).unwrap().epsilon;
        let gamma = frac * eps;
        let var = risk::discrete_var(&set, &w, alpha).unwrap();
        let upper = risk::discrete_cvar(&set, &w, alpha).unwrap();
        let lower = risk::discrete_cvar(&set, &w, alpha - gamma).unwrap();
        let gap = (alpha / gamma * upper - (alpha - gamma) / gamma * lower - var).abs();
        prop_assert!(gap < 1e-9 * (1.0 + alpha / gamma), "gap {gap}");
    }

    #[test]
    fn phi_splits_into_g_minus_h((set, w) in set_and_weights(), r_min in 0.6f64..1.2, tau in 0.01f64..10.0, rho in 0.01f64..5.0) {
        let spec = ProblemSpec::new(Arc::new(set), 0.2, None, r_min, tau, rho).unwrap();
        if let Ok(phi) = objective::phi(&spec, &w) {
            let eps = risk::tail_index(spec.scenarios(), &w, spec.alpha).unwrap().epsilon;
            if spec.gamma < eps - 1e-12 {
                let diff = objective::g_value(&spec, &w).unwrap() - objective::h_value(&spec, &w).unwrap();
                prop_assert!((diff - phi.phi).abs() < 1e-8 * (1.0 + tau / spec.gamma));
            }
            // the surrogate never lies below phi
            let u = objective::h_subgradient(&spec, &w, Some(1)).unwrap();
            let v = simplex::uniform(w.len());
            let h_w = objective::h_value(&spec, &w).unwrap();
            let lin: f64 = u.iter().zip(&v).zip(&w).map(|((ui, vi), wi)| ui * (vi - wi)).sum();
            let surrogate = objective::g_value(&spec, &v).unwrap() - h_w - lin;
            let phi_v = objective::phi(&spec, &v).unwrap().phi;
            if spec.gamma < risk::tail_index(spec.scenarios(), &v, spec.alpha).unwrap().epsilon - 1e-12 {
                prop_assert!(surrogate >= phi_v - 1e-8 * (1.0 + tau / spec.gamma));
            }
        }
    }

    #[test]
    fn extrapolated_steps_stay_on_the_simplex(w in weights(5), y in weights(5)) {
        let d: Vec<f64> = y.iter().zip(&w).map(|(a, b)| a - b).collect();
        if d.iter().any(|x| x.abs() > 1e-12) {
            let lambda = solvers::max_feasible_step(&w, &d).unwrap();
            prop_assert!(lambda >= 1.0 - 1e-12);
            let z: Vec<f64> = w.iter().zip(&d).map(|(a, b)| a + lambda * b).collect();
            prop_assert!(simplex::simplex_violation(&z) < 1e-12);
        }
    }

    #[test]
    fn starts_lie_on_the_simplex(seed in any::<u64>(), n in 2usize..40, index in 0usize..10_000, skewed in any::<bool>()) {
        let id = if skewed { SchemeId::Skewed } else { SchemeId::NearUniform };
        let w = bench::sample_start(&InitScheme::new(id, seed), n, index).unwrap();
        prop_assert_eq!(w.len(), n);
        prop_assert!(w.iter().all(|&x| x >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn bootstrap_intervals_bracket_the_point(values in prop::collection::vec(-5.0f64..5.0, 1..40), seed in any::<u64>(), m in 1usize..10) {
        for stat in [Statistic::Median, Statistic::Fraction] {
            let ci = bench::bootstrap_ci(&values, stat, 200, 0.9, m, seed).unwrap();
            prop_assert!(ci.lower <= ci.point && ci.point <= ci.upper);
            let again = bench::bootstrap_ci(&values, stat, 200, 0.9, m, seed).unwrap();
            prop_assert_eq!(ci, again);
        }
    }

    #[test]
    fn aggregation_ignores_record_order(
        rows in prop::collection::vec((any::<bool>(), 0.95f64..1.05, any::<bool>(), any::<bool>()), 1..30),
    ) {
        let records: Vec<RunRecord> = rows
            .iter()
            .enumerate()
            .map(|(k, &(f, r, s, a))| record(f, r, s, a, k))
            .collect();
        let opts = AggregateOptions { resamples: 50, level: 0.95, seed: 1 };
        let summary = bench::aggregate(&records, &opts).unwrap();
        let mut shuffled = records.clone();
        shuffled.reverse();
        shuffled.rotate_left(records.len() / 3);
        prop_assert_eq!(&summary, &bench::aggregate(&shuffled, &opts).unwrap());
        for row in &summary {
            let cell = records.iter().filter(|r| r.scheme == row.scheme && r.algorithm == row.algorithm);
            let (runs, infeasible) = cell.fold((0, 0), |(n, i), r| (n + 1, i + usize::from(!r.feasible)));
            prop_assert_eq!(row.runs, runs);
            prop_assert_eq!(row.infeasible_count, infeasible);
            prop_assert!((0.0..=1.0).contains(&row.infeasible_fraction()));
            prop_assert_eq!(row.median_return.is_none(), infeasible == runs);
        }
    }

    #[test]
    fn records_round_trip_through_csv(
        rows in prop::collection::vec((any::<bool>(), -1e3f64..1e3, any::<bool>(), any::<bool>()), 1..20),
    ) {
        let records: Vec<RunRecord> = rows
            .iter()
            .enumerate()
            .map(|(k, &(f, r, s, a))| record(f, r, s, a, k))
            .collect();
        let mut buf = Vec::new();
        bench::write_records(&records, &mut buf).unwrap();
        prop_assert_eq!(bench::read_records(buf.as_slice()).unwrap(), records);
    }
}
