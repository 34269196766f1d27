mod oracle;

use std::f64::consts::{PI, TAU};

use bqi_core::eigentask::{solve_eigentasks, truncated_readout};
use bqi_core::opt::{direct_optimize, sample_and_fit, DirectSettings, SearchBox};
use bqi_core::prior::PriorSpec;
use bqi_core::readout::{
    build_feature_table, capacity, compute_moments, table_optimal_weights, FeatureMode, ShotBudget,
};
use bqi_core::spin::{
    apply_rotation, apply_twist, Axis, CircuitParams, DickeState, FixedRotationPlacement, PreparedCircuit,
    SpinAlgebra,
};
use bqi_core::target::TargetSpec;
use oracle::{expected_loss, least_squares_minimum, FullSim};
use proptest::prelude::*;

fn circuit(qubits: usize, n_en: usize, n_de: usize, flat: &[f64]) -> PreparedCircuit {
    let alg = SpinAlgebra::new(qubits).unwrap();
    let p = CircuitParams::from_flat(n_en, n_de, flat).unwrap();
    PreparedCircuit::new(&alg, &p, FixedRotationPlacement::Last).unwrap()
}

fn angles(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..TAU, n)
}

prop_compose! {
    fn layered(max_qubits: usize)(qubits in 1..=max_qubits, n_en in 0usize..3, n_de in 0usize..3)
        (flat in angles(3 * (n_en + n_de)), qubits in Just(qubits), n_en in Just(n_en), n_de in Just(n_de))
        -> (usize, usize, usize, Vec<f64>) {
        (qubits, n_en, n_de, flat)
    }
}

fn shots_strategy() -> impl Strategy<Value = ShotBudget> {
    prop_oneof![(1u64..50).prop_map(ShotBudget::Finite), Just(ShotBudget::Infinite)]
}

fn target_strategy() -> impl Strategy<Value = TargetSpec> {
    prop_oneof![Just(TargetSpec::Identity), (0.5f64..6.0).prop_map(|frequency| TargetSpec::Sine { frequency })]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn gates_preserve_the_norm(
        qubits in 1usize..16,
        gates in prop::collection::vec((0u8..5, -10.0f64..10.0), 1..12),
    ) {
        let alg = SpinAlgebra::new(qubits).unwrap();
        let mut psi = DickeState::all_down(&alg);
        for (kind, angle) in gates {
            psi = match kind {
                0 => apply_rotation(&alg, &psi, Axis::X, angle),
                1 => apply_rotation(&alg, &psi, Axis::Y, angle),
                2 => apply_rotation(&alg, &psi, Axis::Z, angle),
                3 => apply_twist(&alg, &psi, Axis::X, angle),
                _ => apply_twist(&alg, &psi, Axis::Z, angle),
            }
            .unwrap();
            prop_assert!((psi.norm_sqr() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn outcome_distributions_are_normalized((qubits, n_en, n_de, flat) in layered(20), u in -PI..PI) {
        let p = circuit(qubits, n_en, n_de, &flat).probabilities(u).unwrap().probs;
        prop_assert_eq!(p.len(), qubits + 1);
        prop_assert!(p.iter().all(|&x| (-1e-12..=1.0 + 1e-12).contains(&x)));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn probabilities_are_periodic_in_input_and_angles(
        (qubits, n_en, n_de, flat) in layered(12),
        u in -PI..PI,
        shift in 0usize..32,
        turns in -2i32..=2,
    ) {
        let base = circuit(qubits, n_en, n_de, &flat);
        let p = base.probabilities(u).unwrap().probs;
        let q = base.probabilities(u + TAU).unwrap().probs;
        let mut moved = flat.clone();
        if !moved.is_empty() {
            let i = shift % moved.len();
            moved[i] += TAU * turns as f64;
        }
        let r = circuit(qubits, n_en, n_de, &moved).probabilities(u).unwrap().probs;
        for j in 0..p.len() {
            prop_assert!((p[j] - q[j]).abs() < 1e-9);
            prop_assert!((p[j] - r[j]).abs() < 1e-9);
        }
    }

    #[test]
    fn subspace_matches_full_simulation((qubits, n_en, n_de, flat) in layered(4), u in -PI..PI) {
        let got = circuit(qubits, n_en, n_de, &flat).probabilities(u).unwrap().probs;
        let want = FullSim { qubits }.probabilities(n_en, n_de, &flat, u);
        for (a, b) in got.iter().zip(&want) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn closed_form_matches_least_squares_minimum(
        (qubits, n_en, n_de, flat) in layered(8),
        sigma in 0.2f64..1.2,
        nodes in 10usize..40,
        target in target_strategy(),
        shots in shots_strategy(),
    ) {
        let c = circuit(qubits, n_en, n_de, &flat);
        let grid = PriorSpec::gaussian(sigma).quadrature_grid(nodes).unwrap();
        let table = build_feature_table(&c, &grid, &target, FeatureMode::Exact).unwrap();
        let moments = compute_moments(&table).unwrap();
        let (readout, closed) = table_optimal_weights(&table, shots, 0.0).unwrap();
        let inv = shots.inverse();
        let direct = expected_loss(&table.rows, &table.targets, &grid.weights, &readout.weights, inv);
        let best = least_squares_minimum(&table.rows, &table.targets, &grid.weights, inv);
        // a stable solve fixes the residual to ε‖A‖‖w‖, and ‖A‖ ≤ 1 for probability rows
        let norm = readout.weights.iter().map(|w| w * w).sum::<f64>().sqrt();
        let floor = 1e-12 * moments.target_power + 32.0 * f64::EPSILON * norm * best.max(0.0).sqrt();
        prop_assert!((closed - direct).abs() <= 1e-10 * closed.abs() + floor, "{closed} vs {direct}");
        prop_assert!((closed - best).abs() <= 1e-8 * best.abs() + floor, "{closed} vs {best}");
    }

    #[test]
    fn optimal_loss_falls_with_shots_and_capacity_is_bounded(
        (qubits, n_en, n_de, flat) in layered(10),
        sigma in 0.2f64..1.2,
        target in target_strategy(),
    ) {
        let c = circuit(qubits, n_en, n_de, &flat);
        let grid = PriorSpec::gaussian(sigma).quadrature_grid(30).unwrap();
        let table = build_feature_table(&c, &grid, &target, FeatureMode::Exact).unwrap();
        let moments = compute_moments(&table).unwrap();
        let mut last = f64::INFINITY;
        for shots in [1, 2, 5, 20, 100].map(ShotBudget::Finite).into_iter().chain([ShotBudget::Infinite]) {
            let (_, loss) = table_optimal_weights(&table, shots, 0.0).unwrap();
            prop_assert!(loss <= last + 1e-12 * moments.target_power);
            let cap = capacity(loss, moments.target_power);
            prop_assert!((-1e-10..=1.0 + 1e-10).contains(&cap), "capacity {cap}");
            last = loss;
        }
    }

    #[test]
    fn eigentask_truncation_is_monotone(
        (qubits, n_en, n_de, flat) in layered(8),
        shots in 1u64..20,
    ) {
        let c = circuit(qubits, n_en, n_de, &flat);
        let grid = PriorSpec::gaussian(0.8).quadrature_grid(40).unwrap();
        let table = build_feature_table(&c, &grid, &TargetSpec::Identity, FeatureMode::Exact).unwrap();
        let moments = compute_moments(&table).unwrap();
        let basis = solve_eigentasks(&moments).unwrap();
        prop_assert!(basis.betas2.iter().all(|&b| b >= -1e-9));
        prop_assert!(basis.betas2.windows(2).all(|w| w[0] <= w[1] + 1e-12));
        let mut last = f64::INFINITY;
        for k in 1..=basis.rank() {
            let (_, loss) = truncated_readout(&basis, k, &moments, ShotBudget::Finite(shots)).unwrap();
            prop_assert!(loss <= last + 1e-10 * moments.target_power);
            last = loss;
        }
    }

    #[test]
    fn landscapes_are_band_limited((qubits, n_en, n_de, flat) in layered(6), which in 0usize..3, u in -PI..PI) {
        // a collective rotation angle and the input phase enter with frequencies up to L
        prop_assume!(n_en + n_de > 0);
        let layer = which % (n_en + n_de);
        let outcome = which % (qubits + 1);
        let g = |theta: f64| {
            let mut f = flat.clone();
            f[3 * layer + 2] = theta;
            circuit(qubits, n_en, n_de, &f).probabilities(u).unwrap().probs[outcome]
        };
        let fit = sample_and_fit(g, qubits, 2 * qubits + 1).unwrap();
        let c = circuit(qubits, n_en, n_de, &flat);
        let h = |v: f64| c.probabilities(v).unwrap().probs[outcome];
        let fit_u = sample_and_fit(h, qubits, 2 * qubits + 1).unwrap();
        for i in 0..17 {
            let t = 0.37 + TAU * i as f64 / 17.0;
            prop_assert!((fit.eval(t) - g(t)).abs() < 1e-9);
            prop_assert!((fit_u.eval(t) - h(t)).abs() < 1e-9);
        }
    }

    #[test]
    fn sampled_histograms_are_shot_fractions(
        (qubits, n_en, n_de, flat) in layered(10),
        shots in 1u64..40,
        seed in any::<u64>(),
    ) {
        let c = circuit(qubits, n_en, n_de, &flat);
        let inputs = PriorSpec::gaussian(0.7).sample(20, seed).unwrap();
        let grid = bqi_core::prior::WeightedGrid::uniform(inputs);
        let mode = FeatureMode::Sampled { shots, seed };
        let a = build_feature_table(&c, &grid, &TargetSpec::Identity, mode).unwrap();
        let b = build_feature_table(&c, &grid, &TargetSpec::Identity, mode).unwrap();
        prop_assert_eq!(&a, &b);
        for n in 0..a.len() {
            let row = a.rows.row(n);
            prop_assert!((row.sum() - 1.0).abs() < 1e-12);
            for &x in row.iter() {
                let k = x * shots as f64;
                prop_assert!((k - k.round()).abs() < 1e-9 && x >= 0.0);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn direct_traces_are_deterministic_and_monotone(
        a in -1.0f64..1.0,
        b in -1.0f64..1.0,
        seed in 0u64..1000,
        budget in 20usize..120,
    ) {
        let f = |p: &[f64]| a * p[0].cos() + b * (p[1] - 1.0).sin() + 0.3 * (p[0] + p[1]).cos();
        let s = DirectSettings { budget, seed, ..Default::default() };
        let x = direct_optimize(&f, SearchBox::full_turn(2), s.clone()).unwrap();
        let y = direct_optimize(&f, SearchBox::full_turn(2), s).unwrap();
        prop_assert_eq!(&x, &y);
        prop_assert!(x.evaluations() <= budget);
        prop_assert!(x.best_so_far().windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(x.records.iter().all(|r| r.point.iter().all(|&t| (0.0..=TAU).contains(&t))));
        prop_assert_eq!(x.best_value, f(&x.best_point));
    }
}
