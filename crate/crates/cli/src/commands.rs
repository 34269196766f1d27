//! One function per subcommand; each fills a bundle directory.

use bqi_core::eigentask::{eigentask_curves, expected_snr, export_basis, solve_eigentasks, truncated_readout};
use bqi_core::info::{log_log_slope, reference_curves, verify_expansion};
use bqi_core::opt::{train, OptimizerTrace, TrainOutcome};
use bqi_core::prior::{ExpectationMethod, PriorSpec, WeightedGrid};
use bqi_core::readout::{
    bayes_risk, build_feature_table, compute_moments, empirical_weights, plugin_risk, FeatureMode, RiskReport,
    ShotBudget, EMPIRICAL_RIDGE,
};
use bqi_core::spin::{CircuitParams, PreparedCircuit, SpinAlgebra};
use bqi_core::target::TargetSpec;
use log::info;
use serde_json::{json, Value};

use crate::bundle::{db3, params_json, Bundle};
use crate::config::ExperimentConfig;
use crate::CliError;

fn runtime(e: bqi_core::Error) -> CliError {
    CliError::Runtime(e.to_string())
}

fn risk_json(r: &RiskReport) -> Value {
    json!({
        "bmse": r.bmse,
        "bmse_db": db3(r.bmse_db),
        "capacity": r.capacity,
        "mse_m": r.mse_m,
        "prior_variance": r.prior_variance,
    })
}

fn circuit(cfg: &ExperimentConfig, qubits: usize, params: &CircuitParams) -> Result<PreparedCircuit, CliError> {
    let alg = SpinAlgebra::new(qubits).map_err(runtime)?;
    PreparedCircuit::new(&alg, params, cfg.system.placement).map_err(runtime)
}

fn train_task(cfg: &ExperimentConfig, qubits: usize, target: TargetSpec) -> Result<TrainOutcome, CliError> {
    let task = cfg.task_with(qubits, target)?;
    info!("training L={qubits} n_en={} n_de={} f*={}", task.n_en, task.n_de, task.target.label());
    let out = train(&task, &cfg.optimizer).map_err(runtime)?;
    info!("trained in {} evaluations: {:?} dB", out.evaluations(), db3(out.risk.bmse_db));
    Ok(out)
}

fn outcome_json(out: &TrainOutcome) -> Value {
    json!({
        "risk": risk_json(&out.risk),
        "params": params_json(&out.params.to_flat()),
        "readout_weights": out.readout.weights,
        "evaluations": out.evaluations(),
        "coarse_loss": out.coarse_loss,
        "refined_loss": out.refined_loss,
        "coarse_stop": out.coarse_trace.stop_reason,
        "refine_stop": out.refine_trace.as_ref().map(|t| t.stop_reason),
        "polish_stop": out.polish_trace.as_ref().map(|t| t.stop_reason),
    })
}

fn stage_traces<'a>(out: &'a TrainOutcome, prefix: &str) -> Vec<(String, &'a OptimizerTrace)> {
    let mut v = vec![(format!("{prefix}coarse"), &out.coarse_trace)];
    if let Some(t) = &out.refine_trace {
        v.push((format!("{prefix}refine"), t));
    }
    if let Some(t) = &out.polish_trace {
        v.push((format!("{prefix}polish"), t));
    }
    v
}

/// Params from the config, or trained ones when none are given.
fn resolve_params(cfg: &ExperimentConfig) -> Result<(CircuitParams, Option<TrainOutcome>), CliError> {
    match cfg.fixed_params() {
        Some(p) => Ok((p, None)),
        None if cfg.system.n_en + cfg.system.n_de == 0 => Ok((CircuitParams::zeros(0, 0), None)),
        None => {
            let out = train_task(cfg, cfg.system.qubits, cfg.target_spec()?)?;
            Ok((out.params.clone(), Some(out)))
        }
    }
}

/// Readout regressed on `train_samples` sampled histograms, scored exactly.
fn empirical_risk(cfg: &ExperimentConfig, c: &PreparedCircuit, target: &TargetSpec) -> Result<Value, CliError> {
    let n = cfg.dataset.train_samples;
    if n == 0 {
        return Ok(Value::Null);
    }
    let inputs = cfg.prior.sample(n, cfg.dataset.seed).map_err(runtime)?;
    let mode = match cfg.shots {
        ShotBudget::Finite(shots) => FeatureMode::Sampled { shots, seed: cfg.dataset.seed },
        ShotBudget::Infinite => FeatureMode::Exact,
    };
    let table = build_feature_table(c, &WeightedGrid::uniform(inputs), target, mode).map_err(runtime)?;
    let readout = empirical_weights(&table, EMPIRICAL_RIDGE).map_err(runtime)?;
    let risk = bayes_risk(c, &readout, &cfg.prior, target, cfg.shots, cfg.report_method()).map_err(runtime)?;
    Ok(json!({ "train_samples": n, "risk": risk_json(&risk) }))
}

pub fn cmd_train(cfg: &ExperimentConfig, bundle: &mut Bundle) -> Result<(), CliError> {
    let target = cfg.target_spec()?;
    let out = train_task(cfg, cfg.system.qubits, target.clone())?;
    let c = circuit(cfg, cfg.system.qubits, &out.params)?;
    let empirical = empirical_risk(cfg, &c, &target)?;
    let mut results = outcome_json(&out);
    results["command"] = json!("train");
    results["target"] = json!(target.label());
    results["empirical"] = empirical;
    bundle.json("results.json", &results)?;
    bundle.mse_curve(&out.risk.mse_curve)?;
    bundle.traces(&stage_traces(&out, ""))
}

pub fn cmd_compare(cfg: &ExperimentConfig, bundle: &mut Bundle) -> Result<(), CliError> {
    let target = cfg.target_spec()?;
    let direct = train_task(cfg, cfg.system.qubits, target.clone())?;
    // the indirect protocol estimates u itself and maps it through f*
    let proxy = if target == TargetSpec::Identity {
        None
    } else {
        Some(train_task(cfg, cfg.system.qubits, TargetSpec::Identity)?)
    };
    let ind = proxy.as_ref().unwrap_or(&direct);
    let c = circuit(cfg, cfg.system.qubits, &ind.params)?;
    let method = cfg.report_method();
    let indirect = plugin_risk(
        &c,
        &ind.readout,
        &cfg.prior,
        &target,
        cfg.shots,
        method,
        cfg.compare.draws,
        cfg.dataset.seed,
    )
    .map_err(runtime)?;
    let direct_db = db3(direct.risk.bmse_db);
    let indirect_db = db3(bqi_core::readout::to_db(indirect));
    let gap = match (indirect_db, direct_db) {
        (Some(i), Some(d)) => db3(Some(i - d)),
        _ => None,
    };
    let results = json!({
        "command": "compare",
        "target": target.label(),
        "direct": outcome_json(&direct),
        "indirect": {
            "bmse": indirect,
            "bmse_db": indirect_db,
            "params": params_json(&ind.params.to_flat()),
        },
        "direct_db": direct_db,
        "indirect_db": indirect_db,
        "gap_db": gap,
    });
    bundle.json("results.json", &results)?;
    bundle.mse_curve(&direct.risk.mse_curve)?;
    let mut traces = stage_traces(&direct, "direct_");
    if let Some(p) = &proxy {
        traces.extend(stage_traces(p, "indirect_"));
    }
    bundle.traces(&traces)
}

pub fn cmd_scaling(cfg: &ExperimentConfig, bundle: &mut Bundle) -> Result<(), CliError> {
    let target = cfg.target_spec()?;
    let qubits = &cfg.scaling.qubits;
    let outs: Vec<TrainOutcome> =
        qubits.iter().map(|&l| train_task(cfg, l, target.clone())).collect::<Result<_, _>>()?;
    let sigma = match cfg.prior {
        PriorSpec::Gaussian { sigma, .. } | PriorSpec::TruncatedGaussian { sigma, .. } => sigma,
        PriorSpec::Mixture { .. } => cfg.prior.variance().sqrt(),
    };
    let refs = reference_curves(qubits, sigma).map_err(runtime)?;
    let mse_m: Vec<f64> = outs.iter().map(|o| o.risk.mse_m.unwrap_or(f64::NAN)).collect();
    let xs: Vec<f64> = qubits.iter().map(|&l| l as f64).collect();
    let slope = if qubits.len() < 2 { None } else { log_log_slope(&xs, &mse_m) };
    let rows: Vec<Value> = qubits
        .iter()
        .zip(&outs)
        .zip(&refs)
        .map(|((&l, o), r)| {
            json!({ "qubits": l, "risk": risk_json(&o.risk), "params": params_json(&o.params.to_flat()),
                    "evaluations": o.evaluations(), "sql": r.sql, "hl": r.hl, "oqi_mse_m": r.oqi_mse_m })
        })
        .collect();
    bundle.json("results.json", &json!({ "command": "scaling", "rows": rows, "mse_m_slope": slope }))?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    bundle.csv(
        "mse_curve.csv",
        &["qubits", "bmse", "bmse_db", "mse_m", "sql", "hl", "oqi_mse_m"],
        qubits.iter().zip(&outs).zip(&refs).map(|((&l, o), r)| {
            vec![
                l.to_string(),
                o.risk.bmse.to_string(),
                opt(db3(o.risk.bmse_db)),
                opt(o.risk.mse_m),
                r.sql.to_string(),
                r.hl.to_string(),
                opt(r.oqi_mse_m),
            ]
        }),
    )?;
    let traces: Vec<_> = qubits
        .iter()
        .zip(&outs)
        .flat_map(|(&l, o)| stage_traces(o, &format!("L{l}_")))
        .collect();
    bundle.traces(&traces)
}

pub fn cmd_eigentasks(cfg: &ExperimentConfig, bundle: &mut Bundle) -> Result<(), CliError> {
    let target = cfg.target_spec()?;
    let (params, trained) = resolve_params(cfg)?;
    let c = circuit(cfg, cfg.system.qubits, &params)?;
    let method = cfg.report_method();
    let grid = cfg.prior.weighted_grid(method).map_err(runtime)?;
    let table = build_feature_table(&c, &grid, &target, FeatureMode::Exact).map_err(runtime)?;
    let moments = compute_moments(&table).map_err(runtime)?;
    let basis = solve_eigentasks(&moments).map_err(runtime)?;
    let k_l = cfg.eigentasks.retained;
    if k_l > basis.rank() {
        return Err(CliError::Runtime(format!("only {} eigentasks are resolvable, {k_l} requested", basis.rank())));
    }
    let (truncated, _) = truncated_readout(&basis, k_l, &moments, cfg.shots).map_err(runtime)?;
    let (full, _) = truncated_readout(&basis, basis.rank(), &moments, cfg.shots).map_err(runtime)?;
    let risk_t = bayes_risk(&c, &truncated, &cfg.prior, &target, cfg.shots, method).map_err(runtime)?;
    let risk_f = bayes_risk(&c, &full, &cfg.prior, &target, cfg.shots, method).map_err(runtime)?;

    let (lo, hi) = grid.nodes.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &u| (a.min(u), b.max(u)));
    let m = cfg.eigentasks.curve_points;
    let nodes: Vec<f64> = (0..m).map(|i| lo + (hi - lo) * i as f64 / (m - 1) as f64).collect();
    let indices: Vec<usize> = (0..basis.rank()).collect();
    let curves = eigentask_curves(&basis, &indices, &c, &nodes, cfg.shots).map_err(runtime)?;
    let snr: Vec<_> = indices.iter().map(|&j| expected_snr(&basis, j, cfg.shots)).collect::<Result<_, _>>().map_err(runtime)?;
    bundle.json(
        "eigentasks.json",
        &json!({ "basis": export_basis(&basis, cfg.shots), "snr": snr, "curve_nodes": nodes, "curves": curves }),
    )?;
    let results = json!({
        "command": "eigentasks",
        "params": params_json(&params.to_flat()),
        "retained": k_l,
        "rank": basis.rank(),
        "truncated": risk_json(&risk_t),
        "full": risk_json(&risk_f),
        "trained": trained.as_ref().map(outcome_json),
    });
    bundle.json("results.json", &results)?;
    bundle.mse_curve(&risk_t.mse_curve)?;
    if let Some(out) = &trained {
        bundle.traces(&stage_traces(out, ""))?;
    }
    Ok(())
}

pub fn cmd_info(cfg: &ExperimentConfig, bundle: &mut Bundle) -> Result<(), CliError> {
    let (params, trained) = resolve_params(cfg)?;
    let c = circuit(cfg, cfg.system.qubits, &params)?;
    let report = verify_expansion(&c, &cfg.info.sigmas).map_err(runtime)?;
    bundle.json(
        "results.json",
        &json!({
            "command": "info",
            "params": params_json(&params.to_flat()),
            "fisher": report.fisher,
            "bhattacharyya": report.bhattacharyya,
            "sigma8_coefficient": report.sigma8_coefficient,
            "residual_slope": report.residual_slope,
            "rows": report.rows,
            "warnings": report.warnings,
        }),
    )?;
    bundle.csv(
        "mse_curve.csv",
        &["sigma", "exact", "expansion", "residual", "fisher_estimate"],
        report
            .rows
            .iter()
            .map(|r| [r.sigma, r.exact, r.expansion, r.residual, r.fisher_estimate].map(|v| v.to_string())),
    )?;
    if let Some(out) = &trained {
        bundle.traces(&stage_traces(out, ""))?;
    }
    Ok(())
}

/// Raw shot counts at inputs drawn from the prior.
pub fn cmd_sample(cfg: &ExperimentConfig, bundle: &mut Bundle) -> Result<(), CliError> {
    let ShotBudget::Finite(shots) = cfg.shots else {
        return Err(CliError::Config("shots: sampling needs a finite shot budget".into()));
    };
    let target = cfg.target_spec()?;
    let (params, trained) = resolve_params(cfg)?;
    let c = circuit(cfg, cfg.system.qubits, &params)?;
    let inputs = cfg.prior.sample(cfg.dataset.sample_inputs, cfg.dataset.seed).map_err(runtime)?;
    let mode = FeatureMode::Sampled { shots, seed: cfg.dataset.seed };
    let table = build_feature_table(&c, &WeightedGrid::uniform(inputs), &target, mode).map_err(runtime)?;
    let k = table.dim();
    let mut header = vec!["u".to_string(), "target".to_string()];
    header.extend((0..k).map(|j| format!("count_{j}")));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = (0..table.len()).map(|n| {
        let mut row = vec![table.inputs[n].to_string(), table.targets[n].to_string()];
        row.extend(table.rows.row(n).iter().map(|x| ((x * shots as f64).round() as u64).to_string()));
        row
    });
    bundle.csv("shots.csv", &header_refs, rows)?;
    bundle.json(
        "results.json",
        &json!({
            "command": "sample",
            "params": params_json(&params.to_flat()),
            "inputs": table.len(),
            "shots": shots,
            "outcomes": k,
            "method": ExpectationMethod::MonteCarlo { samples: table.len(), seed: cfg.dataset.seed },
        }),
    )?;
    if let Some(out) = &trained {
        bundle.traces(&stage_traces(out, ""))?;
    }
    Ok(())
}
