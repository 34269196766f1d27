//! End-to-end training: a coarse global search on a Gauss–Hermite objective
//! followed by a refined search in a box around the coarse optimum.

use std::f64::consts::{PI, TAU};
use serde::{Deserialize, Serialize};

use std::cell::RefCell;

use super::direct::{direct_optimize, DirectSettings, OptimizerTrace, SearchBox, StopReason, TraceRecord};
use super::objective::{Objective, SensorTask};
use super::surrogate::nelder_mead;
use crate::error::{invalid, Result};
use crate::prior::{ExpectationMethod, PriorSpec, WeightedGrid, DEFAULT_GRID_POINTS};
use crate::readout::{bayes_risk, LinearReadout, RiskReport};
use crate::spin::CircuitParams;

pub const DEFAULT_QUADRATURE_NODES: usize = 75;
pub const DEFAULT_REFINE_POINTS: usize = 2049;

/// How the first-stage box is laid out.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoxMode {
    /// `[0, 2π)` for every angle.
    FullTurn,
    /// Rotations span `[0, 2π)`; twist angles span `[-τ, τ]`, with
    /// `τ = twist_scale · 2π / L` capped at `π`.
    Scaled { twist_scale: f64 },
}

impl Default for BoxMode {
    fn default() -> Self {
        Self::Scaled { twist_scale: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSettings {
    pub direct: DirectSettings,
    pub box_mode: BoxMode,
    /// Share of the budget spent on the coarse stage; `1.0` skips refinement.
    pub coarse_fraction: f64,
    /// Share of the budget reserved for a Nelder–Mead polish of the refined
    /// optimum; `0.0` disables it.
    pub polish_fraction: f64,
    /// Initial simplex step, as a fraction of the refinement box width.
    pub polish_step: f64,
    pub quadrature_nodes: usize,
    /// Objective for the refinement stage.
    pub refine_method: ExpectationMethod,
    /// Smallest refinement half-width, as a fraction of the coarse box width.
    pub min_half_width: f64,
    /// Grid for the reported risk and the final readout.
    pub report_points: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            direct: DirectSettings::default(),
            box_mode: BoxMode::default(),
            coarse_fraction: 0.6,
            polish_fraction: 0.2,
            polish_step: 0.1,
            quadrature_nodes: DEFAULT_QUADRATURE_NODES,
            refine_method: ExpectationMethod::Grid { points: DEFAULT_REFINE_POINTS },
            min_half_width: 0.05,
            report_points: DEFAULT_GRID_POINTS,
        }
    }
}

impl TrainSettings {
    pub fn validate(&self) -> Result<()> {
        self.direct.validate()?;
        if !(self.coarse_fraction > 0.0 && self.coarse_fraction <= 1.0) {
            return Err(invalid("coarse_fraction must lie in (0, 1]"));
        }
        if !(self.polish_fraction >= 0.0 && self.coarse_fraction + self.polish_fraction <= 1.0) {
            return Err(invalid("polish_fraction must be non-negative and leave room for the coarse stage"));
        }
        if !(self.polish_step > 0.0 && self.polish_step <= 1.0) {
            return Err(invalid("polish_step must lie in (0, 1]"));
        }
        if let BoxMode::Scaled { twist_scale } = self.box_mode {
            if !(twist_scale > 0.0 && twist_scale.is_finite()) {
                return Err(invalid("twist_scale must be positive"));
            }
        }
        if !(self.min_half_width > 0.0 && self.min_half_width <= 0.5) {
            return Err(invalid("min_half_width must lie in (0, 0.5]"));
        }
        if self.report_points < 3 {
            return Err(invalid("report grid needs at least three points"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub params: CircuitParams,
    /// Readout retrained on the report grid.
    pub readout: LinearReadout,
    pub risk: RiskReport,
    pub coarse_loss: f64,
    pub refined_loss: Option<f64>,
    pub coarse_box: SearchBox,
    pub refine_box: Option<SearchBox>,
    pub coarse_trace: OptimizerTrace,
    pub refine_trace: Option<OptimizerTrace>,
    pub polish_trace: Option<OptimizerTrace>,
}

impl TrainOutcome {
    pub fn evaluations(&self) -> usize {
        self.coarse_trace.evaluations()
            + self.refine_trace.as_ref().map_or(0, |t| t.evaluations())
            + self.polish_trace.as_ref().map_or(0, |t| t.evaluations())
    }
}

fn is_twist(dim: usize) -> bool {
    dim % 3 != 2
}

pub fn coarse_box(task: &SensorTask, mode: BoxMode) -> SearchBox {
    let p = task.num_params();
    match mode {
        BoxMode::FullTurn => SearchBox::full_turn(p),
        BoxMode::Scaled { twist_scale } => {
            let tau = (twist_scale * TAU / task.qubits as f64).min(PI);
            let lower = (0..p).map(|d| if is_twist(d) { -tau } else { 0.0 }).collect();
            let upper = (0..p).map(|d| if is_twist(d) { tau } else { TAU }).collect();
            SearchBox { lower, upper, periodic: vec![true; p] }
        }
    }
}

fn signed_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// `[0.5 θ0, 1.5 θ0]` per dimension around the signed representative of
/// each angle, widened to at least `min_half_width` of the coarse width.
pub fn refine_box(theta0: &[f64], coarse: &SearchBox, min_half_width: f64) -> SearchBox {
    let mut lower = Vec::with_capacity(theta0.len());
    let mut upper = Vec::with_capacity(theta0.len());
    for (d, &t) in theta0.iter().enumerate() {
        let c = signed_angle(t);
        let floor = min_half_width * (coarse.upper[d] - coarse.lower[d]);
        let h = (0.5 * c.abs()).max(floor).min(PI);
        lower.push(c - h);
        upper.push(c + h);
    }
    SearchBox { lower, upper, periodic: vec![true; theta0.len()] }
}

/// Gauss–Hermite grid over the untruncated Gaussian parent(s) of the prior.
pub fn coarse_grid(prior: &PriorSpec, nodes: usize) -> Result<WeightedGrid> {
    prior.untruncated_quadrature_grid(nodes)
}

pub fn train(task: &SensorTask, settings: &TrainSettings) -> Result<TrainOutcome> {
    task.validate()?;
    settings.validate()?;
    if task.num_params() == 0 {
        return Err(invalid("circuit has no trainable angles"));
    }
    let budget = settings.direct.budget;
    let coarse_budget = ((budget as f64 * settings.coarse_fraction).round() as usize).clamp(1, budget);

    // one exploration schedule spans both stages; the coarse stage always
    // spends its share, the refinement may stop on stagnation
    let split_kappa = settings.direct.kappa(coarse_budget);
    let coarse_settings = DirectSettings {
        budget: coarse_budget,
        kappa_end: split_kappa,
        stagnation_epochs: usize::MAX,
        ..settings.direct.clone()
    };
    let coarse_obj = Objective::with_grid(task.clone(), coarse_grid(&task.prior, settings.quadrature_nodes)?)?;
    let cbox = coarse_box(task, settings.box_mode);
    let coarse_trace = direct_optimize(
        &|x: &[f64]| coarse_obj.loss(x),
        cbox.clone(),
        coarse_settings,
    )?;
    log::info!(
        "coarse stage: loss {:.6e} after {} evaluations",
        coarse_trace.best_value,
        coarse_trace.evaluations()
    );

    let polish_budget = (budget as f64 * settings.polish_fraction).round() as usize;
    let remaining = budget.saturating_sub(coarse_trace.evaluations() + polish_budget);
    let mut best = coarse_trace.best_point.clone();
    let refine_obj = Objective::new(task.clone(), settings.refine_method)?;
    let (refine_trace, rbox, refined_loss) = if remaining > 0 && settings.coarse_fraction < 1.0 {
        let rbox = refine_box(&best, &cbox, settings.min_half_width);
        let seed = settings.direct.seed.wrapping_add(1);
        let trace = direct_optimize(
            &|x: &[f64]| refine_obj.loss(x),
            rbox.clone(),
            DirectSettings { budget: remaining, seed, kappa_start: split_kappa, ..settings.direct.clone() },
        )?;
        // the refine box is centred on the coarse optimum, so its first
        // evaluation already covers that point
        best = trace.best_point.clone();
        log::info!("refine stage: loss {:.6e} after {} evaluations", trace.best_value, trace.evaluations());
        let loss = trace.best_value;
        (Some(trace), Some(rbox), Some(loss))
    } else {
        (None, None, None)
    };

    let used = coarse_trace.evaluations() + refine_trace.as_ref().map_or(0, |t| t.evaluations());
    let left = budget.saturating_sub(used);
    let polish_trace = if left > 0 && settings.polish_fraction > 0.0 {
        let pbox = rbox.clone().unwrap_or_else(|| refine_box(&best, &cbox, settings.min_half_width));
        let trace = polish(&|x: &[f64]| refine_obj.loss(x), &pbox, &best, left, settings.polish_step);
        if trace.best_value < refined_loss.unwrap_or(f64::INFINITY) {
            best = trace.best_point.clone();
        }
        log::info!("polish stage: loss {:.6e} after {} evaluations", trace.best_value, trace.evaluations());
        Some(trace)
    } else {
        None
    };

    let params = task.params(&best)?.canonical();
    let (readout, risk) = evaluate_params(task, &params, settings.report_points)?;
    Ok(TrainOutcome {
        params,
        readout,
        risk,
        coarse_loss: coarse_trace.best_value,
        refined_loss,
        coarse_box: cbox,
        refine_box: rbox,
        coarse_trace,
        refine_trace,
        polish_trace,
    })
}

/// Restarted Nelder–Mead from `start` in the unit coordinates of `b`, using
/// at most `budget` evaluations. Each restart halves the simplex step; the
/// run ends early when a restart brings no improvement.
pub fn polish<F>(f: &F, b: &SearchBox, start: &[f64], budget: usize, step: f64) -> OptimizerTrace
where
    F: Fn(&[f64]) -> f64,
{
    let widths: Vec<f64> = b.lower.iter().zip(&b.upper).map(|(l, u)| u - l).collect();
    let to_unit = |x: &[f64]| -> Vec<f64> { x.iter().enumerate().map(|(d, v)| (v - b.lower[d]) / widths[d]).collect() };
    let records: RefCell<Vec<TraceRecord>> = RefCell::new(Vec::new());
    let best: RefCell<(Vec<f64>, f64)> = RefCell::new((start.to_vec(), f64::INFINITY));
    let restart = RefCell::new(0usize);
    let g = |unit: &[f64]| -> f64 {
        let mut recs = records.borrow_mut();
        if recs.len() >= budget {
            return f64::INFINITY;
        }
        let point = b.to_point(unit);
        let value = f(&point);
        let mut best = best.borrow_mut();
        if value < best.1 {
            *best = (point.clone(), value);
        }
        let evaluation = recs.len();
        recs.push(TraceRecord { evaluation, epoch: *restart.borrow(), value, best: best.1, point, rectangles: 0 });
        value
    };

    let mut x = to_unit(start);
    let mut s = step;
    let mut stop = StopReason::Budget;
    let mut last = f64::INFINITY;
    while records.borrow().len() < budget {
        let left = budget - records.borrow().len();
        let (xn, fx) = nelder_mead(&g, &x, s, left);
        if !(fx < last) {
            stop = StopReason::Stagnation;
            break;
        }
        last = fx;
        x = xn;
        s *= 0.5;
        *restart.borrow_mut() += 1;
    }
    let (best_point, best_value) = best.into_inner();
    OptimizerTrace {
        records: records.into_inner(),
        best_point,
        best_value,
        epochs: restart.into_inner(),
        stop_reason: stop,
        surrogate_failures: 0,
    }
}

/// Readout trained on the report grid and the exact risk on the same grid.
pub fn evaluate_params(
    task: &SensorTask,
    params: &CircuitParams,
    report_points: usize,
) -> Result<(LinearReadout, RiskReport)> {
    let method = ExpectationMethod::Grid { points: report_points };
    let obj = Objective::new(task.clone(), method)?;
    let (_, readout) = obj.evaluate(params)?;
    let circuit = obj.circuit(params)?;
    let risk = bayes_risk(&circuit, &readout, &task.prior, &task.target, task.shots, method)?;
    Ok((readout, risk))
}
