//! DIRECT (dividing rectangles) with a surrogate-guided extra candidate per
//! epoch.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::surrogate::{surrogate_fit_from, KernelParams, Surrogate, DEFAULT_MLE_STARTS};
use crate::error::{invalid, Error, Result};

/// Substitute for non-finite objective values.
const FAILED_VALUE: f64 = 1e300;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub periodic: Vec<bool>,
}

impl SearchBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, periodic: Vec<bool>) -> Result<Self> {
        let b = Self { lower, upper, periodic };
        b.validate()?;
        Ok(b)
    }

    /// `[0, 2π)` in every dimension.
    pub fn full_turn(dim: usize) -> Self {
        Self { lower: vec![0.0; dim], upper: vec![TAU; dim], periodic: vec![true; dim] }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.lower.len();
        if n == 0 || self.upper.len() != n || self.periodic.len() != n {
            return Err(invalid("search box bounds must be non-empty and of equal length"));
        }
        for d in 0..n {
            let (lo, hi) = (self.lower[d], self.upper[d]);
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(invalid(format!("search box dimension {d} has invalid bounds [{lo}, {hi}]")));
            }
            if self.periodic[d] && hi - lo > TAU + 1e-12 {
                return Err(invalid(format!("periodic dimension {d} is wider than 2π")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn to_point(&self, unit: &[f64]) -> Vec<f64> {
        unit.iter()
            .enumerate()
            .map(|(d, t)| self.lower[d] + t * (self.upper[d] - self.lower[d]))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rectangle {
    /// Center in unit-cube coordinates.
    pub center: Vec<f64>,
    /// Trisection count per dimension; the side is `3^-depth`.
    pub depths: Vec<u32>,
    pub value: f64,
}

impl Rectangle {
    pub fn side(&self, d: usize) -> f64 {
        3f64.powi(-(self.depths[d] as i32))
    }

    /// Half-diagonal in unit coordinates, from sorted depths so that equal
    /// shapes give bit-identical sizes.
    pub fn size(&self) -> f64 {
        let mut depths = self.depths.clone();
        depths.sort_unstable();
        0.5 * depths.iter().map(|&k| 9f64.powi(-(k as i32))).sum::<f64>().sqrt()
    }

    pub fn half_widths(&self, b: &SearchBox) -> Vec<f64> {
        (0..self.depths.len())
            .map(|d| 0.5 * self.side(d) * (b.upper[d] - b.lower[d]))
            .collect()
    }

    fn longest_dims(&self) -> Vec<usize> {
        let min = *self.depths.iter().min().expect("non-empty");
        (0..self.depths.len()).filter(|&d| self.depths[d] == min).collect()
    }

    fn split_dims(&self, rule: SplitRule) -> Vec<usize> {
        let mut dims = self.longest_dims();
        if rule == SplitRule::Single {
            dims.truncate(1);
        }
        dims
    }

    /// Centers one third of a side away along `d`, below then above.
    fn children_along(&self, d: usize) -> [Vec<f64>; 2] {
        let step = self.side(d) / 3.0;
        let mut lo = self.center.clone();
        let mut hi = self.center.clone();
        lo[d] -= step;
        hi[d] += step;
        [lo, hi]
    }
}

/// Which longest sides a selected rectangle is trisected along.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRule {
    /// The lowest-index longest side.
    Single,
    /// Every longest side, best sampled side first, as in the original DIRECT.
    #[default]
    AllLongest,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DirectSettings {
    /// Maximum number of objective evaluations.
    pub budget: usize,
    /// Minimum relative improvement required of potentially optimal rectangles.
    pub epsilon: f64,
    pub kappa_start: f64,
    pub kappa_end: f64,
    /// Surrogate hyperparameter refit cadence in epochs.
    pub refit_every: usize,
    /// Stop after this many epochs without improvement.
    pub stagnation_epochs: usize,
    pub use_surrogate: bool,
    /// Cap on the points the surrogate is conditioned on.
    pub surrogate_points: usize,
    pub mle_starts: usize,
    pub split: SplitRule,
    pub seed: u64,
}

impl Default for DirectSettings {
    fn default() -> Self {
        Self {
            budget: 5000,
            epsilon: 1e-4,
            kappa_start: 2.0,
            kappa_end: 0.1,
            refit_every: 5,
            stagnation_epochs: 30,
            use_surrogate: true,
            surrogate_points: 100,
            mle_starts: DEFAULT_MLE_STARTS,
            split: SplitRule::default(),
            seed: 0,
        }
    }
}

impl DirectSettings {
    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(invalid("budget must be at least 1"));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(invalid("epsilon must be non-negative"));
        }
        if !(self.kappa_start > 0.0 && self.kappa_end > 0.0) {
            return Err(invalid("exploration weights must be positive"));
        }
        if self.refit_every == 0 || self.stagnation_epochs == 0 {
            return Err(invalid("refit cadence and stagnation window must be positive"));
        }
        if self.use_surrogate && self.surrogate_points < 2 {
            return Err(invalid("surrogate needs at least two points"));
        }
        Ok(())
    }

    /// Geometric decay from `kappa_start` to `kappa_end` over the budget.
    pub fn kappa(&self, evaluations: usize) -> f64 {
        let t = (evaluations as f64 / self.budget as f64).min(1.0);
        self.kappa_start * (self.kappa_end / self.kappa_start).powf(t)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub evaluation: usize,
    pub epoch: usize,
    pub value: f64,
    pub best: f64,
    pub point: Vec<f64>,
    pub rectangles: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Budget,
    Stagnation,
    Paused,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerTrace {
    pub records: Vec<TraceRecord>,
    pub best_point: Vec<f64>,
    pub best_value: f64,
    pub epochs: usize,
    pub stop_reason: StopReason,
    /// Epochs in which the surrogate could not be fitted.
    pub surrogate_failures: usize,
}

impl OptimizerTrace {
    pub fn evaluations(&self) -> usize {
        self.records.len()
    }

    pub fn best_so_far(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.best).collect()
    }
}

/// Resumable optimizer state; serializes to a JSON checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectState {
    pub settings: DirectSettings,
    pub search_box: SearchBox,
    pub rectangles: Vec<Rectangle>,
    pub trace: OptimizerTrace,
    pub stagnant_epochs: usize,
    pub kernel: Option<KernelParams>,
}

fn clean(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        FAILED_VALUE
    }
}

fn evaluate_all<F>(f: &F, b: &SearchBox, units: &[Vec<f64>]) -> Vec<(Vec<f64>, f64)>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    units
        .par_iter()
        .map(|u| {
            let p = b.to_point(u);
            let v = clean(f(&p));
            (p, v)
        })
        .collect()
}

/// Indices of potentially optimal rectangles, largest size first. One
/// rectangle (lowest value, then lowest index) represents each size class.
pub fn potentially_optimal(rects: &[Rectangle], epsilon: f64) -> Vec<usize> {
    let mut classes: BTreeMap<u64, usize> = BTreeMap::new();
    for (i, r) in rects.iter().enumerate() {
        let key = r.size().to_bits();
        match classes.get(&key) {
            Some(&j) if rects[j].value <= r.value => {}
            _ => {
                classes.insert(key, i);
            }
        }
    }
    let reps: Vec<(f64, f64, usize)> = classes
        .values()
        .map(|&i| (rects[i].size(), rects[i].value, i))
        .collect();
    let f_min = reps.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    let mut out = Vec::new();
    for (j, &(dj, fj, idx)) in reps.iter().enumerate() {
        let k_low = reps[..j]
            .iter()
            .map(|&(di, fi, _)| (fj - fi) / (dj - di))
            .fold(0.0f64, f64::max);
        let k_up = reps[j + 1..]
            .iter()
            .map(|&(di, fi, _)| (fi - fj) / (di - dj))
            .fold(f64::INFINITY, f64::min);
        if k_low > k_up {
            continue;
        }
        if k_up.is_finite() && fj - k_up * dj > f_min - epsilon * f_min.abs() {
            continue;
        }
        out.push(idx);
    }
    out.reverse();
    out
}

impl DirectState {
    /// Evaluates the box center and returns the initial state.
    pub fn start<F>(f: &F, search_box: SearchBox, settings: DirectSettings) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        search_box.validate()?;
        settings.validate()?;
        let dim = search_box.dim();
        let center = vec![0.5; dim];
        let (point, value) = evaluate_all(f, &search_box, std::slice::from_ref(&center)).remove(0);
        Ok(Self {
            rectangles: vec![Rectangle { center, depths: vec![0; dim], value }],
            trace: OptimizerTrace {
                records: vec![TraceRecord {
                    evaluation: 0,
                    epoch: 0,
                    value,
                    best: value,
                    point: point.clone(),
                    rectangles: 1,
                }],
                best_point: point,
                best_value: value,
                epochs: 0,
                stop_reason: StopReason::Paused,
                surrogate_failures: 0,
            },
            settings,
            search_box,
            stagnant_epochs: 0,
            kernel: None,
        })
    }

    pub fn is_finished(&self) -> bool {
        self.trace.stop_reason != StopReason::Paused
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Numerical(format!("checkpoint encoding failed: {e}")))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let state: Self =
            serde_json::from_str(s).map_err(|e| invalid(format!("checkpoint is not readable: {e}")))?;
        state.search_box.validate()?;
        state.settings.validate()?;
        Ok(state)
    }

    fn surrogate_data(&self) -> (Vec<Vec<f64>>, Vec<f64>) {
        let recs = &self.trace.records;
        let cap = self.settings.surrogate_points;
        let mut chosen: Vec<usize> = if recs.len() <= cap {
            (0..recs.len()).collect()
        } else {
            let mut by_value: Vec<usize> = (0..recs.len()).collect();
            by_value.sort_by(|&a, &b| recs[a].value.total_cmp(&recs[b].value).then(a.cmp(&b)));
            let mut picked: Vec<usize> = by_value.into_iter().take(cap / 2).collect();
            for i in (0..recs.len()).rev() {
                if picked.len() >= cap {
                    break;
                }
                if !picked.contains(&i) {
                    picked.push(i);
                }
            }
            picked
        };
        chosen.sort_unstable();
        chosen.retain(|&i| recs[i].value < FAILED_VALUE);
        (
            chosen.iter().map(|&i| recs[i].point.clone()).collect(),
            chosen.iter().map(|&i| recs[i].value).collect(),
        )
    }

    fn surrogate(&mut self) -> Option<Surrogate> {
        let (points, values) = self.surrogate_data();
        if points.len() < 2 {
            return None;
        }
        let epoch = self.trace.epochs;
        let refit = self.kernel.is_none() || epoch.is_multiple_of(self.settings.refit_every);
        let fitted = if refit {
            let seed = self.settings.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            surrogate_fit_from(&points, &values, self.settings.mle_starts, seed, self.kernel.as_ref())
        } else {
            let params = self.kernel.clone().expect("checked above");
            Surrogate::condition(params, points, values)
        };
        match fitted {
            Ok(s) => {
                self.kernel = Some(s.params.clone());
                Some(s)
            }
            Err(e) => {
                log::debug!("surrogate unavailable at epoch {epoch}: {e}");
                None
            }
        }
    }

    fn surrogate_pick(&mut self, exclude: &[usize]) -> Option<usize> {
        let s = self.surrogate()?;
        let kappa = self.settings.kappa(self.trace.evaluations());
        let split = self.settings.split;
        let b = &self.search_box;
        let scores: Vec<(usize, f64)> = self
            .rectangles
            .par_iter()
            .enumerate()
            .filter(|(i, _)| !exclude.contains(i))
            .map(|(i, r)| {
                let score = r
                    .split_dims(split)
                    .into_iter()
                    .flat_map(|d| r.children_along(d))
                    .map(|c| {
                        let (mu, sd) = s.predict(&b.to_point(&c));
                        mu - kappa * sd
                    })
                    .fold(f64::INFINITY, f64::min);
                (i, score)
            })
            .collect();
        scores
            .into_iter()
            .filter(|(_, s)| s.is_finite())
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
            .map(|(i, _)| i)
    }

    /// Runs epochs until the budget, stagnation or `max_epochs` (pause).
    pub fn run<F>(&mut self, f: &F, max_epochs: Option<usize>) -> Result<()>
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        let mut ran = 0usize;
        loop {
            let used = self.trace.evaluations();
            if used >= self.settings.budget {
                self.trace.stop_reason = StopReason::Budget;
                return Ok(());
            }
            if self.stagnant_epochs >= self.settings.stagnation_epochs {
                self.trace.stop_reason = StopReason::Stagnation;
                return Ok(());
            }
            if max_epochs.is_some_and(|m| ran >= m) {
                self.trace.stop_reason = StopReason::Paused;
                return Ok(());
            }
            self.epoch(f)?;
            ran += 1;
        }
    }

    fn epoch<F>(&mut self, f: &F) -> Result<()>
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        let mut selected = potentially_optimal(&self.rectangles, self.settings.epsilon);
        if self.settings.use_surrogate {
            match self.surrogate_pick(&selected) {
                Some(i) => selected.push(i),
                None => self.trace.surrogate_failures += 1,
            }
        }
        let mut remaining = self.settings.budget - self.trace.evaluations();
        let mut plans: Vec<(usize, Vec<usize>)> = Vec::with_capacity(selected.len());
        let mut units = Vec::new();
        for &i in &selected {
            if remaining == 0 {
                break;
            }
            let mut dims = self.rectangles[i].split_dims(self.settings.split);
            dims.truncate(remaining.div_ceil(2));
            for &d in &dims {
                let kids = self.rectangles[i].children_along(d);
                let take = remaining.min(2);
                units.extend(kids.into_iter().take(take));
                remaining -= take;
            }
            plans.push((i, dims));
        }
        let mut results = evaluate_all(f, &self.search_box, &units).into_iter();
        let mut unit_iter = units.into_iter();

        let epoch = self.trace.epochs + 1;
        let before = self.trace.best_value;
        let mut count = self.rectangles.len();
        for (i, dims) in plans {
            // children per split side, in evaluation order
            let mut sides: Vec<(usize, Vec<(Vec<f64>, Vec<f64>, f64)>)> = Vec::with_capacity(dims.len());
            for &d in &dims {
                let mut kids = Vec::with_capacity(2);
                for _ in 0..2 {
                    if let (Some(center), Some((point, value))) = (unit_iter.next(), results.next()) {
                        kids.push((center, point, value));
                    }
                }
                sides.push((d, kids));
            }
            for (_, kids) in &sides {
                for (_, point, value) in kids {
                    if *value < self.trace.best_value {
                        self.trace.best_value = *value;
                        self.trace.best_point = point.clone();
                    }
                    count += 1;
                    let evaluation = self.trace.records.len();
                    self.trace.records.push(TraceRecord {
                        evaluation,
                        epoch,
                        value: *value,
                        best: self.trace.best_value,
                        point: point.clone(),
                        rectangles: count,
                    });
                }
            }
            // the side with the best child is cut first and so keeps the
            // largest children
            let score = |kids: &[(Vec<f64>, Vec<f64>, f64)]| kids.iter().map(|k| k.2).fold(f64::INFINITY, f64::min);
            sides.sort_by(|a, b| score(&a.1).total_cmp(&score(&b.1)).then(a.0.cmp(&b.0)));
            let mut depths = self.rectangles[i].depths.clone();
            for (d, kids) in sides {
                depths[d] += 1;
                for (center, _, value) in kids {
                    self.rectangles.push(Rectangle { center, depths: depths.clone(), value });
                }
            }
            self.rectangles[i].depths = depths;
        }
        self.trace.epochs = epoch;
        if self.trace.best_value < before {
            self.stagnant_epochs = 0;
        } else {
            self.stagnant_epochs += 1;
        }
        Ok(())
    }

    pub fn trace(&self) -> &OptimizerTrace {
        &self.trace
    }

    pub fn max_size(&self) -> f64 {
        self.rectangles.iter().map(Rectangle::size).fold(0.0, f64::max)
    }
}

/// Minimizes `f` over the box; budget exhaustion returns the best point found.
pub fn direct_optimize<F>(f: &F, search_box: SearchBox, settings: DirectSettings) -> Result<OptimizerTrace>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let mut state = DirectState::start(f, search_box, settings)?;
    state.run(f, None)?;
    Ok(state.trace)
}
