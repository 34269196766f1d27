//! The post-reservoir loss: circuit parameters in, readout-minimized loss out.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::prior::{ExpectationMethod, PriorSpec, WeightedGrid};
use crate::readout::{
    build_feature_table, table_optimal_weights, FeatureMode, LinearReadout, ShotBudget, CLOSED_FORM_RIDGE,
};
use crate::spin::{CircuitParams, FixedRotationPlacement, PreparedCircuit, SpinAlgebra};
use crate::target::TargetSpec;

/// Sensor, task and budget shared by every evaluation of the objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorTask {
    pub qubits: usize,
    pub n_en: usize,
    pub n_de: usize,
    #[serde(default)]
    pub placement: FixedRotationPlacement,
    pub prior: PriorSpec,
    pub target: TargetSpec,
    pub shots: ShotBudget,
}

impl SensorTask {
    pub fn validate(&self) -> Result<()> {
        SpinAlgebra::new(self.qubits)?;
        self.prior.validate()?;
        self.target.validate()?;
        self.shots.validate()
    }

    pub fn num_params(&self) -> usize {
        3 * (self.n_en + self.n_de)
    }

    pub fn params(&self, flat: &[f64]) -> Result<CircuitParams> {
        CircuitParams::from_flat(self.n_en, self.n_de, flat)
    }
}

/// Exact-probability objective on a fixed weighted grid.
#[derive(Clone, Debug)]
pub struct Objective {
    pub task: SensorTask,
    pub grid: WeightedGrid,
    pub ridge: f64,
    algebra: SpinAlgebra,
}

impl Objective {
    pub fn new(task: SensorTask, method: ExpectationMethod) -> Result<Self> {
        task.validate()?;
        let grid = task.prior.weighted_grid(method)?;
        Self::with_grid(task, grid)
    }

    pub fn with_grid(task: SensorTask, grid: WeightedGrid) -> Result<Self> {
        task.validate()?;
        if grid.is_empty() || grid.nodes.len() != grid.weights.len() {
            return Err(invalid("objective grid must be non-empty with one weight per node"));
        }
        let algebra = SpinAlgebra::new(task.qubits)?;
        Ok(Self { task, grid, ridge: CLOSED_FORM_RIDGE, algebra })
    }

    pub fn algebra(&self) -> &SpinAlgebra {
        &self.algebra
    }

    pub fn circuit(&self, params: &CircuitParams) -> Result<PreparedCircuit> {
        PreparedCircuit::new(&self.algebra, params, self.task.placement)
    }

    pub fn evaluate(&self, params: &CircuitParams) -> Result<(f64, LinearReadout)> {
        post_reservoir_loss(params, self)
    }

    /// Loss at flat parameters; failures map to `NaN`.
    pub fn loss(&self, flat: &[f64]) -> f64 {
        self.task
            .params(flat)
            .and_then(|p| self.evaluate(&p))
            .map_or(f64::NAN, |(l, _)| l)
    }
}

/// `min_w` of the expected squared loss at budget `S`, with the minimizing readout.
pub fn post_reservoir_loss(params: &CircuitParams, objective: &Objective) -> Result<(f64, LinearReadout)> {
    if params.n_en != objective.task.n_en || params.n_de != objective.task.n_de {
        return Err(invalid("circuit layer counts do not match the objective"));
    }
    let circuit = objective.circuit(params)?;
    let table = build_feature_table(&circuit, &objective.grid, &objective.task.target, FeatureMode::Exact)?;
    let (readout, loss) = table_optimal_weights(&table, objective.task.shots, objective.ridge)?;
    Ok((loss, readout))
}
