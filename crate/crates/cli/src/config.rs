//! Experiment configuration: a single JSON document.

use std::fs;
use std::path::{Path, PathBuf};

use bqi_core::opt::{SensorTask, TrainSettings};
use bqi_core::prior::{ExpectationMethod, PriorSpec};
use bqi_core::readout::ShotBudget;
use bqi_core::spin::{CircuitParams, FixedRotationPlacement};
use bqi_core::target::TargetSpec;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const MAX_QUBITS: usize = 256;
pub const MAX_BUDGET: usize = 1_000_000;
pub const MAX_SAMPLES: usize = 10_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub qubits: usize,
    pub n_en: usize,
    pub n_de: usize,
    #[serde(default)]
    pub placement: FixedRotationPlacement,
}

/// Target as written in the config; `tabulated_file` points at a two-column
/// `u,f` CSV, resolved relative to the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetConfig {
    Identity,
    Sine { frequency: f64 },
    Constant { value: f64 },
    Tabulated { points: Vec<[f64; 2]> },
    TabulatedFile { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Single-shot training samples for the empirical readout; `0` skips it.
    pub train_samples: usize,
    /// Inputs drawn by `sample`.
    pub sample_inputs: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { train_samples: 10_000, sample_inputs: 1000, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareConfig {
    /// Shot draws per node for the plug-in risk when `S > 1`.
    pub draws: usize,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self { draws: 200 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalingConfig {
    pub qubits: Vec<usize>,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        Self { qubits: vec![4, 8, 16, 32] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EigentaskConfig {
    /// Eigentasks kept, the constant one included.
    pub retained: usize,
    /// Nodes of the exported eigentask curves.
    pub curve_points: usize,
}

impl Default for EigentaskConfig {
    fn default() -> Self {
        Self { retained: 4, curve_points: 201 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InfoConfig {
    pub sigmas: Vec<f64>,
}

impl Default for InfoConfig {
    fn default() -> Self {
        Self { sigmas: vec![0.01, 0.02, 0.03, 0.05, 0.07] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    pub prior: PriorSpec,
    pub target: TargetConfig,
    pub shots: ShotBudget,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub optimizer: TrainSettings,
    /// Fixed circuit angles for `eigentasks`, `info` and `sample`; trained when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<Vec<f64>>,
    #[serde(default)]
    pub compare: CompareConfig,
    #[serde(default)]
    pub scaling: ScalingConfig,
    #[serde(default)]
    pub eigentasks: EigentaskConfig,
    #[serde(default)]
    pub info: InfoConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("line {} column {}: {e}", e.line(), e.column())))
    }

    /// Reads, parses and validates a config; relative file references are
    /// resolved against the config's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        if let TargetConfig::TabulatedFile { path: p } = &mut cfg.target {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
            // absolute, so the echoed config resolves from any directory
            if let Ok(abs) = fs::canonicalize(&*p) {
                *p = abs;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every field violation, one `field: message` line each.
    pub fn diagnostics(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut push = |field: &str, msg: String| out.push(format!("{field}: {msg}"));
        let s = &self.system;
        if s.qubits == 0 || s.qubits > MAX_QUBITS {
            push("system.qubits", format!("must lie in 1..={MAX_QUBITS}, got {}", s.qubits));
        }
        if let Err(e) = self.prior.validate() {
            push("prior", e.to_string());
        }
        match &self.target {
            TargetConfig::TabulatedFile { path } => {
                if !path.is_file() {
                    push("target.path", format!("file {} does not exist", path.display()));
                } else if let Err(e) = read_table(path) {
                    push("target.path", e);
                }
            }
            other => {
                if let Err(e) = other.inline().expect("inline target").validate() {
                    push("target", e.to_string());
                }
            }
        }
        if let Err(e) = self.shots.validate() {
            push("shots", e.to_string());
        }
        if self.dataset.train_samples > MAX_SAMPLES {
            push("dataset.train_samples", format!("must not exceed {MAX_SAMPLES}"));
        }
        if self.dataset.sample_inputs == 0 || self.dataset.sample_inputs > MAX_SAMPLES {
            push("dataset.sample_inputs", format!("must lie in 1..={MAX_SAMPLES}"));
        }
        let budget = self.optimizer.direct.budget;
        if budget == 0 || budget > MAX_BUDGET {
            push("optimizer.direct.budget", format!("must lie in 1..={MAX_BUDGET}, got {budget}"));
        } else if let Err(e) = self.optimizer.validate() {
            push("optimizer", e.to_string());
        }
        if let Some(p) = &self.params {
            let want = 3 * (s.n_en + s.n_de);
            if p.len() != want {
                push("params", format!("expected {want} angles for n_en={} n_de={}, got {}", s.n_en, s.n_de, p.len()));
            } else if p.iter().any(|v| !v.is_finite()) {
                push("params", "angles must be finite".into());
            }
        }
        if self.compare.draws == 0 {
            push("compare.draws", "must be at least 1".into());
        }
        if self.scaling.qubits.is_empty() {
            push("scaling.qubits", "must list at least one qubit count".into());
        }
        if let Some(&l) = self.scaling.qubits.iter().find(|&&l| l == 0 || l > MAX_QUBITS) {
            push("scaling.qubits", format!("entries must lie in 1..={MAX_QUBITS}, got {l}"));
        }
        if self.eigentasks.retained == 0 {
            push("eigentasks.retained", "must be at least 1".into());
        }
        if self.eigentasks.curve_points < 2 {
            push("eigentasks.curve_points", "must be at least 2".into());
        }
        if self.info.sigmas.is_empty() || self.info.sigmas.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            push("info.sigmas", "must be a non-empty list of positive widths".into());
        }
        out
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let d = self.diagnostics();
        if d.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(d.join("\n")))
        }
    }

    pub fn target_spec(&self) -> Result<TargetSpec, CliError> {
        match &self.target {
            TargetConfig::TabulatedFile { path } => {
                read_table(path).map(|points| TargetSpec::Tabulated { points }).map_err(CliError::Config)
            }
            other => Ok(other.inline().expect("inline target")),
        }
    }

    pub fn task_with(&self, qubits: usize, target: TargetSpec) -> Result<SensorTask, CliError> {
        Ok(SensorTask {
            qubits,
            n_en: self.system.n_en,
            n_de: self.system.n_de,
            placement: self.system.placement,
            prior: self.prior.clone(),
            target,
            shots: self.shots,
        })
    }

    pub fn fixed_params(&self) -> Option<CircuitParams> {
        self.params
            .as_ref()
            .map(|p| CircuitParams::from_flat(self.system.n_en, self.system.n_de, p).expect("validated params"))
    }

    pub fn report_method(&self) -> ExpectationMethod {
        ExpectationMethod::Grid { points: self.optimizer.report_points }
    }

    /// A complete config for the benchmark sensor.
    #[cfg(test)]
    pub fn benchmark() -> Self {
        Self {
            system: SystemConfig { qubits: 32, n_en: 1, n_de: 2, placement: FixedRotationPlacement::Last },
            prior: PriorSpec::truncated_gaussian(0.7981),
            target: TargetConfig::Identity,
            shots: ShotBudget::Finite(1),
            dataset: DatasetConfig::default(),
            optimizer: TrainSettings::default(),
            params: None,
            compare: CompareConfig::default(),
            scaling: ScalingConfig::default(),
            eigentasks: EigentaskConfig::default(),
            info: InfoConfig::default(),
            output_dir: default_output_dir(),
        }
    }
}

impl TargetConfig {
    fn inline(&self) -> Option<TargetSpec> {
        match self {
            Self::Identity => Some(TargetSpec::Identity),
            Self::Sine { frequency } => Some(TargetSpec::Sine { frequency: *frequency }),
            Self::Constant { value } => Some(TargetSpec::Constant { value: *value }),
            Self::Tabulated { points } => Some(TargetSpec::Tabulated { points: points.clone() }),
            Self::TabulatedFile { .. } => None,
        }
    }
}

/// Two-column `u,f` CSV; a header row is optional.
fn read_table(path: &Path) -> Result<Vec<[f64; 2]>, String> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let mut points = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| format!("{}: {e}", path.display()))?;
        let parsed: Option<Vec<f64>> = rec.iter().map(|f| f.parse().ok()).collect();
        match parsed {
            Some(v) if v.len() == 2 => points.push([v[0], v[1]]),
            None if i == 0 => continue,
            _ => return Err(format!("{} line {}: expected two numeric columns", path.display(), i + 1)),
        }
    }
    let spec = TargetSpec::Tabulated { points };
    spec.validate().map_err(|e| format!("{}: {e}", path.display()))?;
    match spec {
        TargetSpec::Tabulated { points } => Ok(points),
        _ => unreachable!(),
    }
}
