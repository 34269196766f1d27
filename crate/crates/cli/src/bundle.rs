//! Result bundle writers.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use bqi_core::opt::OptimizerTrace;
use bqi_core::readout::PointwiseMse;
use serde::Serialize;
use serde_json::Value;

use crate::config::ExperimentConfig;
use crate::CliError;

/// dB figures are reported to three decimals.
pub fn db3(v: Option<f64>) -> Option<f64> {
    v.map(|x| (x * 1000.0).round() / 1000.0)
}

pub struct Bundle {
    dir: PathBuf,
    files: Vec<String>,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("cannot write {}: {e}", path.display()))
}

impl Bundle {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let path = self.dir.join(name);
        let file = File::create(&path).map_err(|e| io_err(&path, e))?;
        serde_json::to_writer_pretty(BufWriter::new(file), value).map_err(|e| io_err(&path, e))?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn csv<R, I>(&mut self, name: &str, header: &[&str], rows: I) -> Result<(), CliError>
    where
        R: IntoIterator<Item = String>,
        I: IntoIterator<Item = R>,
    {
        let path = self.dir.join(name);
        let mut w = csv::Writer::from_path(&path).map_err(|e| io_err(&path, e))?;
        w.write_record(header).map_err(|e| io_err(&path, e))?;
        for row in rows {
            w.write_record(row).map_err(|e| io_err(&path, e))?;
        }
        w.flush().map_err(|e| io_err(&path, e))?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn mse_curve(&mut self, curve: &[PointwiseMse]) -> Result<(), CliError> {
        self.csv(
            "mse_curve.csv",
            &["u", "mse", "bias_sq", "variance"],
            curve.iter().map(|p| [p.u, p.mse, p.bias_sq, p.variance].map(|v| v.to_string())),
        )
    }

    /// Optimizer traces, one row per evaluation; `label` tags stage and system size.
    pub fn traces(&mut self, traces: &[(String, &OptimizerTrace)]) -> Result<(), CliError> {
        let rows = traces.iter().flat_map(|(label, t)| {
            t.records.iter().map(move |r| {
                let point: Vec<String> = r.point.iter().map(|v| v.to_string()).collect();
                vec![
                    label.clone(),
                    r.evaluation.to_string(),
                    r.epoch.to_string(),
                    r.value.to_string(),
                    r.best.to_string(),
                    r.rectangles.to_string(),
                    point.join(";"),
                ]
            })
        });
        self.csv("trace.csv", &["stage", "evaluation", "epoch", "value", "best", "rectangles", "point"], rows)
    }

    /// Writes the resolved config and a manifest naming everything needed to rerun.
    pub fn finish(mut self, command: &str, config: &ExperimentConfig, threads: usize) -> Result<(), CliError> {
        self.json("config.json", config)?;
        let mut files = self.files.clone();
        files.push("manifest.json".into());
        let manifest = serde_json::json!({
            "tool": "bqi",
            "version": env!("CARGO_PKG_VERSION"),
            "command": command,
            "seed": config.optimizer.direct.seed,
            "dataset_seed": config.dataset.seed,
            "budget": config.optimizer.direct.budget,
            "threads": threads,
            "config": "config.json",
            "rerun": format!("bqi {command} --config config.json --out ."),
            "files": files,
        });
        self.json("manifest.json", &manifest)
    }
}

pub fn params_json(flat: &[f64]) -> Value {
    Value::from(flat.to_vec())
}
