//! Files written into a run directory.

use std::fs;
use std::path::{Path, PathBuf};

use fedqnn::fed::EpochRecord;
use fedqnn::metrics::MetricsError;
use fedqnn::{compute_metrics, CircuitSpec, ConfusionMatrix, MetricsReport, Model, ModelParams};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::CliError;

pub const METRICS_FILE: &str = "metrics.json";
pub const TRANSCRIPT_FILE: &str = "transcript.log";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CurveError {
    #[error("history is empty")]
    EmptyHistory,
}

/// Plot-ready CSV of a training history, one row per epoch.
pub fn emit_curves(history: &[EpochRecord]) -> Result<String, CurveError> {
    if history.is_empty() {
        return Err(CurveError::EmptyHistory);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epoch", "loss", "train_accuracy", "validation_accuracy"])
        .expect("in-memory write");
    for r in history {
        w.serialize((r.epoch, r.loss, r.train_accuracy, r.validation_accuracy))
            .expect("in-memory write");
    }
    Ok(String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8"))
}

/// One confusion matrix and its metrics, values rounded to six decimals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// What was evaluated, e.g. `round 2 global on c1 validation`.
    pub scope: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub round: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub client_id: Option<String>,
    pub confusion: ConfusionMatrix,
    pub metrics: MetricsReport,
}

impl Evaluation {
    pub fn new(scope: impl Into<String>, confusion: ConfusionMatrix) -> Result<Self, MetricsError> {
        Ok(Evaluation {
            scope: scope.into(),
            round: None,
            client_id: None,
            metrics: compute_metrics(&confusion)?.rounded(),
            confusion,
        })
    }

    pub fn for_client(mut self, round: u32, client_id: &str) -> Self {
        self.round = Some(round);
        self.client_id = Some(client_id.to_string());
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsDocument {
    pub evaluations: Vec<Evaluation>,
}

/// `0.936709 → "93.67%"`, or `n/a` for undefined values.
pub fn percent(value: Option<f64>) -> String {
    value.map_or_else(|| "n/a".into(), |v| format!("{:.2}%", 100.0 * v))
}

/// Writer rooted at a run directory.
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| io_error(root, e))?;
        Ok(RunDir { root: root.to_path_buf() })
    }

    pub fn path(&self, relative: &str) -> PathBuf {
        self.root.join(relative)
    }

    pub fn write(&self, relative: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf, CliError> {
        let path = self.path(relative);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
        }
        fs::write(&path, contents).map_err(|e| io_error(&path, e))?;
        Ok(path)
    }

    pub fn write_model(&self, relative: &str, circuit: &CircuitSpec, params: &ModelParams) -> Result<PathBuf, CliError> {
        let model = Model::new(*circuit, params.clone()).map_err(|e| CliError::Runtime(e.to_string()))?;
        self.write(relative, model.to_json())
    }

    pub fn write_curves(&self, relative: &str, history: &[EpochRecord]) -> Result<PathBuf, CliError> {
        let text = emit_curves(history).map_err(|e| CliError::Runtime(format!("{relative}: {e}")))?;
        self.write(relative, text)
    }

    pub fn write_json(&self, relative: &str, value: &impl Serialize) -> Result<PathBuf, CliError> {
        let mut text = serde_json::to_string_pretty(value).expect("document serializes");
        text.push('\n');
        self.write(relative, text)
    }

    pub fn write_patches(&self, relative: &str, dataset: &fedqnn::PatchDataset) -> Result<PathBuf, CliError> {
        let path = self.path(relative);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
        }
        fedqnn::data::write_patch_file(&path, dataset).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        Ok(path)
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

/// File stem used for per-round artifacts.
pub fn round_name(round: u32) -> String {
    format!("round_{round:02}")
}
