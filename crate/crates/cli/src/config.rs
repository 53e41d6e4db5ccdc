//! Run configuration: a TOML document mirroring the command-line flags.
//! Flags override file values; the resolved configuration, defaults
//! included, is written to every run directory as `config.snapshot`.

use std::path::{Path, PathBuf};

use fedqnn::{CircuitSpec, TrainingConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SNAPSHOT_FILE: &str = "config.snapshot";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: String,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub circuit: CircuitSpec,
    pub training: TrainingConfig,
    pub federation: FederationSection,
    pub data: DataSection,
    pub network: NetworkSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FederationSection {
    pub rounds_max: u32,
    pub target_accuracy: Option<f64>,
    /// One aggregation weight per client; clients are named `c1`, `c2`, ...
    pub weights: Vec<f64>,
    pub parallel_clients: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Patch CSV to deal among clients; synthetic patches when unset.
    pub pool: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub validation: Option<PathBuf>,
    /// Input patch CSV of `evaluate` and `split`.
    pub patches: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub image: Option<PathBuf>,
    pub mask: Option<PathBuf>,
    /// Patches per class taken from each image by `extract-patches`.
    pub per_image: usize,
    /// Patches per class generated when no data file is given.
    pub synthetic_per_class: usize,
    pub train_fraction: f64,
    /// Number of shares produced by `split`.
    pub clients: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub listen: String,
    pub connect: String,
    /// Per-round wait on the server; connection wait on a client.
    pub timeout_secs: u64,
    pub client_id: Option<String>,
    pub weight: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: String::new(),
            seed: 42,
            out: None,
            circuit: CircuitSpec::default(),
            training: TrainingConfig::default(),
            federation: FederationSection::default(),
            data: DataSection::default(),
            network: NetworkSection::default(),
        }
    }
}

impl Default for FederationSection {
    fn default() -> Self {
        FederationSection {
            rounds_max: 5,
            target_accuracy: None,
            weights: vec![5.0, 5.0, 4.0],
            parallel_clients: true,
        }
    }
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            pool: None,
            train: None,
            validation: None,
            patches: None,
            model: None,
            image: None,
            mask: None,
            per_image: 10,
            synthetic_per_class: 471,
            train_fraction: 0.75,
            clients: 3,
        }
    }
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection {
            listen: "127.0.0.1:7878".into(),
            connect: "127.0.0.1:7878".into(),
            timeout_secs: 300,
            client_id: None,
            weight: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("config file: {}", e.message())))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("config file {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn out_dir(&self) -> Result<&Path, CliError> {
        self.out.as_deref().ok_or_else(|| missing("out"))
    }

    /// Checks ranges shared by every mode.
    pub fn validate(&self) -> Result<(), CliError> {
        let fraction = self.data.train_fraction;
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(CliError::Config(format!("data.train_fraction: {fraction} not in (0, 1)")));
        }
        if self.data.per_image == 0 {
            return Err(CliError::Config("data.per_image: must be positive".into()));
        }
        if self.data.synthetic_per_class == 0 {
            return Err(CliError::Config("data.synthetic_per_class: must be positive".into()));
        }
        if self.data.clients == 0 {
            return Err(CliError::Config("data.clients: must be positive".into()));
        }
        check_weights(&self.federation.weights).map_err(|e| CliError::Config(format!("federation.weights: {e}")))?;
        if let Some(w) = self.network.weight {
            if !(w.is_finite() && w > 0.0) {
                return Err(CliError::Config(format!("network.weight: {w} must be positive")));
            }
        }
        Ok(())
    }
}

pub fn missing(field: &str) -> CliError {
    CliError::Config(format!("{field}: required for this mode"))
}

fn check_weights(weights: &[f64]) -> Result<(), String> {
    if weights.is_empty() {
        return Err("at least one weight is required".into());
    }
    match weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
        Some(w) => Err(format!("weight {w} must be positive")),
        None => Ok(()),
    }
}

/// Parses `A:B:C` into positive weights.
pub fn parse_weights(text: &str) -> Result<Vec<f64>, String> {
    let weights = text
        .split(':')
        .map(|part| {
            let part = part.trim();
            if part.is_empty() {
                return Err(format!("empty component in {text:?}"));
            }
            part.parse::<f64>().map_err(|_| format!("{part:?} is not a number"))
        })
        .collect::<Result<Vec<_>, _>>()?;
    check_weights(&weights)?;
    Ok(weights)
}
