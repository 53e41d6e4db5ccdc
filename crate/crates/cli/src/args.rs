//! Command-line flags and how they override a [`RunConfig`].

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use fedqnn::{Entanglement, OptimizerKind};

use crate::config::{parse_weights, RunConfig};
use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "fedqnn", version, about = "Federated variational quantum classifier")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub shared: SharedArgs,
}

#[derive(Debug, Args, Default)]
pub struct SharedArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_parser = clap::value_parser!(OptimizerKind))]
    pub optimizer: Option<OptimizerKind>,
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    /// Maximum local epochs per round.
    #[arg(long, global = true)]
    pub epochs: Option<u32>,
    #[arg(long, global = true)]
    pub patience: Option<u32>,
    #[arg(long, global = true)]
    pub rounds: Option<u32>,
    /// Aggregation weights, e.g. `5:5:4`.
    #[arg(long, global = true, value_parser = parse_weight_list, value_name = "A:B:C")]
    pub weights: Option<WeightList>,
    #[arg(long, global = true, value_parser = clap::value_parser!(Entanglement))]
    pub entanglement: Option<Entanglement>,
    #[arg(long, global = true)]
    pub layers: Option<usize>,
    #[arg(long, global = true)]
    pub qubits: Option<usize>,
    #[arg(long, global = true)]
    pub target_accuracy: Option<f64>,
    #[arg(long, global = true, value_name = "ADDR")]
    pub listen: Option<String>,
    #[arg(long, global = true, value_name = "ADDR")]
    pub connect: Option<String>,
    #[arg(long, global = true, value_name = "SECONDS")]
    pub timeout: Option<u64>,
}

/// Parsed `--weights` value.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightList(pub Vec<f64>);

fn parse_weight_list(text: &str) -> Result<WeightList, String> {
    parse_weights(text).map(WeightList)
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model on a train/validation pair.
    TrainLocal(DataArgs),
    /// Run every client and the aggregator in this process.
    Federate(DataArgs),
    /// Aggregate updates from networked clients.
    Serve,
    /// Join a federation served elsewhere.
    Client(ClientArgs),
    /// Score a saved model on a patch CSV.
    Evaluate(EvaluateArgs),
    /// Cut labelled patches from an image and its lesion mask.
    ExtractPatches(ExtractArgs),
    /// Deal a patch CSV to clients and split each share into train/validation.
    Split(SplitArgs),
    /// Generate a balanced synthetic patch CSV.
    Synthesize(SynthesizeArgs),
}

#[derive(Debug, Args, Default)]
pub struct DataArgs {
    #[arg(long, value_name = "CSV")]
    pub train: Option<PathBuf>,
    #[arg(long, value_name = "CSV")]
    pub validation: Option<PathBuf>,
    /// Patch CSV to deal among clients.
    #[arg(long, value_name = "CSV")]
    pub pool: Option<PathBuf>,
    #[arg(long)]
    pub synthetic_per_class: Option<usize>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    /// Train clients one after another.
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Debug, Args, Default)]
pub struct ClientArgs {
    #[arg(long)]
    pub client_id: Option<String>,
    /// Must equal the server's weight for this client.
    #[arg(long)]
    pub weight: Option<f64>,
    #[arg(long, value_name = "CSV")]
    pub train: Option<PathBuf>,
    #[arg(long, value_name = "CSV")]
    pub validation: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct EvaluateArgs {
    #[arg(long, value_name = "JSON")]
    pub model: Option<PathBuf>,
    #[arg(long, value_name = "CSV")]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct ExtractArgs {
    /// Binary PPM (P6) image.
    #[arg(long, value_name = "PPM")]
    pub image: Option<PathBuf>,
    /// Binary PGM (P5) mask; nonzero pixels are lesions.
    #[arg(long, value_name = "PGM")]
    pub mask: Option<PathBuf>,
    #[arg(long)]
    pub per_class: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct SplitArgs {
    #[arg(long, value_name = "CSV")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub clients: Option<usize>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct SynthesizeArgs {
    #[arg(long)]
    pub per_class: Option<usize>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn set_opt<T>(slot: &mut Option<T>, value: Option<T>) {
    if value.is_some() {
        *slot = value;
    }
}

impl Cli {
    pub fn mode(&self) -> &'static str {
        match self.command {
            Command::TrainLocal(_) => "train-local",
            Command::Federate(_) => "federate",
            Command::Serve => "serve",
            Command::Client(_) => "client",
            Command::Evaluate(_) => "evaluate",
            Command::ExtractPatches(_) => "extract-patches",
            Command::Split(_) => "split",
            Command::Synthesize(_) => "synthesize",
        }
    }

    /// Loads the config file, if any, and applies every flag on top.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.shared.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        self.apply(&mut cfg);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&self, cfg: &mut RunConfig) {
        let s = &self.shared;
        cfg.mode = self.mode().to_string();
        set(&mut cfg.seed, s.seed);
        set_opt(&mut cfg.out, s.out.clone());
        set(&mut cfg.training.optimizer.kind, s.optimizer);
        set(&mut cfg.training.optimizer.learning_rate, s.lr);
        set(&mut cfg.training.max_epochs, s.epochs);
        set(&mut cfg.training.patience, s.patience);
        set(&mut cfg.federation.rounds_max, s.rounds);
        set(&mut cfg.federation.weights, s.weights.clone().map(|w| w.0));
        set(&mut cfg.circuit.entanglement, s.entanglement);
        set(&mut cfg.circuit.layers, s.layers);
        set(&mut cfg.circuit.n_qubits, s.qubits);
        set_opt(&mut cfg.federation.target_accuracy, s.target_accuracy);
        set(&mut cfg.network.listen, s.listen.clone());
        set(&mut cfg.network.connect, s.connect.clone());
        set(&mut cfg.network.timeout_secs, s.timeout);

        let d = &mut cfg.data;
        match &self.command {
            Command::TrainLocal(a) | Command::Federate(a) => {
                set_opt(&mut d.train, a.train.clone());
                set_opt(&mut d.validation, a.validation.clone());
                set_opt(&mut d.pool, a.pool.clone());
                set(&mut d.synthetic_per_class, a.synthetic_per_class);
                set(&mut d.train_fraction, a.train_fraction);
                if a.sequential {
                    cfg.federation.parallel_clients = false;
                }
            }
            Command::Serve => {}
            Command::Client(a) => {
                set_opt(&mut cfg.network.client_id, a.client_id.clone());
                set_opt(&mut cfg.network.weight, a.weight);
                set_opt(&mut d.train, a.train.clone());
                set_opt(&mut d.validation, a.validation.clone());
            }
            Command::Evaluate(a) => {
                set_opt(&mut d.model, a.model.clone());
                set_opt(&mut d.patches, a.data.clone());
            }
            Command::ExtractPatches(a) => {
                set_opt(&mut d.image, a.image.clone());
                set_opt(&mut d.mask, a.mask.clone());
                set(&mut d.per_image, a.per_class);
            }
            Command::Split(a) => {
                set_opt(&mut d.patches, a.data.clone());
                set(&mut d.clients, a.clients);
                set(&mut d.train_fraction, a.train_fraction);
            }
            Command::Synthesize(a) => set(&mut d.synthetic_per_class, a.per_class),
        }
    }
}
