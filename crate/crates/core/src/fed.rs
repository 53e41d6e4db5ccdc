//! In-process federated training: per-client local training with
//! best-checkpoint selection, weighted averaging on the server, and the
//! round loop.

use std::sync::Arc;
use std::thread;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{self, DataError, PatchDataset};
use crate::metrics::ConfusionMatrix;
use crate::optim::{self, OptimError, OptimizerConfig, OptimizerKind, OptimizerState};
use crate::qnn::{self, CircuitSpec, LabeledExample, ModelParams, QnnError};

#[derive(Debug, Error)]
pub enum FedError {
    #[error("no updates to aggregate")]
    EmptyUpdateSet,
    #[error("update {index} has {got} parameters, expected {expected}")]
    LengthMismatch {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("update {index} has non-positive weight {weight}")]
    NonPositiveWeight { index: usize, weight: f64 },
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("{0} dataset is empty")]
    EmptyDataset(&'static str),
    #[error("client {client_id}: {source}")]
    Client {
        client_id: String,
        #[source]
        source: Box<FedError>,
    },
    #[error(transparent)]
    Qnn(#[from] QnnError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub optimizer: OptimizerConfig,
    pub max_epochs: u32,
    /// Epochs without a validation-accuracy improvement before stopping.
    pub patience: u32,
    pub shuffle_each_epoch: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            optimizer: OptimizerConfig::default(),
            max_epochs: 100,
            patience: 10,
            shuffle_each_epoch: true,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), FedError> {
        self.optimizer.validate()?;
        if self.max_epochs == 0 || self.patience == 0 {
            return Err(FedError::InvalidPlan("max_epochs and patience must be positive".into()));
        }
        if self.patience > self.max_epochs {
            return Err(FedError::InvalidPlan(format!(
                "patience {} exceeds max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ClientConfig {
    pub client_id: String,
    pub weight: f64,
    pub train: Arc<PatchDataset>,
    pub validation: Arc<PatchDataset>,
    pub rng_seed: u64,
}

#[derive(Debug, Clone)]
pub struct FederationPlan {
    pub clients: Vec<ClientConfig>,
    pub rounds_max: u32,
    pub target_accuracy: Option<f64>,
    pub circuit: CircuitSpec,
    pub training: TrainingConfig,
    /// Train clients of a round on separate threads.
    pub parallel_clients: bool,
}

impl FederationPlan {
    pub fn new(clients: Vec<ClientConfig>, circuit: CircuitSpec, training: TrainingConfig) -> Self {
        FederationPlan {
            clients,
            rounds_max: 5,
            target_accuracy: None,
            circuit,
            training,
            parallel_clients: false,
        }
    }

    pub fn validate(&self) -> Result<(), FedError> {
        self.circuit.validate()?;
        self.training.validate()?;
        validate_schedule(self.rounds_max, self.target_accuracy)?;
        if self.clients.is_empty() {
            return Err(FedError::InvalidPlan("at least one client is required".into()));
        }
        for (i, c) in self.clients.iter().enumerate() {
            if !(c.weight.is_finite() && c.weight > 0.0) {
                return Err(FedError::NonPositiveWeight {
                    index: i,
                    weight: c.weight,
                });
            }
            if c.train.is_empty() || c.validation.is_empty() {
                return Err(FedError::InvalidPlan(format!(
                    "client {} has an empty dataset",
                    c.client_id
                )));
            }
            if self.clients[..i].iter().any(|o| o.client_id == c.client_id) {
                return Err(FedError::InvalidPlan(format!(
                    "duplicate client id {}",
                    c.client_id
                )));
            }
        }
        Ok(())
    }
}

pub(crate) fn validate_schedule(rounds_max: u32, target: Option<f64>) -> Result<(), FedError> {
    if rounds_max == 0 {
        return Err(FedError::InvalidPlan("rounds_max must be positive".into()));
    }
    if let Some(t) = target {
        if !(t > 0.0 && t <= 1.0) {
            return Err(FedError::InvalidPlan(format!("target_accuracy {t} not in (0, 1]")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u32,
    pub loss: f64,
    pub train_accuracy: f64,
    pub validation_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalOutcome {
    pub best_params: ModelParams,
    pub best_epoch: u32,
    pub best_validation_accuracy: f64,
    pub epochs_run: u32,
    pub history: Vec<EpochRecord>,
}

/// One client's contribution to a round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientRound {
    pub client_id: String,
    pub weight: f64,
    pub best_params: ModelParams,
    pub best_validation_accuracy: f64,
    pub epochs_run: u32,
    /// Per-epoch curve; empty when the round ran over the network.
    pub history: Vec<EpochRecord>,
    /// The aggregated model evaluated on this client's validation set.
    pub global_validation: ConfusionMatrix,
}

impl ClientRound {
    pub fn global_accuracy(&self) -> f64 {
        self.global_validation.accuracy().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round_index: u32,
    pub clients: Vec<ClientRound>,
    pub global_params: ModelParams,
}

/// Weighted average `Σ wᵢ·pᵢ / Σ wᵢ`, accumulated in the given order.
pub fn aggregate(updates: &[(&[f64], f64)]) -> Result<Vec<f64>, FedError> {
    let Some(((first, _), _)) = updates.split_first() else {
        return Err(FedError::EmptyUpdateSet);
    };
    let dim = first.len();
    for (index, (params, weight)) in updates.iter().enumerate() {
        if params.len() != dim {
            return Err(FedError::LengthMismatch {
                index,
                expected: dim,
                got: params.len(),
            });
        }
        if !(weight.is_finite() && *weight > 0.0) {
            return Err(FedError::NonPositiveWeight {
                index,
                weight: *weight,
            });
        }
    }
    let total: f64 = updates.iter().map(|(_, w)| w).sum();
    let mut out = vec![0.0; dim];
    for (params, weight) in updates {
        for (o, p) in out.iter_mut().zip(params.iter()) {
            *o += p * weight;
        }
    }
    out.iter_mut().for_each(|o| *o /= total);
    Ok(out)
}

/// Seed used by a client for a given round; round 0 uses the base seed.
pub fn round_seed(base: u64, round: u32) -> u64 {
    base.wrapping_add((round as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn accuracy(cm: &ConfusionMatrix) -> f64 {
    cm.accuracy().unwrap_or(0.0)
}

/// Full-batch training with early stopping on validation accuracy.
///
/// The stopping reference starts at the accuracy of `init`; the returned
/// checkpoint is the epoch-end model with the highest validation accuracy
/// (earliest wins ties).
pub fn local_train_examples(
    train: &[LabeledExample],
    validation: &[LabeledExample],
    circuit: &CircuitSpec,
    init: &ModelParams,
    training: &TrainingConfig,
    rng_seed: u64,
) -> Result<LocalOutcome, FedError> {
    circuit.validate()?;
    training.validate()?;
    init.check(circuit)?;
    if train.is_empty() {
        return Err(FedError::EmptyDataset("train"));
    }
    if validation.is_empty() {
        return Err(FedError::EmptyDataset("validation"));
    }
    let opt = &training.optimizer;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut batch = train.to_vec();
    let mut flat = init.to_flat();
    let mut state = OptimizerState::new(flat.len());

    let mut reference = accuracy(&qnn::evaluate(circuit, init, validation)?);
    let mut stale = 0;
    let mut history = Vec::new();
    let mut best: Option<(ModelParams, f64, u32)> = None;

    for epoch in 1..=training.max_epochs {
        if training.shuffle_each_epoch {
            batch.shuffle(&mut rng);
        }
        let at = if opt.kind == OptimizerKind::Nesterov {
            ModelParams::from_flat(circuit, &optim::lookahead_point(opt, &state, &flat)?)?
        } else {
            ModelParams::from_flat(circuit, &flat)?
        };
        let grad = qnn::gradient(circuit, &at, &batch)?;
        (flat, state) = optim::step(opt, &state, &flat, &grad.to_flat())?;
        let params = ModelParams::from_flat(circuit, &flat)?;

        let (loss, train_cm) = qnn::loss_and_confusion(circuit, &params, &batch)?;
        let val_acc = accuracy(&qnn::evaluate(circuit, &params, validation)?);
        history.push(EpochRecord {
            epoch,
            loss,
            train_accuracy: accuracy(&train_cm),
            validation_accuracy: val_acc,
        });
        if best.as_ref().is_none_or(|b| val_acc > b.1) {
            best = Some((params, val_acc, epoch));
        }
        if val_acc > reference {
            reference = val_acc;
            stale = 0;
        } else {
            stale += 1;
            if stale >= training.patience {
                break;
            }
        }
    }
    let (best_params, best_validation_accuracy, best_epoch) = best.expect("at least one epoch runs");
    Ok(LocalOutcome {
        best_params,
        best_epoch,
        best_validation_accuracy,
        epochs_run: history.len() as u32,
        history,
    })
}

/// Trains one client from `init` using its own seed.
pub fn local_train(
    client: &ClientConfig,
    circuit: &CircuitSpec,
    init: &ModelParams,
    training: &TrainingConfig,
) -> Result<LocalOutcome, FedError> {
    local_train_seeded(client, circuit, init, training, client.rng_seed)
}

fn local_train_seeded(
    client: &ClientConfig,
    circuit: &CircuitSpec,
    init: &ModelParams,
    training: &TrainingConfig,
    seed: u64,
) -> Result<LocalOutcome, FedError> {
    local_train_examples(
        &client.train.examples(),
        &client.validation.examples(),
        circuit,
        init,
        training,
        seed,
    )
}

/// Deals `pool` to `weights.len()` clients and splits each share into train
/// and validation. Client `i` is named `c{i+1}` and seeded with `seed + i`,
/// for both its split and its training.
pub fn clients_from_pool(
    pool: &PatchDataset,
    weights: &[f64],
    train_fraction: f64,
    seed: u64,
) -> Result<Vec<ClientConfig>, FedError> {
    let shares = data::partition_clients(pool, weights.len(), seed)?;
    shares
        .iter()
        .zip(weights)
        .enumerate()
        .map(|(i, (share, &weight))| {
            let client_seed = seed.wrapping_add(i as u64);
            let (train, validation) = data::split(share, train_fraction, client_seed)?;
            Ok(ClientConfig {
                client_id: format!("c{}", i + 1),
                weight,
                train: Arc::new(train),
                validation: Arc::new(validation),
                rng_seed: client_seed,
            })
        })
        .collect()
}

/// Indices of `ids` sorted by id; fixes the aggregation order.
pub(crate) fn aggregation_order<'a>(ids: impl Iterator<Item = &'a str>) -> Vec<usize> {
    let ids: Vec<&str> = ids.collect();
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by_key(|&i| ids[i]);
    order
}

/// Runs federated rounds from an all-zero model until every client's
/// validation accuracy on the aggregate reaches the target, or the round
/// budget is spent.
pub fn run_federation(plan: &FederationPlan) -> Result<Vec<RoundRecord>, FedError> {
    plan.validate()?;
    let circuit = &plan.circuit;
    let order = aggregation_order(plan.clients.iter().map(|c| c.client_id.as_str()));
    let mut global = ModelParams::zeros(circuit);
    let mut records = Vec::new();

    for round in 0..plan.rounds_max {
        let train_one = |c: &ClientConfig| {
            local_train_seeded(c, circuit, &global, &plan.training, round_seed(c.rng_seed, round)).map_err(|e| {
                FedError::Client {
                    client_id: c.client_id.clone(),
                    source: Box::new(e),
                }
            })
        };
        let outcomes: Vec<Result<LocalOutcome, FedError>> = if plan.parallel_clients {
            thread::scope(|s| {
                let handles: Vec<_> = plan.clients.iter().map(|c| s.spawn(|| train_one(c))).collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("client training thread panicked"))
                    .collect()
            })
        } else {
            plan.clients.iter().map(train_one).collect()
        };
        let outcomes = outcomes.into_iter().collect::<Result<Vec<_>, _>>()?;

        let flats: Vec<Vec<f64>> = outcomes.iter().map(|o| o.best_params.to_flat()).collect();
        let updates: Vec<(&[f64], f64)> = order
            .iter()
            .map(|&i| (flats[i].as_slice(), plan.clients[i].weight))
            .collect();
        global = ModelParams::from_flat(circuit, &aggregate(&updates)?)?;

        let mut clients = Vec::with_capacity(plan.clients.len());
        for (c, o) in plan.clients.iter().zip(outcomes) {
            let cm = qnn::evaluate(circuit, &global, &c.validation.examples())?;
            clients.push(ClientRound {
                client_id: c.client_id.clone(),
                weight: c.weight,
                best_params: o.best_params,
                best_validation_accuracy: o.best_validation_accuracy,
                epochs_run: o.epochs_run,
                history: o.history,
                global_validation: cm,
            });
        }
        let reached = plan
            .target_accuracy
            .is_some_and(|t| clients.iter().all(|c| c.global_accuracy() >= t));
        records.push(RoundRecord {
            round_index: round,
            clients,
            global_params: global.clone(),
        });
        if reached {
            break;
        }
    }
    Ok(records)
}
