//! Federated variational quantum classifier.
//!
//! A 7-qubit real-amplitudes circuit classifies amplitude-encoded 7×6 RGB
//! image patches. Clients train locally and a server combines their best
//! checkpoints by weighted averaging, either in-process ([`fed`]) or over
//! TCP ([`fednet`]).

pub mod data;
pub mod fed;
pub mod fednet;
pub mod metrics;
pub mod optim;
pub mod qnn;
pub mod qstate;

pub use data::{Label, Patch, PatchDataset};
pub use fed::{aggregate, run_federation, ClientConfig, FederationPlan, RoundRecord, TrainingConfig};
pub use metrics::{compute_metrics, ConfusionMatrix, MetricsReport};
pub use optim::{OptimizerConfig, OptimizerKind, OptimizerState};
pub use qnn::{CircuitSpec, Entanglement, LabeledExample, Model, ModelParams};
pub use qstate::{amplitude_encode, apply_gate, expectation_z, GateKind, StateVector};
