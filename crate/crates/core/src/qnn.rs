//! Real-amplitudes variational classifier.
//!
//! The score of an input `x` is `⟨Z_{n-1}⟩` of `U(θ)|ψ(x)⟩` plus a classical
//! bias, where `|ψ(x)⟩` is the amplitude encoding of `x` and `U(θ)` alternates
//! a layer of `Ry` rotations with a CNOT entangling block. Training minimizes
//! the mean squared error against labels in `{-1, +1}`; angle gradients come
//! from the parameter-shift rule.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Label, PatchDataset};
use crate::metrics::ConfusionMatrix;
use crate::qstate::{amplitude_encode, expectation_z, Gate, GateKind, QStateError, StateVector};

/// Version written into model files.
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum QnnError {
    #[error("expected {expected} angles, got {got}")]
    ParamCountMismatch { expected: usize, got: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid circuit: {0}")]
    InvalidCircuit(String),
    #[error("parameter {0} is not finite")]
    NonFiniteParam(usize),
    #[error("unsupported model format version {0}")]
    FormatVersion(u32),
    #[error(transparent)]
    State(#[from] QStateError),
    #[error("model file: {0}")]
    Serde(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Entanglement {
    /// Chain `q0→q1→…→q(n-1)`.
    #[default]
    Linear,
    /// Chain plus the closing `q(n-1)→q0`.
    Circular,
    /// Every ordered pair `i<j`, control `i`.
    Full,
}

impl Entanglement {
    pub fn as_str(&self) -> &'static str {
        match self {
            Entanglement::Linear => "linear",
            Entanglement::Circular => "circular",
            Entanglement::Full => "full",
        }
    }
}

impl fmt::Display for Entanglement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Entanglement {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linear" => Ok(Entanglement::Linear),
            "circular" => Ok(Entanglement::Circular),
            "full" => Ok(Entanglement::Full),
            other => Err(format!("unknown entanglement {other:?} (linear|circular|full)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CircuitSpec {
    pub n_qubits: usize,
    pub layers: usize,
    pub entanglement: Entanglement,
}

impl Default for CircuitSpec {
    fn default() -> Self {
        CircuitSpec {
            n_qubits: 7,
            layers: 2,
            entanglement: Entanglement::Linear,
        }
    }
}

impl CircuitSpec {
    pub fn new(n_qubits: usize, layers: usize, entanglement: Entanglement) -> Self {
        CircuitSpec {
            n_qubits,
            layers,
            entanglement,
        }
    }

    pub fn validate(&self) -> Result<(), QnnError> {
        if self.n_qubits < 2 || self.n_qubits > crate::qstate::MAX_QUBITS {
            return Err(QnnError::InvalidCircuit(format!(
                "n_qubits must be in 2..={}, got {}",
                crate::qstate::MAX_QUBITS,
                self.n_qubits
            )));
        }
        if self.layers == 0 {
            return Err(QnnError::InvalidCircuit("layers must be positive".into()));
        }
        Ok(())
    }

    pub fn angle_count(&self) -> usize {
        self.layers * self.n_qubits
    }

    /// Angles plus the bias.
    pub fn param_count(&self) -> usize {
        self.angle_count() + 1
    }

    /// The qubit that is measured.
    pub fn readout_qubit(&self) -> usize {
        self.n_qubits - 1
    }

    /// `(control, target)` pairs of one entangling block, in emission order.
    pub fn entangling_pairs(&self) -> Vec<(usize, usize)> {
        let n = self.n_qubits;
        let mut pairs: Vec<(usize, usize)> = (0..n - 1).map(|q| (q, q + 1)).collect();
        match self.entanglement {
            Entanglement::Linear => {}
            Entanglement::Circular => pairs.push((n - 1, 0)),
            Entanglement::Full => {
                pairs = (0..n)
                    .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
                    .collect();
            }
        }
        pairs
    }

    pub fn gate_count(&self) -> usize {
        self.layers * (self.n_qubits + self.entangling_pairs().len())
    }
}

/// Trainable parameters: `layers × n_qubits` rotation angles (layer-major)
/// and one additive bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub angles: Vec<f64>,
    pub bias: f64,
}

impl ModelParams {
    pub fn zeros(spec: &CircuitSpec) -> Self {
        ModelParams {
            angles: vec![0.0; spec.angle_count()],
            bias: 0.0,
        }
    }

    /// `angles ⧺ [bias]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.angles.clone();
        v.push(self.bias);
        v
    }

    pub fn from_flat(spec: &CircuitSpec, flat: &[f64]) -> Result<Self, QnnError> {
        if flat.len() != spec.param_count() {
            return Err(QnnError::ParamCountMismatch {
                expected: spec.param_count(),
                got: flat.len(),
            });
        }
        let (angles, bias) = flat.split_at(spec.angle_count());
        let params = ModelParams {
            angles: angles.to_vec(),
            bias: bias[0],
        };
        params.check(spec)?;
        Ok(params)
    }

    pub fn check(&self, spec: &CircuitSpec) -> Result<(), QnnError> {
        if self.angles.len() != spec.angle_count() {
            return Err(QnnError::ParamCountMismatch {
                expected: spec.angle_count(),
                got: self.angles.len(),
            });
        }
        if let Some(i) = self.angles.iter().position(|a| !a.is_finite()) {
            return Err(QnnError::NonFiniteParam(i));
        }
        if !self.bias.is_finite() {
            return Err(QnnError::NonFiniteParam(self.angles.len()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub features: Vec<f64>,
    pub label: Label,
}

impl LabeledExample {
    pub fn new(features: Vec<f64>, label: Label) -> Self {
        LabeledExample { features, label }
    }

    pub fn target(&self) -> f64 {
        self.label.sign()
    }
}

impl PatchDataset {
    pub fn examples(&self) -> Vec<LabeledExample> {
        self.patches
            .iter()
            .map(|p| LabeledExample::new(p.features().to_vec(), p.label))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub score: f64,
    pub predicted: Label,
    pub final_state: Option<StateVector>,
}

fn circuit_for(spec: &CircuitSpec, angles: &[f64]) -> Vec<Gate> {
    let pairs = spec.entangling_pairs();
    let mut gates = Vec::with_capacity(spec.gate_count());
    for layer in angles.chunks(spec.n_qubits) {
        for (q, &theta) in layer.iter().enumerate() {
            gates.push(Gate::new(GateKind::Ry(theta), &[q]));
        }
        for &(c, t) in &pairs {
            gates.push(Gate::new(GateKind::CNot, &[c, t]));
        }
    }
    gates
}

/// The ansatz gate list for `params`.
pub fn build_circuit(spec: &CircuitSpec, params: &ModelParams) -> Result<Vec<Gate>, QnnError> {
    spec.validate()?;
    params.check(spec)?;
    Ok(circuit_for(spec, &params.angles))
}

/// Bias-free readout of an already-encoded input.
fn readout(spec: &CircuitSpec, circuit: &[Gate], encoded: &StateVector) -> Result<f64, QnnError> {
    let mut state = encoded.clone();
    state.run(circuit)?;
    Ok(expectation_z(&state, spec.readout_qubit())?)
}

pub fn forward(spec: &CircuitSpec, params: &ModelParams, features: &[f64]) -> Result<ForwardTrace, QnnError> {
    let circuit = build_circuit(spec, params)?;
    let mut state = amplitude_encode(features, spec.n_qubits)?;
    state.run(&circuit)?;
    let score = expectation_z(&state, spec.readout_qubit())? + params.bias;
    Ok(ForwardTrace {
        score,
        predicted: Label::from_score(score),
        final_state: Some(state),
    })
}

/// Scores for every example, in order.
pub fn scores(spec: &CircuitSpec, params: &ModelParams, dataset: &[LabeledExample]) -> Result<Vec<f64>, QnnError> {
    let circuit = build_circuit(spec, params)?;
    dataset
        .par_iter()
        .map(|ex| {
            let encoded = amplitude_encode(&ex.features, spec.n_qubits)?;
            Ok(readout(spec, &circuit, &encoded)? + params.bias)
        })
        .collect()
}

fn mse(scores: &[f64], dataset: &[LabeledExample]) -> f64 {
    let total: f64 = scores
        .iter()
        .zip(dataset)
        .map(|(s, ex)| (s - ex.target()).powi(2))
        .sum();
    total / dataset.len() as f64
}

/// Mean squared error of the scores against `±1` targets.
pub fn loss(spec: &CircuitSpec, params: &ModelParams, dataset: &[LabeledExample]) -> Result<f64, QnnError> {
    if dataset.is_empty() {
        return Err(QnnError::EmptyDataset);
    }
    Ok(mse(&scores(spec, params, dataset)?, dataset))
}

/// Loss and confusion counts from a single pass over the data.
pub fn loss_and_confusion(
    spec: &CircuitSpec,
    params: &ModelParams,
    dataset: &[LabeledExample],
) -> Result<(f64, ConfusionMatrix), QnnError> {
    if dataset.is_empty() {
        return Err(QnnError::EmptyDataset);
    }
    let s = scores(spec, params, dataset)?;
    let cm = s
        .iter()
        .zip(dataset)
        .map(|(&score, ex)| (ex.label, Label::from_score(score)))
        .collect();
    Ok((mse(&s, dataset), cm))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub angles: Vec<f64>,
    pub bias: f64,
}

impl Gradient {
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.angles.clone();
        v.push(self.bias);
        v
    }
}

/// Exact loss gradient. Angle components use the `±π/2` parameter-shift
/// rule; each input is encoded once and reused for all shifted circuits.
pub fn gradient(spec: &CircuitSpec, params: &ModelParams, dataset: &[LabeledExample]) -> Result<Gradient, QnnError> {
    if dataset.is_empty() {
        return Err(QnnError::EmptyDataset);
    }
    let base = build_circuit(spec, params)?;
    let k = spec.angle_count();
    let shifted: Vec<(Vec<Gate>, Vec<Gate>)> = (0..k)
        .map(|i| {
            let mut plus = params.angles.clone();
            let mut minus = params.angles.clone();
            plus[i] += FRAC_PI_2;
            minus[i] -= FRAC_PI_2;
            (circuit_for(spec, &plus), circuit_for(spec, &minus))
        })
        .collect();

    // Per-example terms are computed in parallel; the reduction below is
    // sequential in example order so the result does not depend on threads.
    let terms: Vec<(f64, Vec<f64>)> = dataset
        .par_iter()
        .map(|ex| {
            let encoded = amplitude_encode(&ex.features, spec.n_qubits)?;
            let score = readout(spec, &base, &encoded)? + params.bias;
            let residual = 2.0 * (score - ex.target());
            let derivs = shifted
                .iter()
                .map(|(plus, minus)| {
                    Ok((readout(spec, plus, &encoded)? - readout(spec, minus, &encoded)?) / 2.0)
                })
                .collect::<Result<Vec<f64>, QnnError>>()?;
            Ok((residual, derivs))
        })
        .collect::<Result<_, QnnError>>()?;

    let mut angles = vec![0.0; k];
    let mut bias = 0.0;
    for (residual, derivs) in &terms {
        for (g, d) in angles.iter_mut().zip(derivs) {
            *g += residual * d;
        }
        bias += residual;
    }
    let n = dataset.len() as f64;
    angles.iter_mut().for_each(|g| *g /= n);
    Ok(Gradient {
        angles,
        bias: bias / n,
    })
}

pub fn evaluate(spec: &CircuitSpec, params: &ModelParams, dataset: &[LabeledExample]) -> Result<ConfusionMatrix, QnnError> {
    Ok(loss_and_confusion(spec, params, dataset)?.1)
}

/// A circuit together with its parameters, as stored in model files.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: CircuitSpec,
    pub params: ModelParams,
}

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    format_version: u32,
    n_qubits: usize,
    layers: usize,
    entanglement: Entanglement,
    angles: Vec<f64>,
    bias: f64,
}

impl Model {
    pub fn new(spec: CircuitSpec, params: ModelParams) -> Result<Self, QnnError> {
        spec.validate()?;
        params.check(&spec)?;
        Ok(Model { spec, params })
    }

    /// Pretty JSON with shortest round-trip decimals.
    pub fn to_json(&self) -> String {
        let doc = ModelDocument {
            format_version: MODEL_FORMAT_VERSION,
            n_qubits: self.spec.n_qubits,
            layers: self.spec.layers,
            entanglement: self.spec.entanglement,
            angles: self.params.angles.clone(),
            bias: self.params.bias,
        };
        let mut text = serde_json::to_string_pretty(&doc).expect("model serializes");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Self, QnnError> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        if doc.format_version != MODEL_FORMAT_VERSION {
            return Err(QnnError::FormatVersion(doc.format_version));
        }
        let spec = CircuitSpec::new(doc.n_qubits, doc.layers, doc.entanglement);
        Model::new(
            spec,
            ModelParams {
                angles: doc.angles,
                bias: doc.bias,
            },
        )
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<(), QnnError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, QnnError> {
        Model::from_json(&std::fs::read_to_string(path)?)
    }
}
