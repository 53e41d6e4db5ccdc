//! Fixed inputs shared by the benchmarks.

use fedqnn::data::synthetic::{synthetic_pool, SyntheticConfig};
use fedqnn::{CircuitSpec, LabeledExample, ModelParams, StateVector};

/// Deterministic non-trivial parameters for `spec`.
pub fn params(spec: &CircuitSpec) -> ModelParams {
    ModelParams {
        angles: (0..spec.angle_count()).map(|k| 0.37 * k as f64 - 1.1).collect(),
        bias: 0.05,
    }
}

/// `2 * per_class` synthetic examples.
pub fn examples(per_class: usize) -> Vec<LabeledExample> {
    synthetic_pool(per_class, 42, &SyntheticConfig::default()).examples()
}

/// A normalized state with distinct amplitudes on every basis index.
pub fn state(n_qubits: usize) -> StateVector {
    let features: Vec<f64> = (0..1usize << n_qubits).map(|i| 1.0 + (i % 7) as f64).collect();
    fedqnn::amplitude_encode(&features, n_qubits).expect("valid features")
}
