//! Statevector simulation for the gate set used by the classifier.
//!
//! Basis indices are big-endian in qubit order: qubit 0 is the most
//! significant bit, so `index = Σ bit(q_k) · 2^(n-1-k)`. Gates are applied by
//! strided in-place updates over amplitude pairs; no `2^n × 2^n` matrix is
//! ever built outside of tests.

use num_complex::Complex64;
use thiserror::Error;

/// A single complex amplitude.
pub type Amplitude = Complex64;

/// Index of a qubit within a register, `0..n_qubits`.
pub type QubitIndex = usize;

/// Tolerance used when validating the norm of externally supplied states.
pub const NORM_TOLERANCE: f64 = 1e-10;

/// Largest register accepted. Keeps `1 << n` well inside `usize`.
pub const MAX_QUBITS: usize = 30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QStateError {
    #[error("gate {gate} acts on {expected} qubit(s), got {got} target(s)")]
    ArityMismatch {
        gate: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("qubit {0} addressed more than once")]
    DuplicateTarget(QubitIndex),
    #[error("qubit {index} out of range for a {n_qubits}-qubit state")]
    IndexOutOfRange { index: QubitIndex, n_qubits: usize },
    #[error("qubit count must be in 1..={MAX_QUBITS}, got {0}")]
    InvalidQubitCount(usize),
    #[error("amplitude vector length {0} is not 2^n for the requested register")]
    LengthMismatch(usize),
    #[error("state is not normalized (norm² = {0})")]
    NotNormalized(f64),
    #[error("cannot encode an empty feature vector")]
    EmptyFeatures,
    #[error("cannot encode an all-zero feature vector")]
    ZeroVector,
    #[error("{len} features do not fit into {n_qubits} qubits")]
    TooLong { len: usize, n_qubits: usize },
    #[error("feature {0} is not finite")]
    NonFiniteFeature(usize),
    #[error("rotation angle is not finite")]
    NonFiniteAngle,
}

/// The supported gates. Rotation angles are in radians and used as given.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GateKind {
    PauliX,
    PauliY,
    PauliZ,
    Rx(f64),
    Ry(f64),
    Rz(f64),
    /// Targets are `(control, target)`.
    CNot,
    Swap,
    /// Targets are `(control, control, target)`.
    Toffoli,
}

impl GateKind {
    pub fn arity(&self) -> usize {
        match self {
            GateKind::CNot | GateKind::Swap => 2,
            GateKind::Toffoli => 3,
            _ => 1,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            GateKind::PauliX => "x",
            GateKind::PauliY => "y",
            GateKind::PauliZ => "z",
            GateKind::Rx(_) => "rx",
            GateKind::Ry(_) => "ry",
            GateKind::Rz(_) => "rz",
            GateKind::CNot => "cx",
            GateKind::Swap => "swap",
            GateKind::Toffoli => "ccx",
        }
    }

    fn angle(&self) -> Option<f64> {
        match *self {
            GateKind::Rx(t) | GateKind::Ry(t) | GateKind::Rz(t) => Some(t),
            _ => None,
        }
    }
}

/// Square gate matrix in row-major order, indexed in the gate's own basis
/// where the first target is the most significant bit.
#[derive(Debug, Clone, PartialEq)]
pub struct GateMatrix {
    dim: usize,
    data: Vec<Amplitude>,
}

impl GateMatrix {
    fn from_rows(rows: &[&[Amplitude]]) -> Self {
        let dim = rows.len();
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        GateMatrix { dim, data }
    }

    fn permutation(perm: &[usize]) -> Self {
        let dim = perm.len();
        let mut data = vec![Amplitude::new(0.0, 0.0); dim * dim];
        for (col, &row) in perm.iter().enumerate() {
            data[row * dim + col] = Amplitude::new(1.0, 0.0);
        }
        GateMatrix { dim, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, row: usize, col: usize) -> Amplitude {
        self.data[row * self.dim + col]
    }

    pub fn as_slice(&self) -> &[Amplitude] {
        &self.data
    }
}

fn c(re: f64, im: f64) -> Amplitude {
    Amplitude::new(re, im)
}

/// Matrix form of a gate.
pub fn gate_matrix(kind: GateKind) -> GateMatrix {
    let zero = c(0.0, 0.0);
    let one = c(1.0, 0.0);
    match kind {
        GateKind::PauliX => GateMatrix::from_rows(&[&[zero, one], &[one, zero]]),
        GateKind::PauliY => GateMatrix::from_rows(&[&[zero, c(0.0, -1.0)], &[c(0.0, 1.0), zero]]),
        GateKind::PauliZ => GateMatrix::from_rows(&[&[one, zero], &[zero, c(-1.0, 0.0)]]),
        GateKind::Rx(theta) => {
            let (s, co) = (theta / 2.0).sin_cos();
            GateMatrix::from_rows(&[&[c(co, 0.0), c(0.0, -s)], &[c(0.0, -s), c(co, 0.0)]])
        }
        GateKind::Ry(theta) => {
            let (s, co) = (theta / 2.0).sin_cos();
            GateMatrix::from_rows(&[&[c(co, 0.0), c(-s, 0.0)], &[c(s, 0.0), c(co, 0.0)]])
        }
        GateKind::Rz(theta) => {
            let half = theta / 2.0;
            GateMatrix::from_rows(&[
                &[Amplitude::from_polar(1.0, -half), zero],
                &[zero, Amplitude::from_polar(1.0, half)],
            ])
        }
        GateKind::CNot => GateMatrix::permutation(&[0, 1, 3, 2]),
        GateKind::Swap => GateMatrix::permutation(&[0, 2, 1, 3]),
        GateKind::Toffoli => GateMatrix::permutation(&[0, 1, 2, 3, 4, 5, 7, 6]),
    }
}

/// A gate bound to the qubits it acts on.
#[derive(Debug, Clone, PartialEq)]
pub struct Gate {
    pub kind: GateKind,
    pub targets: Vec<QubitIndex>,
}

impl Gate {
    pub fn new(kind: GateKind, targets: &[QubitIndex]) -> Self {
        Gate {
            kind,
            targets: targets.to_vec(),
        }
    }
}

/// An n-qubit pure state.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    n_qubits: usize,
    amplitudes: Vec<Amplitude>,
}

fn check_qubit_count(n_qubits: usize) -> Result<(), QStateError> {
    if n_qubits == 0 || n_qubits > MAX_QUBITS {
        Err(QStateError::InvalidQubitCount(n_qubits))
    } else {
        Ok(())
    }
}

impl StateVector {
    /// `|0…0⟩`.
    pub fn zero(n_qubits: usize) -> Result<Self, QStateError> {
        Self::basis(n_qubits, 0)
    }

    /// Computational basis state `|index⟩`.
    pub fn basis(n_qubits: usize, index: usize) -> Result<Self, QStateError> {
        check_qubit_count(n_qubits)?;
        let dim = 1usize << n_qubits;
        if index >= dim {
            return Err(QStateError::LengthMismatch(index));
        }
        let mut amplitudes = vec![c(0.0, 0.0); dim];
        amplitudes[index] = c(1.0, 0.0);
        Ok(StateVector {
            n_qubits,
            amplitudes,
        })
    }

    /// Wraps an amplitude vector, checking its length and norm.
    pub fn from_amplitudes(amplitudes: Vec<Amplitude>) -> Result<Self, QStateError> {
        let len = amplitudes.len();
        if len < 2 || !len.is_power_of_two() {
            return Err(QStateError::LengthMismatch(len));
        }
        let n_qubits = len.trailing_zeros() as usize;
        check_qubit_count(n_qubits)?;
        let norm = norm_sqr(&amplitudes);
        if !norm.is_finite() || (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(QStateError::NotNormalized(norm));
        }
        Ok(StateVector {
            n_qubits,
            amplitudes,
        })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &[Amplitude] {
        &self.amplitudes
    }

    pub fn into_amplitudes(self) -> Vec<Amplitude> {
        self.amplitudes
    }

    pub fn norm_sqr(&self) -> f64 {
        norm_sqr(&self.amplitudes)
    }

    /// Bit mask selecting `qubit` within a basis index.
    fn mask(&self, qubit: QubitIndex) -> usize {
        1usize << (self.n_qubits - 1 - qubit)
    }

    fn check_targets(&self, kind: GateKind, targets: &[QubitIndex]) -> Result<(), QStateError> {
        if targets.len() != kind.arity() {
            return Err(QStateError::ArityMismatch {
                gate: kind.name(),
                expected: kind.arity(),
                got: targets.len(),
            });
        }
        for (i, &t) in targets.iter().enumerate() {
            if t >= self.n_qubits {
                return Err(QStateError::IndexOutOfRange {
                    index: t,
                    n_qubits: self.n_qubits,
                });
            }
            if targets[..i].contains(&t) {
                return Err(QStateError::DuplicateTarget(t));
            }
        }
        if let Some(theta) = kind.angle() {
            if !theta.is_finite() {
                return Err(QStateError::NonFiniteAngle);
            }
        }
        Ok(())
    }

    /// Applies `kind` to `targets` in place.
    pub fn apply(&mut self, kind: GateKind, targets: &[QubitIndex]) -> Result<(), QStateError> {
        self.check_targets(kind, targets)?;
        match kind {
            GateKind::Ry(theta) => self.apply_ry(targets[0], theta),
            GateKind::CNot => {
                let ctrl = self.mask(targets[0]);
                let tgt = self.mask(targets[1]);
                for i in 0..self.dim() {
                    if i & ctrl != 0 && i & tgt == 0 {
                        self.amplitudes.swap(i, i | tgt);
                    }
                }
            }
            GateKind::Swap => {
                let a = self.mask(targets[0]);
                let b = self.mask(targets[1]);
                for i in 0..self.dim() {
                    if i & a != 0 && i & b == 0 {
                        self.amplitudes.swap(i, (i & !a) | b);
                    }
                }
            }
            GateKind::Toffoli => {
                let ctrl = self.mask(targets[0]) | self.mask(targets[1]);
                let tgt = self.mask(targets[2]);
                for i in 0..self.dim() {
                    if i & ctrl == ctrl && i & tgt == 0 {
                        self.amplitudes.swap(i, i | tgt);
                    }
                }
            }
            _ => {
                let m = gate_matrix(kind);
                self.apply_single(targets[0], &m);
            }
        }
        Ok(())
    }

    /// Applies every gate of `circuit` in order.
    pub fn run(&mut self, circuit: &[Gate]) -> Result<(), QStateError> {
        for gate in circuit {
            self.apply(gate.kind, &gate.targets)?;
        }
        Ok(())
    }

    fn apply_single(&mut self, qubit: QubitIndex, m: &GateMatrix) {
        let mask = self.mask(qubit);
        let (m00, m01, m10, m11) = (m.get(0, 0), m.get(0, 1), m.get(1, 0), m.get(1, 1));
        for i in 0..self.dim() {
            if i & mask == 0 {
                let j = i | mask;
                let a0 = self.amplitudes[i];
                let a1 = self.amplitudes[j];
                self.amplitudes[i] = m00 * a0 + m01 * a1;
                self.amplitudes[j] = m10 * a0 + m11 * a1;
            }
        }
    }

    // Real 2x2 rotation; the hot path of every forward pass.
    fn apply_ry(&mut self, qubit: QubitIndex, theta: f64) {
        let mask = self.mask(qubit);
        let (s, co) = (theta / 2.0).sin_cos();
        for i in 0..self.dim() {
            if i & mask == 0 {
                let j = i | mask;
                let a0 = self.amplitudes[i];
                let a1 = self.amplitudes[j];
                self.amplitudes[i] = a0 * co - a1 * s;
                self.amplitudes[j] = a0 * s + a1 * co;
            }
        }
    }
}

fn norm_sqr(amplitudes: &[Amplitude]) -> f64 {
    amplitudes.iter().map(|a| a.norm_sqr()).sum()
}

/// Returns a new state with `kind` applied to `targets`.
pub fn apply_gate(
    state: &StateVector,
    kind: GateKind,
    targets: &[QubitIndex],
) -> Result<StateVector, QStateError> {
    let mut out = state.clone();
    out.apply(kind, targets)?;
    Ok(out)
}

/// Amplitude encoding: zero-pad `features` at the tail to `2^n_qubits`
/// entries and L2-normalize. Feature `i` lands on basis index `i`.
pub fn amplitude_encode(features: &[f64], n_qubits: usize) -> Result<StateVector, QStateError> {
    check_qubit_count(n_qubits)?;
    let dim = 1usize << n_qubits;
    if features.is_empty() {
        return Err(QStateError::EmptyFeatures);
    }
    if features.len() > dim {
        return Err(QStateError::TooLong {
            len: features.len(),
            n_qubits,
        });
    }
    if let Some(i) = features.iter().position(|x| !x.is_finite()) {
        return Err(QStateError::NonFiniteFeature(i));
    }
    let norm = features.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(QStateError::ZeroVector);
    }
    let mut amplitudes = vec![c(0.0, 0.0); dim];
    for (a, &x) in amplitudes.iter_mut().zip(features) {
        *a = c(x / norm, 0.0);
    }
    Ok(StateVector {
        n_qubits,
        amplitudes,
    })
}

/// `⟨Z⟩` on `qubit`: probability of bit 0 minus probability of bit 1.
pub fn expectation_z(state: &StateVector, qubit: QubitIndex) -> Result<f64, QStateError> {
    if qubit >= state.n_qubits {
        return Err(QStateError::IndexOutOfRange {
            index: qubit,
            n_qubits: state.n_qubits,
        });
    }
    let mask = state.mask(qubit);
    let value = state
        .amplitudes
        .iter()
        .enumerate()
        .map(|(i, a)| {
            if i & mask == 0 {
                a.norm_sqr()
            } else {
                -a.norm_sqr()
            }
        })
        .sum::<f64>();
    Ok(value.clamp(-1.0, 1.0))
}
