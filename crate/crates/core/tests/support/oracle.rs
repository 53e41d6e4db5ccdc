//! Slow reference implementations used only by tests: dense matrices built
//! by Kronecker products, brute-force sums and finite differences.

#![allow(dead_code)]

use fedqnn::qstate::{Amplitude, GateKind};
use fedqnn::{CircuitSpec, LabeledExample, ModelParams};
use num_complex::Complex64;
use rand::Rng;

pub type Dense = Vec<Vec<Amplitude>>;

pub fn c(re: f64, im: f64) -> Amplitude {
    Complex64::new(re, im)
}

/// The textbook matrix of each gate, written out entry by entry.
pub fn textbook_matrix(kind: GateKind) -> Dense {
    let (o, l, i) = (c(0.0, 0.0), c(1.0, 0.0), c(0.0, 1.0));
    let perm = |p: &[usize]| -> Dense {
        (0..p.len())
            .map(|r| (0..p.len()).map(|col| if p[r] == col { l } else { o }).collect())
            .collect()
    };
    match kind {
        GateKind::PauliX => vec![vec![o, l], vec![l, o]],
        GateKind::PauliY => vec![vec![o, -i], vec![i, o]],
        GateKind::PauliZ => vec![vec![l, o], vec![o, -l]],
        GateKind::Rx(t) => {
            let (s, k) = ((t / 2.0).sin(), (t / 2.0).cos());
            vec![vec![c(k, 0.0), c(0.0, -s)], vec![c(0.0, -s), c(k, 0.0)]]
        }
        GateKind::Ry(t) => {
            let (s, k) = ((t / 2.0).sin(), (t / 2.0).cos());
            vec![vec![c(k, 0.0), c(-s, 0.0)], vec![c(s, 0.0), c(k, 0.0)]]
        }
        GateKind::Rz(t) => vec![
            vec![Complex64::from_polar(1.0, -t / 2.0), o],
            vec![o, Complex64::from_polar(1.0, t / 2.0)],
        ],
        GateKind::CNot => perm(&[0, 1, 3, 2]),
        GateKind::Swap => perm(&[0, 2, 1, 3]),
        GateKind::Toffoli => perm(&[0, 1, 2, 3, 4, 5, 7, 6]),
    }
}

pub fn identity(dim: usize) -> Dense {
    (0..dim)
        .map(|r| (0..dim).map(|col| if r == col { c(1.0, 0.0) } else { c(0.0, 0.0) }).collect())
        .collect()
}

pub fn kron(a: &Dense, b: &Dense) -> Dense {
    let (n, m) = (a.len(), b.len());
    let mut out = vec![vec![c(0.0, 0.0); n * m]; n * m];
    for (i, row) in a.iter().enumerate() {
        for (j, x) in row.iter().enumerate() {
            for (k, brow) in b.iter().enumerate() {
                for (l, y) in brow.iter().enumerate() {
                    out[i * m + k][j * m + l] = x * y;
                }
            }
        }
    }
    out
}

pub fn matmul(a: &Dense, b: &Dense) -> Dense {
    let n = a.len();
    let mut out = vec![vec![c(0.0, 0.0); n]; n];
    for i in 0..n {
        for k in 0..n {
            let x = a[i][k];
            for j in 0..n {
                out[i][j] += x * b[k][j];
            }
        }
    }
    out
}

pub fn matvec(a: &Dense, v: &[Amplitude]) -> Vec<Amplitude> {
    a.iter().map(|row| row.iter().zip(v).map(|(x, y)| x * y).sum()).collect()
}

pub fn dagger(a: &Dense) -> Dense {
    let n = a.len();
    (0..n).map(|i| (0..n).map(|j| a[j][i].conj()).collect()).collect()
}

/// Full `2^n × 2^n` operator of `kind` on `targets`: the gate Kronecker
/// expanded with identity on the leading qubits, conjugated by the qubit
/// permutation that brings `targets` to the front in order.
pub fn full_operator(kind: GateKind, targets: &[usize], n: usize) -> Dense {
    let k = targets.len();
    let expanded = kron(&textbook_matrix(kind), &identity(1 << (n - k)));
    let mut order: Vec<usize> = targets.to_vec();
    order.extend((0..n).filter(|q| !targets.contains(q)));
    let permute = |i: usize| -> usize {
        order
            .iter()
            .enumerate()
            .map(|(pos, &q)| ((i >> (n - 1 - q)) & 1) << (n - 1 - pos))
            .sum()
    };
    let pi: Vec<usize> = (0..1 << n).map(permute).collect();
    (0..1 << n)
        .map(|i| (0..1 << n).map(|j| expanded[pi[i]][pi[j]]).collect())
        .collect()
}

pub fn random_state(rng: &mut impl Rng, n: usize) -> Vec<Amplitude> {
    let mut v: Vec<Amplitude> = (0..1 << n)
        .map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();
    let norm = v.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    v.iter_mut().for_each(|a| *a /= norm);
    v
}

pub fn random_gate(rng: &mut impl Rng, n: usize) -> (GateKind, Vec<usize>) {
    let theta = rng.gen_range(-10.0..10.0);
    let kinds = [
        GateKind::PauliX,
        GateKind::PauliY,
        GateKind::PauliZ,
        GateKind::Rx(theta),
        GateKind::Ry(theta),
        GateKind::Rz(theta),
        GateKind::CNot,
        GateKind::Swap,
        GateKind::Toffoli,
    ];
    let kind = kinds[rng.gen_range(0..kinds.len())];
    let targets = rand::seq::index::sample(rng, n, kind.arity()).into_vec();
    (kind, targets)
}

/// `⟨Z_q⟩` by summing over every basis index.
pub fn brute_expectation_z(amps: &[Amplitude], q: usize, n: usize) -> f64 {
    (0..amps.len())
        .map(|i| {
            let bit = (i >> (n - 1 - q)) & 1;
            let sign = if bit == 0 { 1.0 } else { -1.0 };
            sign * amps[i].norm_sqr()
        })
        .sum()
}

/// Classifier score via dense matrices: encode, multiply by every gate's
/// full operator, measure the last qubit, add the bias.
pub fn dense_score(spec: &CircuitSpec, params: &ModelParams, features: &[f64]) -> f64 {
    let n = spec.n_qubits;
    let mut padded = features.to_vec();
    padded.resize(1 << n, 0.0);
    let norm = padded.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut state: Vec<Amplitude> = padded.iter().map(|x| c(x / norm, 0.0)).collect();
    for layer in 0..spec.layers {
        for q in 0..n {
            let op = full_operator(GateKind::Ry(params.angles[layer * n + q]), &[q], n);
            state = matvec(&op, &state);
        }
        for (ctrl, tgt) in spec.entangling_pairs() {
            state = matvec(&full_operator(GateKind::CNot, &[ctrl, tgt], n), &state);
        }
    }
    brute_expectation_z(&state, n - 1, n) + params.bias
}

/// Central finite-difference gradient of `f` at `x`.
pub fn finite_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|k| {
            let mut up = x.to_vec();
            let mut down = x.to_vec();
            up[k] += h;
            down[k] -= h;
            (f(&up) - f(&down)) / (2.0 * h)
        })
        .collect()
}

pub fn random_examples(rng: &mut impl Rng, count: usize, len: usize) -> Vec<LabeledExample> {
    (0..count)
        .map(|i| {
            let features = (0..len).map(|_| rng.gen_range(0.0..1.0)).collect();
            let label = if i % 2 == 0 { fedqnn::Label::Affected } else { fedqnn::Label::Healthy };
            LabeledExample::new(features, label)
        })
        .collect()
}

pub fn random_params(rng: &mut impl Rng, spec: &CircuitSpec) -> ModelParams {
    ModelParams {
        angles: (0..spec.angle_count()).map(|_| rng.gen_range(-3.2..3.2)).collect(),
        bias: rng.gen_range(-0.5..0.5),
    }
}

pub fn max_abs_diff(a: &[Amplitude], b: &[Amplitude]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}
