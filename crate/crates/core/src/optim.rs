//! Gradient descent, Nesterov momentum and Adam over a flattened parameter
//! vector (angles followed by the bias).
//!
//! Adam defaults to the uncorrected form with `ε` inside the square root:
//!
//! ```text
//! v ← β₁v + (1-β₁)g
//! s ← β₂s + (1-β₂)g²
//! p ← p - α·v / √(s + ε)
//! ```
//!
//! Setting `bias_correction` switches to the textbook update
//! `p ← p - α·v̂ / (√ŝ + ε)` with `v̂ = v/(1-β₁ᵗ)`, `ŝ = s/(1-β₂ᵗ)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("dimension mismatch: params {params}, grads {grads}, state {state}")]
    DimensionMismatch {
        params: usize,
        grads: usize,
        state: usize,
    },
    #[error("gradient component {0} is not finite")]
    NonFiniteGradient(usize),
    #[error("operation requires a {expected} optimizer, configured {got}")]
    WrongOptimizerKind {
        expected: OptimizerKind,
        got: OptimizerKind,
    },
    #[error("invalid optimizer config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Gd,
    Nesterov,
    #[default]
    Adam,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Gd => "gd",
            OptimizerKind::Nesterov => "nesterov",
            OptimizerKind::Adam => "adam",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gd" => Ok(OptimizerKind::Gd),
            "nesterov" => Ok(OptimizerKind::Nesterov),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(format!("unknown optimizer {other:?} (gd|nesterov|adam)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    /// Nesterov only.
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub bias_correction: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            learning_rate: 0.01,
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            bias_correction: false,
        }
    }
}

impl OptimizerConfig {
    pub fn with_kind(kind: OptimizerKind) -> Self {
        OptimizerConfig {
            kind,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), OptimError> {
        let unit = |name: &str, v: f64| {
            if (0.0..1.0).contains(&v) {
                Ok(())
            } else {
                Err(OptimError::InvalidConfig(format!("{name} must be in [0, 1), got {v}")))
            }
        };
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(OptimError::InvalidConfig(format!(
                "learning_rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(OptimError::InvalidConfig(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        unit("momentum", self.momentum)?;
        unit("beta1", self.beta1)?;
        unit("beta2", self.beta2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub step_count: u64,
    /// Adam first moment, or Nesterov velocity.
    pub first_moment: Vec<f64>,
    /// Adam only; zeros otherwise.
    pub second_moment: Vec<f64>,
}

impl OptimizerState {
    pub fn new(dim: usize) -> Self {
        OptimizerState {
            step_count: 0,
            first_moment: vec![0.0; dim],
            second_moment: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.first_moment.len()
    }
}

/// Where Nesterov evaluates the gradient: `p + μ·v`.
pub fn lookahead_point(
    config: &OptimizerConfig,
    state: &OptimizerState,
    params: &[f64],
) -> Result<Vec<f64>, OptimError> {
    if config.kind != OptimizerKind::Nesterov {
        return Err(OptimError::WrongOptimizerKind {
            expected: OptimizerKind::Nesterov,
            got: config.kind,
        });
    }
    if params.len() != state.dim() {
        return Err(OptimError::DimensionMismatch {
            params: params.len(),
            grads: params.len(),
            state: state.dim(),
        });
    }
    Ok(params
        .iter()
        .zip(&state.first_moment)
        .map(|(p, v)| p + config.momentum * v)
        .collect())
}

/// One update. For Nesterov, `grads` must be evaluated at
/// [`lookahead_point`].
pub fn step(
    config: &OptimizerConfig,
    state: &OptimizerState,
    params: &[f64],
    grads: &[f64],
) -> Result<(Vec<f64>, OptimizerState), OptimError> {
    if params.len() != grads.len() || params.len() != state.dim() || state.second_moment.len() != state.dim() {
        return Err(OptimError::DimensionMismatch {
            params: params.len(),
            grads: grads.len(),
            state: state.dim(),
        });
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(OptimError::NonFiniteGradient(i));
    }
    let lr = config.learning_rate;
    let mut next = state.clone();
    next.step_count += 1;
    let new_params = match config.kind {
        OptimizerKind::Gd => params.iter().zip(grads).map(|(p, g)| p - lr * g).collect(),
        OptimizerKind::Nesterov => {
            for (v, g) in next.first_moment.iter_mut().zip(grads) {
                *v = config.momentum * *v - lr * g;
            }
            params.iter().zip(&next.first_moment).map(|(p, v)| p + v).collect()
        }
        OptimizerKind::Adam => {
            let (b1, b2) = (config.beta1, config.beta2);
            for ((v, s), g) in next
                .first_moment
                .iter_mut()
                .zip(next.second_moment.iter_mut())
                .zip(grads)
            {
                *v = b1 * *v + (1.0 - b1) * g;
                *s = b2 * *s + (1.0 - b2) * g * g;
            }
            let t = next.step_count as i32;
            let (c1, c2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
            params
                .iter()
                .zip(next.first_moment.iter().zip(&next.second_moment))
                .map(|(p, (v, s))| {
                    if config.bias_correction {
                        p - lr * (v / c1) / ((s / c2).sqrt() + config.epsilon)
                    } else {
                        p - lr * v / (s + config.epsilon).sqrt()
                    }
                })
                .collect()
        }
    };
    Ok((new_params, next))
}
