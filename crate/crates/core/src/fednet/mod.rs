//! Networked federation over TCP.
//!
//! Every message is one line of UTF-8 JSON with a `"type"` tag, terminated
//! by `\n`. A session runs:
//!
//! ```text
//! client                         server
//!   hello            ──────────▶
//!                    ◀──────────  welcome
//!                    ◀──────────  global(r)        ┐
//!   update(r)        ──────────▶                   │ per round
//!                    ◀──────────  evaluate(r)      │
//!   evaluation(r)    ──────────▶                   ┘
//!                    ◀──────────  done
//! ```
//!
//! Only parameters and scalar metrics travel; no message has room for
//! feature vectors.

mod client;
mod server;

use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fed::TrainingConfig;
use crate::metrics::ConfusionMatrix;
use crate::qnn::CircuitSpec;

pub use client::{client_run, ClientError, ClientOutcome, ClientRoundLog, ClientSettings};
pub use server::{serve, serve_on, ServeError, ServeOutcome, ServerPlan, TranscriptEntry};

pub const PROTOCOL_VERSION: u32 = 1;

/// Longest accepted line, excluding the newline.
pub const MAX_LINE: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Message {
    Hello {
        protocol_version: u32,
        client_id: String,
    },
    Welcome {
        protocol_version: u32,
        round_total: u32,
        circuit: CircuitSpec,
        training: TrainingConfig,
    },
    Global {
        round: u32,
        params: Vec<f64>,
    },
    Update {
        round: u32,
        client_id: String,
        params: Vec<f64>,
        weight: f64,
        val_accuracy: f64,
        epochs_run: u32,
    },
    Evaluate {
        round: u32,
        params: Vec<f64>,
    },
    Evaluation {
        round: u32,
        client_id: String,
        confusion: ConfusionMatrix,
    },
    Done {
        reason: String,
    },
    Error {
        code: String,
        detail: String,
    },
}

impl Message {
    pub fn error(code: &str, detail: impl Into<String>) -> Message {
        Message::Error {
            code: code.to_string(),
            detail: detail.into(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Message::Hello { .. } => "hello",
            Message::Welcome { .. } => "welcome",
            Message::Global { .. } => "global",
            Message::Update { .. } => "update",
            Message::Evaluate { .. } => "evaluate",
            Message::Evaluation { .. } => "evaluation",
            Message::Done { .. } => "done",
            Message::Error { .. } => "error",
        }
    }

    fn floats(&self) -> Vec<f64> {
        match self {
            Message::Global { params, .. } | Message::Evaluate { params, .. } => params.clone(),
            Message::Update {
                params,
                weight,
                val_accuracy,
                ..
            } => params.iter().copied().chain([*weight, *val_accuracy]).collect(),
            Message::Welcome { training, .. } => {
                let o = &training.optimizer;
                vec![o.learning_rate, o.momentum, o.beta1, o.beta2, o.epsilon]
            }
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("malformed message: {0}")]
    MalformedMessage(String),
    #[error("protocol version {0} is not supported (expected {PROTOCOL_VERSION})")]
    VersionMismatch(u64),
    #[error("line exceeds {MAX_LINE} bytes")]
    OversizeLine,
    #[error("message carries a non-finite number")]
    NonFinite,
    #[error("connection closed mid-line")]
    Truncated,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Serializes `m` as one newline-terminated JSON line.
pub fn encode_message(m: &Message) -> Result<Vec<u8>, ProtocolError> {
    if m.floats().iter().any(|v| !v.is_finite()) {
        return Err(ProtocolError::NonFinite);
    }
    let mut out = serde_json::to_vec(m).map_err(|e| ProtocolError::MalformedMessage(e.to_string()))?;
    out.push(b'\n');
    Ok(out)
}

/// Parses one line, with or without its trailing newline.
pub fn decode_message(bytes: &[u8]) -> Result<Message, ProtocolError> {
    let line = bytes.strip_suffix(b"\n").unwrap_or(bytes);
    let line = line.strip_suffix(b"\r").unwrap_or(line);
    if line.len() > MAX_LINE {
        return Err(ProtocolError::OversizeLine);
    }
    let malformed = |e: &dyn std::fmt::Display| ProtocolError::MalformedMessage(e.to_string());
    let value: serde_json::Value = serde_json::from_slice(line).map_err(|e| malformed(&e))?;
    let kind = value.get("type").and_then(|t| t.as_str());
    if matches!(kind, Some("hello") | Some("welcome")) {
        if let Some(v) = value.get("protocol_version").and_then(|v| v.as_u64()) {
            if v != PROTOCOL_VERSION as u64 {
                return Err(ProtocolError::VersionMismatch(v));
            }
        }
    }
    serde_json::from_value(value).map_err(|e| malformed(&e))
}

/// Reads one frame. `Ok(None)` on a clean end of stream.
pub fn read_frame<R: BufRead>(reader: &mut R) -> Result<Option<Vec<u8>>, ProtocolError> {
    let mut buf = Vec::new();
    let n = reader
        .by_ref()
        .take(MAX_LINE as u64 + 2)
        .read_until(b'\n', &mut buf)?;
    if n == 0 {
        return Ok(None);
    }
    if buf.last() != Some(&b'\n') {
        if buf.len() > MAX_LINE {
            return Err(ProtocolError::OversizeLine);
        }
        return Err(ProtocolError::Truncated);
    }
    if buf.len() > MAX_LINE + 1 {
        return Err(ProtocolError::OversizeLine);
    }
    Ok(Some(buf))
}

/// Reads and decodes one message. `Ok(None)` on a clean end of stream.
pub fn read_message<R: BufRead>(reader: &mut R) -> Result<Option<Message>, ProtocolError> {
    match read_frame(reader)? {
        Some(frame) => decode_message(&frame).map(Some),
        None => Ok(None),
    }
}

pub fn write_message<W: Write>(writer: &mut W, m: &Message) -> Result<(), ProtocolError> {
    writer.write_all(&encode_message(m)?)?;
    writer.flush()?;
    Ok(())
}
