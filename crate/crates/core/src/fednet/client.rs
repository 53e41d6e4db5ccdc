use std::io::{BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

use super::{encode_message, read_frame, decode_message, Message, ProtocolError, PROTOCOL_VERSION};
use crate::fed::{self, FedError, LocalOutcome, TrainingConfig};
use crate::qnn::{self, CircuitSpec, LabeledExample, ModelParams};
use crate::metrics::ConfusionMatrix;

#[derive(Debug, Clone)]
pub struct ClientSettings {
    pub client_id: String,
    /// Reported in updates; must match the server's plan.
    pub weight: f64,
    pub rng_seed: u64,
    /// How long to keep retrying the initial connection.
    pub connect_timeout: Duration,
}

impl ClientSettings {
    pub fn new(client_id: impl Into<String>, weight: f64, rng_seed: u64) -> Self {
        ClientSettings {
            client_id: client_id.into(),
            weight,
            rng_seed,
            connect_timeout: Duration::from_secs(10),
        }
    }
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("could not connect: {0}")]
    Connect(std::io::Error),
    #[error("connection lost")]
    ConnectionLost,
    #[error("server rejected us with {code}: {detail}")]
    Rejected { code: String, detail: String },
    #[error("unexpected {got} from server while waiting for {expected}")]
    Unexpected { expected: &'static str, got: &'static str },
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Training(#[from] FedError),
}

impl ClientError {
    /// Protocol-level failures, as opposed to local training or I/O.
    pub fn is_protocol(&self) -> bool {
        !matches!(self, ClientError::Training(_) | ClientError::Connect(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientRoundLog {
    pub round: u32,
    pub received: ModelParams,
    pub outcome: LocalOutcome,
    /// The server's aggregate evaluated on the local validation set.
    pub global_validation: Option<ConfusionMatrix>,
    pub global_params: Option<ModelParams>,
}

#[derive(Debug, Clone)]
pub struct ClientOutcome {
    pub circuit: CircuitSpec,
    pub training: TrainingConfig,
    pub rounds: Vec<ClientRoundLog>,
    pub done_reason: String,
    /// Every line sent and received, prefixed with `>` or `<`.
    pub transcript: Vec<String>,
}

struct Session {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    transcript: Vec<String>,
}

impl Session {
    fn send(&mut self, m: &Message) -> Result<(), ClientError> {
        let bytes = encode_message(m)?;
        self.writer.write_all(&bytes).map_err(|_| ClientError::ConnectionLost)?;
        self.transcript
            .push(format!("> {}", String::from_utf8_lossy(&bytes[..bytes.len() - 1])));
        Ok(())
    }

    /// Next message; a malformed frame is answered with an error before
    /// failing.
    fn recv(&mut self) -> Result<Message, ClientError> {
        let frame = match read_frame(&mut self.reader) {
            Ok(Some(f)) => f,
            Ok(None) | Err(ProtocolError::Io(_)) | Err(ProtocolError::Truncated) => {
                return Err(ClientError::ConnectionLost)
            }
            Err(e) => return Err(self.fail(e)),
        };
        let line = String::from_utf8_lossy(&frame);
        self.transcript.push(format!("< {}", line.trim_end()));
        match decode_message(&frame) {
            Ok(Message::Error { code, detail }) => Err(ClientError::Rejected { code, detail }),
            Ok(m) => Ok(m),
            Err(e) => Err(self.fail(e)),
        }
    }

    fn fail(&mut self, e: ProtocolError) -> ClientError {
        let code = match e {
            ProtocolError::VersionMismatch(_) => "version",
            _ => "malformed",
        };
        let _ = self.send(&Message::error(code, e.to_string()));
        ClientError::Protocol(e)
    }
}

fn connect(addr: impl ToSocketAddrs, timeout: Duration) -> Result<TcpStream, ClientError> {
    let deadline = Instant::now() + timeout;
    loop {
        match TcpStream::connect(&addr) {
            Ok(s) => return Ok(s),
            Err(e) if Instant::now() >= deadline => return Err(ClientError::Connect(e)),
            Err(_) => thread::sleep(Duration::from_millis(50)),
        }
    }
}

/// Joins a federation: registers, then trains on each received global model
/// and reports its best checkpoint until the server says done.
pub fn client_run(
    addr: impl ToSocketAddrs,
    settings: &ClientSettings,
    train: &[LabeledExample],
    validation: &[LabeledExample],
) -> Result<ClientOutcome, ClientError> {
    let stream = connect(addr, settings.connect_timeout)?;
    let _ = stream.set_nodelay(true);
    let writer = stream.try_clone().map_err(ClientError::Connect)?;
    let mut s = Session {
        reader: BufReader::new(stream),
        writer,
        transcript: Vec::new(),
    };
    s.send(&Message::Hello {
        protocol_version: PROTOCOL_VERSION,
        client_id: settings.client_id.clone(),
    })?;
    let (circuit, training) = match s.recv()? {
        Message::Welcome { circuit, training, .. } => (circuit, training),
        other => {
            return Err(ClientError::Unexpected {
                expected: "welcome",
                got: other.kind(),
            })
        }
    };

    let mut rounds: Vec<ClientRoundLog> = Vec::new();
    loop {
        match s.recv()? {
            Message::Global { round, params } => {
                let received = match ModelParams::from_flat(&circuit, &params) {
                    Ok(p) => p,
                    Err(e) => {
                        let _ = s.send(&Message::error("param_count", e.to_string()));
                        return Err(ClientError::Training(e.into()));
                    }
                };
                let outcome = fed::local_train_examples(
                    train,
                    validation,
                    &circuit,
                    &received,
                    &training,
                    fed::round_seed(settings.rng_seed, round),
                );
                let outcome = match outcome {
                    Ok(o) => o,
                    Err(e) => {
                        let _ = s.send(&Message::error("training", e.to_string()));
                        return Err(e.into());
                    }
                };
                s.send(&Message::Update {
                    round,
                    client_id: settings.client_id.clone(),
                    params: outcome.best_params.to_flat(),
                    weight: settings.weight,
                    val_accuracy: outcome.best_validation_accuracy,
                    epochs_run: outcome.epochs_run,
                })?;
                rounds.push(ClientRoundLog {
                    round,
                    received,
                    outcome,
                    global_validation: None,
                    global_params: None,
                });
            }
            Message::Evaluate { round, params } => {
                let global = match ModelParams::from_flat(&circuit, &params) {
                    Ok(p) => p,
                    Err(e) => {
                        let _ = s.send(&Message::error("param_count", e.to_string()));
                        return Err(ClientError::Training(e.into()));
                    }
                };
                let confusion = qnn::evaluate(&circuit, &global, validation).map_err(FedError::from)?;
                s.send(&Message::Evaluation {
                    round,
                    client_id: settings.client_id.clone(),
                    confusion,
                })?;
                if let Some(log) = rounds.iter_mut().rev().find(|l| l.round == round) {
                    log.global_validation = Some(confusion);
                    log.global_params = Some(global);
                }
            }
            Message::Done { reason } => {
                return Ok(ClientOutcome {
                    circuit,
                    training,
                    rounds,
                    done_reason: reason,
                    transcript: s.transcript,
                })
            }
            other => {
                let _ = s.send(&Message::error("unexpected", format!("unexpected {}", other.kind())));
                return Err(ClientError::Unexpected {
                    expected: "global, evaluate or done",
                    got: other.kind(),
                });
            }
        }
    }
}
