use std::collections::{BTreeMap, HashMap};
use std::io::{BufReader, ErrorKind};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use super::{encode_message, read_message, Message, ProtocolError, PROTOCOL_VERSION};
use crate::fed::{self, aggregation_order, ClientRound, FedError, RoundRecord, TrainingConfig};
use crate::qnn::{CircuitSpec, ModelParams, QnnError};

#[derive(Debug, Clone)]
pub struct ServerPlan {
    /// Expected `(client_id, weight)` pairs; weights used for aggregation.
    pub roster: Vec<(String, f64)>,
    pub rounds_max: u32,
    pub target_accuracy: Option<f64>,
    pub circuit: CircuitSpec,
    pub training: TrainingConfig,
    /// Deadline for registration and for each collection phase of a round.
    pub round_timeout: Duration,
}

impl ServerPlan {
    pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(300);

    pub fn validate(&self) -> Result<(), FedError> {
        self.circuit.validate()?;
        self.training.validate()?;
        fed::validate_schedule(self.rounds_max, self.target_accuracy)?;
        if self.roster.is_empty() {
            return Err(FedError::InvalidPlan("roster is empty".into()));
        }
        for (i, (id, w)) in self.roster.iter().enumerate() {
            if !(w.is_finite() && *w > 0.0) {
                return Err(FedError::NonPositiveWeight { index: i, weight: *w });
            }
            if self.roster[..i].iter().any(|(o, _)| o == id) {
                return Err(FedError::InvalidPlan(format!("duplicate client id {id}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("timed out waiting for {0:?}")]
    Timeout(Vec<String>),
    #[error("client {client_id} disconnected")]
    Disconnected { client_id: String },
    #[error("client {client_id}: {source}")]
    Transport {
        client_id: String,
        #[source]
        source: ProtocolError,
    },
    #[error("client {client_id} reported {code}: {detail}")]
    ClientFailed {
        client_id: String,
        code: String,
        detail: String,
    },
    #[error(transparent)]
    Plan(#[from] FedError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<QnnError> for ServeError {
    fn from(e: QnnError) -> Self {
        ServeError::Plan(FedError::Qnn(e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TranscriptEntry {
    /// `"recv"` or `"send"`.
    pub direction: &'static str,
    /// Client id once known, otherwise the remote address.
    pub peer: String,
    pub line: String,
}

#[derive(Debug, Clone)]
pub struct ServeOutcome {
    pub records: Vec<RoundRecord>,
    pub final_params: ModelParams,
    pub transcript: Vec<TranscriptEntry>,
}

enum Event {
    Connected(usize, TcpStream),
    Frame(usize, Result<Message, ProtocolError>),
    Closed(usize),
}

struct Conn {
    stream: TcpStream,
    addr: String,
    client_id: Option<String>,
}

struct Coordinator<'a> {
    plan: &'a ServerPlan,
    rx: Receiver<Event>,
    conns: HashMap<usize, Conn>,
    by_id: BTreeMap<String, usize>,
    transcript: Vec<TranscriptEntry>,
}

/// Binds `addr` and runs the federation. See [`serve_on`].
pub fn serve(plan: &ServerPlan, addr: impl ToSocketAddrs) -> Result<ServeOutcome, ServeError> {
    serve_on(plan, TcpListener::bind(addr)?)
}

/// Runs the federation on an already bound listener: registers every roster
/// client, then for each round broadcasts the global model, collects one
/// update per client, aggregates with plan weights in client-id order, and
/// collects each client's evaluation of the new global model.
pub fn serve_on(plan: &ServerPlan, listener: TcpListener) -> Result<ServeOutcome, ServeError> {
    plan.validate()?;
    listener.set_nonblocking(true)?;
    let (tx, rx) = mpsc::channel();
    let stop = Arc::new(AtomicBool::new(false));
    let acceptor = {
        let stop = Arc::clone(&stop);
        thread::spawn(move || accept_loop(listener, tx, stop))
    };
    let mut coord = Coordinator {
        plan,
        rx,
        conns: HashMap::new(),
        by_id: BTreeMap::new(),
        transcript: Vec::new(),
    };
    let result = coord.run();
    if let Err(e) = &result {
        coord.broadcast_all(&Message::error("aborted", e.to_string()));
    }
    stop.store(true, Ordering::SeqCst);
    for conn in coord.conns.values() {
        let _ = conn.stream.shutdown(Shutdown::Both);
    }
    let readers = acceptor.join().expect("accept thread panicked");
    // connections accepted after the coordinator stopped listening
    while let Ok(ev) = coord.rx.try_recv() {
        if let Event::Connected(_, stream) = ev {
            let _ = stream.shutdown(Shutdown::Both);
        }
    }
    for r in readers {
        let _ = r.join();
    }
    let (records, final_params) = result?;
    Ok(ServeOutcome {
        records,
        final_params,
        transcript: coord.transcript,
    })
}

fn accept_loop(listener: TcpListener, tx: Sender<Event>, stop: Arc<AtomicBool>) -> Vec<JoinHandle<()>> {
    let mut readers = Vec::new();
    let mut next_id = 0;
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                if stream.set_nonblocking(false).is_err() {
                    continue;
                }
                let Ok(read_half) = stream.try_clone() else { continue };
                let id = next_id;
                next_id += 1;
                if tx.send(Event::Connected(id, stream)).is_err() {
                    break;
                }
                let tx = tx.clone();
                readers.push(thread::spawn(move || read_loop(id, read_half, tx)));
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
            Err(_) => thread::sleep(Duration::from_millis(5)),
        }
    }
    readers
}

fn read_loop(id: usize, stream: TcpStream, tx: Sender<Event>) {
    let mut reader = BufReader::new(stream);
    loop {
        match read_message(&mut reader) {
            Ok(Some(m)) => {
                if tx.send(Event::Frame(id, Ok(m))).is_err() {
                    return;
                }
            }
            Ok(None) | Err(ProtocolError::Io(_)) => break,
            Err(e) => {
                // framing errors leave the stream unsynchronised
                let fatal = matches!(e, ProtocolError::OversizeLine | ProtocolError::Truncated);
                if tx.send(Event::Frame(id, Err(e))).is_err() || fatal {
                    break;
                }
            }
        }
    }
    let _ = tx.send(Event::Closed(id));
}

/// What a collection phase is waiting for.
#[derive(Clone, Copy, PartialEq)]
enum Phase {
    Update(u32),
    Evaluation(u32),
}

impl Coordinator<'_> {
    fn run(&mut self) -> Result<(Vec<RoundRecord>, ModelParams), ServeError> {
        let plan = self.plan;
        let circuit = plan.circuit;
        self.register()?;
        let welcome = Message::Welcome {
            protocol_version: PROTOCOL_VERSION,
            round_total: plan.rounds_max,
            circuit,
            training: plan.training,
        };
        self.broadcast(&welcome)?;

        let weights: HashMap<&str, f64> = plan.roster.iter().map(|(id, w)| (id.as_str(), *w)).collect();
        let order = aggregation_order(plan.roster.iter().map(|(id, _)| id.as_str()));
        let mut global = ModelParams::zeros(&circuit);
        let mut records = Vec::new();
        let mut reason = "rounds_exhausted";

        for round in 0..plan.rounds_max {
            self.broadcast(&Message::Global {
                round,
                params: global.to_flat(),
            })?;
            let updates = self.collect(Phase::Update(round))?;
            let flats: Vec<Vec<f64>> = plan
                .roster
                .iter()
                .map(|(id, _)| match &updates[id] {
                    Message::Update { params, .. } => params.clone(),
                    _ => unreachable!("collect only keeps updates"),
                })
                .collect();
            let weighted: Vec<(&[f64], f64)> = order
                .iter()
                .map(|&i| (flats[i].as_slice(), plan.roster[i].1))
                .collect();
            global = ModelParams::from_flat(&circuit, &fed::aggregate(&weighted)?)?;

            self.broadcast(&Message::Evaluate {
                round,
                params: global.to_flat(),
            })?;
            let evaluations = self.collect(Phase::Evaluation(round))?;

            let mut clients = Vec::with_capacity(plan.roster.len());
            for ((id, _), flat) in plan.roster.iter().zip(flats) {
                let Message::Update {
                    val_accuracy,
                    epochs_run,
                    ..
                } = updates[id]
                else {
                    unreachable!()
                };
                let Message::Evaluation { confusion, .. } = evaluations[id] else {
                    unreachable!()
                };
                clients.push(ClientRound {
                    client_id: id.clone(),
                    weight: weights[id.as_str()],
                    best_params: ModelParams::from_flat(&circuit, &flat)?,
                    best_validation_accuracy: val_accuracy,
                    epochs_run,
                    history: Vec::new(),
                    global_validation: confusion,
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
                reason = "target_reached";
                break;
            }
        }
        self.broadcast(&Message::Done { reason: reason.into() })?;
        Ok((records, global))
    }

    fn peer(&self, conn: usize) -> String {
        self.conns
            .get(&conn)
            .map(|c| c.client_id.clone().unwrap_or_else(|| c.addr.clone()))
            .unwrap_or_default()
    }

    fn send(&mut self, conn: usize, m: &Message) -> Result<(), ProtocolError> {
        let bytes = encode_message(m)?;
        let peer = self.peer(conn);
        let Some(c) = self.conns.get_mut(&conn) else {
            return Ok(());
        };
        std::io::Write::write_all(&mut c.stream, &bytes)?;
        self.transcript.push(TranscriptEntry {
            direction: "send",
            peer,
            line: String::from_utf8_lossy(&bytes[..bytes.len() - 1]).into_owned(),
        });
        Ok(())
    }

    fn reject(&mut self, conn: usize, code: &str, detail: String) {
        let _ = self.send(conn, &Message::error(code, detail));
    }

    fn drop_conn(&mut self, conn: usize) {
        if let Some(c) = self.conns.remove(&conn) {
            let _ = c.stream.shutdown(Shutdown::Both);
        }
    }

    /// Sends `m` to every registered client in id order.
    fn broadcast(&mut self, m: &Message) -> Result<(), ServeError> {
        let targets: Vec<(String, usize)> = self.by_id.iter().map(|(k, v)| (k.clone(), *v)).collect();
        for (client_id, conn) in targets {
            self.send(conn, m)
                .map_err(|source| ServeError::Transport { client_id, source })?;
        }
        Ok(())
    }

    fn broadcast_all(&mut self, m: &Message) {
        let conns: Vec<usize> = self.conns.keys().copied().collect();
        for c in conns {
            let _ = self.send(c, m);
        }
    }

    fn next_event(&mut self, deadline: Instant) -> Option<Event> {
        let wait = deadline.saturating_duration_since(Instant::now());
        match self.rx.recv_timeout(wait) {
            Ok(ev) => Some(ev),
            Err(RecvTimeoutError::Timeout) => None,
            Err(RecvTimeoutError::Disconnected) => None,
        }
    }

    fn record_recv(&mut self, conn: usize, m: &Message) {
        if let Ok(bytes) = encode_message(m) {
            let peer = self.peer(conn);
            self.transcript.push(TranscriptEntry {
                direction: "recv",
                peer,
                line: String::from_utf8_lossy(&bytes[..bytes.len() - 1]).into_owned(),
            });
        }
    }

    /// Handles transport-level events shared by every phase. Returns the
    /// message when there is one left to interpret.
    fn triage(&mut self, ev: Event) -> Result<Option<(usize, Message)>, ServeError> {
        match ev {
            Event::Connected(conn, stream) => {
                let addr = stream.peer_addr().map(|a: SocketAddr| a.to_string()).unwrap_or_default();
                self.conns.insert(
                    conn,
                    Conn {
                        stream,
                        addr,
                        client_id: None,
                    },
                );
                Ok(None)
            }
            Event::Closed(conn) => match self.conns.get(&conn).and_then(|c| c.client_id.clone()) {
                Some(client_id) => Err(ServeError::Disconnected { client_id }),
                None => {
                    self.drop_conn(conn);
                    Ok(None)
                }
            },
            Event::Frame(conn, Err(e)) => {
                let code = match e {
                    ProtocolError::VersionMismatch(_) => "version",
                    ProtocolError::OversizeLine => "oversize",
                    _ => "malformed",
                };
                self.reject(conn, code, e.to_string());
                let registered = self.conns.get(&conn).and_then(|c| c.client_id.clone());
                match registered {
                    Some(client_id) if matches!(e, ProtocolError::OversizeLine | ProtocolError::Truncated) => {
                        Err(ServeError::Transport { client_id, source: e })
                    }
                    Some(_) => Ok(None),
                    None => {
                        self.drop_conn(conn);
                        Ok(None)
                    }
                }
            }
            Event::Frame(conn, Ok(m)) => {
                if !self.conns.contains_key(&conn) {
                    return Ok(None);
                }
                self.record_recv(conn, &m);
                if let Message::Error { code, detail } = &m {
                    if let Some(client_id) = self.conns[&conn].client_id.clone() {
                        return Err(ServeError::ClientFailed {
                            client_id,
                            code: code.clone(),
                            detail: detail.clone(),
                        });
                    }
                    self.drop_conn(conn);
                    return Ok(None);
                }
                Ok(Some((conn, m)))
            }
        }
    }

    fn register(&mut self) -> Result<(), ServeError> {
        let deadline = Instant::now() + self.plan.round_timeout;
        while self.by_id.len() < self.plan.roster.len() {
            let Some(ev) = self.next_event(deadline) else {
                let missing = self
                    .plan
                    .roster
                    .iter()
                    .filter(|(id, _)| !self.by_id.contains_key(id))
                    .map(|(id, _)| id.clone())
                    .collect();
                return Err(ServeError::Timeout(missing));
            };
            let Some((conn, m)) = self.triage(ev)? else { continue };
            if self.conns[&conn].client_id.is_some() {
                self.reject(conn, "unexpected", format!("{} before the first round", m.kind()));
                continue;
            }
            let Message::Hello { client_id, .. } = m else {
                self.reject(conn, "unexpected", format!("expected hello, got {}", m.kind()));
                self.drop_conn(conn);
                continue;
            };
            if !self.plan.roster.iter().any(|(id, _)| *id == client_id) {
                self.reject(conn, "unknown_client", format!("{client_id} is not on the roster"));
                self.drop_conn(conn);
            } else if self.by_id.contains_key(&client_id) {
                self.reject(conn, "duplicate_client", format!("{client_id} is already registered"));
                self.drop_conn(conn);
            } else {
                self.conns.get_mut(&conn).expect("live connection").client_id = Some(client_id.clone());
                self.by_id.insert(client_id, conn);
            }
        }
        Ok(())
    }

    /// Collects exactly one accepted reply per roster client for `phase`.
    fn collect(&mut self, phase: Phase) -> Result<HashMap<String, Message>, ServeError> {
        let deadline = Instant::now() + self.plan.round_timeout;
        let expected_len = self.plan.circuit.param_count();
        let mut got: HashMap<String, Message> = HashMap::new();
        while got.len() < self.plan.roster.len() {
            let Some(ev) = self.next_event(deadline) else {
                let mut missing: Vec<String> = self.by_id.keys().filter(|id| !got.contains_key(*id)).cloned().collect();
                missing.sort();
                return Err(ServeError::Timeout(missing));
            };
            let Some((conn, m)) = self.triage(ev)? else { continue };
            let Some(sender) = self.conns[&conn].client_id.clone() else {
                if matches!(m, Message::Hello { .. }) {
                    self.reject(conn, "duplicate_client", "registration is closed".into());
                } else {
                    self.reject(conn, "unexpected", "not registered".into());
                }
                self.drop_conn(conn);
                continue;
            };
            let (round, claimed) = match (&m, phase) {
                (Message::Update { round, client_id, .. }, Phase::Update(_)) => (*round, client_id),
                (Message::Evaluation { round, client_id, .. }, Phase::Evaluation(_)) => (*round, client_id),
                (Message::Update { round, .. } | Message::Evaluation { round, .. }, _) => {
                    self.reject(conn, "stale_round", format!("{} for round {round} not expected now", m.kind()));
                    continue;
                }
                _ => {
                    self.reject(conn, "unexpected", format!("unexpected {}", m.kind()));
                    continue;
                }
            };
            let current = match phase {
                Phase::Update(r) | Phase::Evaluation(r) => r,
            };
            if round != current {
                self.reject(conn, "stale_round", format!("round {round} sent during round {current}"));
                continue;
            }
            if *claimed != sender {
                self.reject(conn, "unknown_client", format!("connection registered as {sender}, message claims {claimed}"));
                continue;
            }
            if got.contains_key(&sender) {
                self.reject(conn, "duplicate_update", format!("{sender} already replied in round {round}"));
                continue;
            }
            if let Message::Update { params, weight, .. } = &m {
                let planned = self.plan.roster.iter().find(|(id, _)| *id == sender).map(|(_, w)| *w);
                if params.len() != expected_len {
                    self.reject(conn, "param_count", format!("expected {expected_len} params, got {}", params.len()));
                    continue;
                }
                if planned != Some(*weight) {
                    self.reject(
                        conn,
                        "weight_mismatch",
                        format!("weight {weight} does not match the planned {}", planned.unwrap_or(f64::NAN)),
                    );
                    continue;
                }
            }
            got.insert(sender, m);
        }
        Ok(got)
    }
}
