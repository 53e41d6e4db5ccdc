mod support;

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::thread;
use std::time::Duration;

use fedqnn::data::synthetic::{synthetic_pool, SyntheticConfig};
use fedqnn::fed::clients_from_pool;
use fedqnn::fednet::{
    client_run, decode_message, encode_message, serve_on, ClientError, ClientSettings, Message, ServeError,
    ServerPlan,
};
use fedqnn::metrics::ConfusionMatrix;
use fedqnn::{run_federation, CircuitSpec, ClientConfig, Entanglement, FederationPlan, TrainingConfig};
use proptest::prelude::*;
use support::messages::arb_message;

fn small_plan() -> FederationPlan {
    let pool = synthetic_pool(24, 7, &SyntheticConfig::default());
    let clients = clients_from_pool(&pool, &[5.0, 5.0, 4.0], 0.75, 7).unwrap();
    let training = TrainingConfig {
        max_epochs: 6,
        patience: 3,
        ..Default::default()
    };
    let mut plan = FederationPlan::new(clients, CircuitSpec::default(), training);
    plan.rounds_max = 3;
    plan
}

fn server_plan(plan: &FederationPlan) -> ServerPlan {
    ServerPlan {
        roster: plan.clients.iter().map(|c| (c.client_id.clone(), c.weight)).collect(),
        rounds_max: plan.rounds_max,
        target_accuracy: plan.target_accuracy,
        circuit: plan.circuit,
        training: plan.training,
        round_timeout: Duration::from_secs(60),
    }
}

fn spawn_client(addr: String, c: &ClientConfig) -> thread::JoinHandle<Result<fedqnn::fednet::ClientOutcome, ClientError>> {
    let settings = ClientSettings::new(c.client_id.clone(), c.weight, c.rng_seed);
    let train = c.train.examples();
    let validation = c.validation.examples();
    thread::spawn(move || client_run(addr, &settings, &train, &validation))
}

fn listener() -> (TcpListener, String) {
    let l = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = l.local_addr().unwrap().to_string();
    (l, addr)
}

struct Raw {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl Raw {
    fn connect(addr: &str) -> Raw {
        let s = TcpStream::connect(addr).unwrap();
        s.set_read_timeout(Some(Duration::from_secs(30))).unwrap();
        Raw {
            writer: s.try_clone().unwrap(),
            reader: BufReader::new(s),
        }
    }

    fn send(&mut self, m: &Message) {
        self.writer.write_all(&encode_message(m).unwrap()).unwrap();
    }

    fn send_raw(&mut self, line: &str) {
        self.writer.write_all(line.as_bytes()).unwrap();
    }

    fn recv(&mut self) -> Message {
        let mut line = String::new();
        self.reader.read_line(&mut line).unwrap();
        decode_message(line.as_bytes()).unwrap()
    }

    fn hello(&mut self, id: &str) {
        self.send(&Message::Hello {
            protocol_version: 1,
            client_id: id.into(),
        });
    }
}

fn one_client_plan(rounds: u32) -> ServerPlan {
    ServerPlan {
        roster: vec![("c1".into(), 2.0)],
        rounds_max: rounds,
        target_accuracy: None,
        circuit: CircuitSpec::new(2, 1, Entanglement::Linear),
        training: TrainingConfig {
            max_epochs: 1,
            patience: 1,
            ..Default::default()
        },
        round_timeout: Duration::from_secs(30),
    }
}

#[test]
fn loopback_matches_in_process() {
    let mut plan = small_plan();
    let local = run_federation(&plan).unwrap();
    plan.parallel_clients = true;
    assert_eq!(run_federation(&plan).unwrap(), local);

    let (l, addr) = listener();
    let splan = server_plan(&plan);
    let server = thread::spawn(move || serve_on(&splan, l));
    let clients: Vec<_> = plan.clients.iter().map(|c| spawn_client(addr.clone(), c)).collect();
    let outcome = server.join().unwrap().unwrap();
    let client_outcomes: Vec<_> = clients.into_iter().map(|h| h.join().unwrap().unwrap()).collect();

    assert_eq!(outcome.records.len(), local.len());
    for (net, mem) in outcome.records.iter().zip(&local) {
        assert_eq!(net.global_params, mem.global_params);
        for (a, b) in net.clients.iter().zip(&mem.clients) {
            assert_eq!(a.client_id, b.client_id);
            assert_eq!(a.best_params, b.best_params);
            assert_eq!(a.epochs_run, b.epochs_run);
            assert_eq!(a.global_validation, b.global_validation);
            assert!(a.history.is_empty());
        }
    }
    for (co, c) in client_outcomes.iter().zip(&plan.clients) {
        for (log, rec) in co.rounds.iter().zip(&local) {
            let mem = rec.clients.iter().find(|x| x.client_id == c.client_id).unwrap();
            assert_eq!(log.outcome.history, mem.history);
        }
        assert_eq!(co.done_reason, "rounds_exhausted");
    }
}

#[test]
fn single_client_trace() {
    let (l, addr) = listener();
    let splan = one_client_plan(1);
    let server = thread::spawn(move || serve_on(&splan, l));
    let mut raw = Raw::connect(&addr);
    raw.hello("c1");
    assert!(matches!(raw.recv(), Message::Welcome { round_total: 1, .. }));
    let Message::Global { round: 0, params } = raw.recv() else { panic!() };
    assert_eq!(params, vec![0.0; 3]);
    raw.send(&Message::Update {
        round: 0,
        client_id: "c1".into(),
        params: vec![0.5, -0.25, 0.125],
        weight: 2.0,
        val_accuracy: 1.0,
        epochs_run: 1,
    });
    let Message::Evaluate { round: 0, params } = raw.recv() else { panic!() };
    assert_eq!(params, vec![0.5, -0.25, 0.125]);
    raw.send(&Message::Evaluation {
        round: 0,
        client_id: "c1".into(),
        confusion: ConfusionMatrix::new(1, 1, 0, 0),
    });
    assert!(matches!(raw.recv(), Message::Done { .. }));
    let outcome = server.join().unwrap().unwrap();
    let kinds: Vec<&str> = outcome
        .transcript
        .iter()
        .map(|t| decode_message(t.line.as_bytes()).unwrap().kind())
        .collect();
    assert_eq!(kinds, ["hello", "welcome", "global", "update", "evaluate", "evaluation", "done"]);
    assert_eq!(outcome.final_params.bias, 0.125);
}

#[test]
fn stale_and_invalid_updates_are_discarded() {
    let (l, addr) = listener();
    let splan = one_client_plan(2);
    let server = thread::spawn(move || serve_on(&splan, l));
    let mut raw = Raw::connect(&addr);
    raw.hello("c1");
    raw.recv();
    let update = |round, weight, params: Vec<f64>| Message::Update {
        round,
        client_id: "c1".into(),
        params,
        weight,
        val_accuracy: 0.5,
        epochs_run: 1,
    };
    let eval = |round| Message::Evaluation {
        round,
        client_id: "c1".into(),
        confusion: ConfusionMatrix::new(1, 0, 0, 0),
    };
    raw.recv(); // global 0
    raw.send(&update(0, 2.0, vec![1.0; 3]));
    raw.recv(); // evaluate 0
    raw.send(&eval(0));
    let Message::Global { round: 1, .. } = raw.recv() else { panic!() };

    let expect_error = |raw: &mut Raw, code: &str| match raw.recv() {
        Message::Error { code: c, .. } => assert_eq!(c, code),
        other => panic!("expected error {code}, got {other:?}"),
    };
    raw.send(&update(0, 2.0, vec![9.0; 3]));
    expect_error(&mut raw, "stale_round");
    raw.send(&update(1, 3.0, vec![9.0; 3]));
    expect_error(&mut raw, "weight_mismatch");
    raw.send(&update(1, 2.0, vec![9.0; 2]));
    expect_error(&mut raw, "param_count");
    raw.send_raw("{\"type\":\"update\",\"round\":1}\n");
    expect_error(&mut raw, "malformed");

    raw.send(&update(1, 2.0, vec![2.0; 3]));
    let Message::Evaluate { round: 1, params } = raw.recv() else { panic!() };
    assert_eq!(params, vec![2.0; 3]);
    raw.send(&update(1, 2.0, vec![2.0; 3]));
    expect_error(&mut raw, "stale_round");
    raw.send(&eval(1));
    assert!(matches!(raw.recv(), Message::Done { .. }));
    let outcome = server.join().unwrap().unwrap();
    assert_eq!(outcome.records.len(), 2);
    assert_eq!(outcome.records[0].global_params.bias, 1.0);
    assert_eq!(outcome.final_params.bias, 2.0);
}

#[test]
fn registration_rejections() {
    let (l, addr) = listener();
    let mut splan = one_client_plan(1);
    splan.round_timeout = Duration::from_secs(2);
    let server = thread::spawn(move || serve_on(&splan, l));

    let mut v2 = Raw::connect(&addr);
    v2.send_raw("{\"type\":\"hello\",\"protocol_version\":2,\"client_id\":\"c1\"}\n");
    assert!(matches!(v2.recv(), Message::Error { code, .. } if code == "version"));

    let mut stranger = Raw::connect(&addr);
    stranger.hello("mallory");
    assert!(matches!(stranger.recv(), Message::Error { code, .. } if code == "unknown_client"));

    let mut first = Raw::connect(&addr);
    first.hello("c1");
    let mut second = Raw::connect(&addr);
    // the first hello must be processed before the second
    assert!(matches!(first.recv(), Message::Welcome { .. }));
    second.hello("c1");
    assert!(matches!(second.recv(), Message::Error { code, .. } if code == "duplicate_client"));

    // never answer: the round times out naming the silent client
    first.recv();
    match server.join().unwrap() {
        Err(ServeError::Timeout(ids)) => assert_eq!(ids, ["c1"]),
        other => panic!("{other:?}"),
    }
}

#[test]
fn registration_timeout_names_missing() {
    let (l, _) = listener();
    let mut splan = one_client_plan(1);
    splan.roster.push(("c2".into(), 1.0));
    splan.round_timeout = Duration::from_millis(200);
    match serve_on(&splan, l) {
        Err(ServeError::Timeout(ids)) => assert_eq!(ids, ["c1", "c2"]),
        other => panic!("{other:?}"),
    }
}

#[test]
fn disconnect_aborts_with_client_named() {
    let (l, addr) = listener();
    let splan = one_client_plan(1);
    let server = thread::spawn(move || serve_on(&splan, l));
    let mut raw = Raw::connect(&addr);
    raw.hello("c1");
    raw.recv();
    raw.recv();
    drop(raw);
    match server.join().unwrap() {
        Err(ServeError::Disconnected { client_id }) => assert_eq!(client_id, "c1"),
        other => panic!("{other:?}"),
    }
}

fn fake_server(script: impl FnOnce(&mut Raw) + Send + 'static) -> (String, thread::JoinHandle<()>) {
    let (l, addr) = listener();
    let h = thread::spawn(move || {
        let (s, _) = l.accept().unwrap();
        let mut raw = Raw {
            writer: s.try_clone().unwrap(),
            reader: BufReader::new(s),
        };
        script(&mut raw);
    });
    (addr, h)
}

fn tiny_data() -> (Vec<fedqnn::LabeledExample>, Vec<fedqnn::LabeledExample>) {
    let pool = synthetic_pool(2, 1, &SyntheticConfig::default());
    (pool.examples(), pool.examples())
}

fn welcome() -> Message {
    Message::Welcome {
        protocol_version: 1,
        round_total: 1,
        circuit: CircuitSpec::default(),
        training: TrainingConfig {
            max_epochs: 1,
            patience: 1,
            ..Default::default()
        },
    }
}

#[test]
fn client_done_after_welcome() {
    let (addr, h) = fake_server(|raw| {
        assert!(matches!(raw.recv(), Message::Hello { .. }));
        raw.send(&welcome());
        raw.send(&Message::Done { reason: "nothing to do".into() });
    });
    let (train, val) = tiny_data();
    let out = client_run(addr, &ClientSettings::new("c1", 1.0, 0), &train, &val).unwrap();
    assert!(out.rounds.is_empty());
    assert_eq!(out.done_reason, "nothing to do");
    h.join().unwrap();
}

#[test]
fn client_answers_malformed_global_and_fails() {
    let (addr, h) = fake_server(|raw| {
        raw.recv();
        raw.send(&welcome());
        raw.send_raw("{\"type\":\"global\",\"round\":0,\"params\":\"oops\"}\n");
        assert!(matches!(raw.recv(), Message::Error { code, .. } if code == "malformed"));
    });
    let (train, val) = tiny_data();
    let err = client_run(addr, &ClientSettings::new("c1", 1.0, 0), &train, &val).unwrap_err();
    assert!(err.is_protocol());
    h.join().unwrap();
}

#[test]
fn client_rejects_wrong_param_count() {
    let (addr, h) = fake_server(|raw| {
        raw.recv();
        raw.send(&welcome());
        raw.send(&Message::Global {
            round: 0,
            params: vec![0.0; 3],
        });
        assert!(matches!(raw.recv(), Message::Error { code, .. } if code == "param_count"));
    });
    let (train, val) = tiny_data();
    assert!(client_run(addr, &ClientSettings::new("c1", 1.0, 0), &train, &val).is_err());
    h.join().unwrap();
}

#[test]
fn client_surfaces_version_rejection() {
    let (addr, h) = fake_server(|raw| {
        raw.recv();
        raw.send(&Message::error("version", "unsupported"));
    });
    let (train, val) = tiny_data();
    match client_run(addr, &ClientSettings::new("c1", 1.0, 0), &train, &val) {
        Err(ClientError::Rejected { code, .. }) => assert_eq!(code, "version"),
        other => panic!("{other:?}"),
    }
    h.join().unwrap();
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 1000, rng_seed: proptest::test_runner::RngSeed::Fixed(42), ..ProptestConfig::default() })]

    #[test]
    fn message_round_trip(m in arb_message()) {
        let line = encode_message(&m).unwrap();
        prop_assert_eq!(line.iter().filter(|&&b| b == b'\n').count(), 1);
        prop_assert_eq!(*line.last().unwrap(), b'\n');
        let back = decode_message(&line).unwrap();
        prop_assert_eq!(&back, &m);
        if let (Message::Global { params: a, .. }, Message::Global { params: b, .. }) = (&back, &m) {
            for (x, y) in a.iter().zip(b) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }
}
