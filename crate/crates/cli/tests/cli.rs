use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output};
use std::thread;

use fedqnn::data::pnm::{encode_pgm_mask, encode_ppm};
use fedqnn::data::synthetic::{synthetic_pool, SyntheticConfig};
use fedqnn::data::{read_patch_file, write_patch_file, LesionMask, RasterImage};
use fedqnn::fed::EpochRecord;
use fedqnn::qnn::forward;
use fedqnn::{CircuitSpec, ConfusionMatrix, Label, Model, ModelParams};
use fedqnn_cli::{emit_curves, CurveError, MetricsDocument, RunConfig};

fn fedqnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedqnn")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = fedqnn(args);
    assert!(
        out.status.success(),
        "fedqnn {args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn metrics(dir: &Path) -> MetricsDocument {
    serde_json::from_str(&std::fs::read_to_string(dir.join("metrics.json")).unwrap()).unwrap()
}

/// Every file under `root`, keyed by relative path.
fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn small_federation(out: &Path) -> String {
    ok(&[
        "federate",
        "--synthetic-per-class",
        "30",
        "--weights",
        "5:5:4",
        "--seed",
        "42",
        "--epochs",
        "6",
        "--patience",
        "3",
        "--rounds",
        "2",
        "--out",
        p(out),
    ])
}

#[test]
fn federate_is_reproducible_and_self_contained() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("run");
    let summary = small_federation(&a);
    assert!(summary.starts_with("round 0:"), "{summary}");
    let ta = tree(&a);
    std::fs::remove_dir_all(&a).unwrap();
    small_federation(&a);
    let tb = tree(&a);
    assert_eq!(ta.keys().collect::<Vec<_>>(), tb.keys().collect::<Vec<_>>());
    for (k, v) in &ta {
        assert!(tb[k] == *v, "{k} differs");
    }
    for name in [
        "config.snapshot",
        "metrics.json",
        "models/final_global.json",
        "models/round_00_global.json",
        "models/round_01_c3_best.json",
        "curves/round_01_c2.csv",
        "rounds/round_01.json",
        "data/c1_validation.csv",
    ] {
        assert!(ta.contains_key(name), "{name} missing");
    }

    let snapshot = RunConfig::from_toml(&String::from_utf8(ta["config.snapshot"].clone()).unwrap()).unwrap();
    assert_eq!(snapshot.mode, "federate");
    assert_eq!(snapshot.federation.weights, [5.0, 5.0, 4.0]);
    assert_eq!(snapshot.training.max_epochs, 6);

    let stored = metrics(&a);
    let last = stored
        .evaluations
        .iter()
        .rfind(|e| e.client_id.as_deref() == Some("c1"))
        .unwrap()
        .clone();
    assert_eq!(last.round, Some(1));
    let again = dir.path().join("eval");
    ok(&[
        "evaluate",
        "--model",
        p(&a.join("models/final_global.json")),
        "--data",
        p(&a.join("data/c1_validation.csv")),
        "--out",
        p(&again),
    ]);
    let re = &metrics(&again).evaluations[0];
    assert_eq!(re.confusion, last.confusion);
    assert_eq!(re.metrics, last.metrics);
}

#[test]
fn evaluate_matches_per_row_loop() {
    let dir = tempfile::tempdir().unwrap();
    let spec = CircuitSpec::default();
    let params = ModelParams {
        angles: (0..14).map(|k| 0.4 * k as f64 - 2.0).collect(),
        bias: 0.1,
    };
    let model = Model::new(spec, params.clone()).unwrap();
    model.save(dir.path().join("m.json")).unwrap();
    let data = synthetic_pool(40, 3, &SyntheticConfig::default());
    write_patch_file(dir.path().join("d.csv"), &data).unwrap();

    let mut cm = ConfusionMatrix::default();
    for patch in &data.patches {
        let score = forward(&spec, &params, patch.features()).unwrap().score;
        let predicted = if score >= 0.0 { Label::Affected } else { Label::Healthy };
        cm.record(patch.label, predicted);
    }
    let out = dir.path().join("out");
    let stdout = ok(&[
        "evaluate",
        "--model",
        p(&dir.path().join("m.json")),
        "--data",
        p(&dir.path().join("d.csv")),
        "--out",
        p(&out),
    ]);
    assert!(stdout.contains("accuracy "), "{stdout}");
    let eval = &metrics(&out).evaluations[0];
    assert_eq!(eval.confusion, cm);
    let text = std::fs::read_to_string(out.join("metrics.json")).unwrap();
    // six decimals at most
    for token in text.split(|c: char| !(c.is_ascii_digit() || c == '.')) {
        if let Some((_, frac)) = token.split_once('.') {
            assert!(frac.len() <= 6, "{token}");
        }
    }
}

#[test]
fn extract_patches_on_dot_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let mut image = RasterImage::filled(64, 64, [120, 60, 30]);
    let mut mask = LesionMask::empty(64, 64);
    for (x, y) in [(20, 20), (21, 20), (20, 21), (21, 21)] {
        image.set_pixel(x, y, [250, 230, 200]);
        mask.set(x, y, true);
    }
    std::fs::write(dir.path().join("fundus.ppm"), encode_ppm(&image)).unwrap();
    std::fs::write(dir.path().join("fundus.pgm"), encode_pgm_mask(&mask)).unwrap();
    let out = dir.path().join("out");
    ok(&[
        "extract-patches",
        "--image",
        p(&dir.path().join("fundus.ppm")),
        "--mask",
        p(&dir.path().join("fundus.pgm")),
        "--per-class",
        "1",
        "--out",
        p(&out),
    ]);
    let patches = read_patch_file(out.join("patches.csv")).unwrap();
    assert_eq!(patches.len(), 2);
    assert_eq!(patches.class_counts(), (1, 1));
}

#[test]
fn split_and_synthesize_write_client_files() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["synthesize", "--per-class", "20", "--seed", "3", "--out", p(&dir.path().join("pool"))]);
    let stdout = ok(&[
        "split",
        "--data",
        p(&dir.path().join("pool/pool.csv")),
        "--clients",
        "2",
        "--seed",
        "3",
        "--out",
        p(&dir.path().join("split")),
    ]);
    assert_eq!(stdout.lines().count(), 2);
    let mut total = 0;
    for id in ["c1", "c2"] {
        for part in ["train", "validation"] {
            total += read_patch_file(dir.path().join(format!("split/{id}_{part}.csv"))).unwrap().len();
        }
    }
    assert_eq!(total, 40);
}

fn history(n: u32) -> Vec<EpochRecord> {
    (1..=n)
        .map(|epoch| EpochRecord {
            epoch,
            loss: 1.0 / epoch as f64,
            train_accuracy: 0.5,
            validation_accuracy: 0.25 * epoch as f64,
        })
        .collect()
}

#[test]
fn curves_have_header_and_one_row_per_epoch() {
    let text = emit_curves(&history(3)).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "epoch,loss,train_accuracy,validation_accuracy");
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[1], "1,1.0,0.5,0.25");
    assert_eq!(emit_curves(&[]), Err(CurveError::EmptyHistory));
}

#[test]
fn train_local_curves_agree_with_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("local");
    ok(&[
        "train-local",
        "--synthetic-per-class",
        "40",
        "--epochs",
        "15",
        "--patience",
        "5",
        "--seed",
        "5",
        "--out",
        p(&out),
    ]);
    let mut reader = csv::Reader::from_path(out.join("curves/local.csv")).unwrap();
    let rows: Vec<(u32, f64, f64, f64)> = reader.deserialize().map(|r| r.unwrap()).collect();
    assert!(!rows.is_empty());
    assert!(rows.iter().enumerate().all(|(i, r)| r.0 == i as u32 + 1));
    assert!(rows.iter().all(|r| r.1.is_finite()));
    let best = rows.iter().map(|r| r.3).fold(f64::MIN, f64::max);

    let eval_dir = dir.path().join("eval");
    ok(&[
        "evaluate",
        "--model",
        p(&out.join("models/best.json")),
        "--data",
        p(&out.join("data/validation.csv")),
        "--out",
        p(&eval_dir),
    ]);
    let acc = metrics(&eval_dir).evaluations[0].metrics.accuracy.unwrap();
    assert_eq!(acc, (best * 1e6).round() / 1e6);
}

#[test]
fn config_file_values_apply_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "seed = 3\n[data]\nsynthetic_per_class = 12\n[training]\nmax_epochs = 2\npatience = 1\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    ok(&["synthesize", "--config", p(&cfg), "--seed", "4", "--out", p(&out)]);
    let snap = RunConfig::from_toml(&std::fs::read_to_string(out.join("config.snapshot")).unwrap()).unwrap();
    assert_eq!(snap.seed, 4);
    assert_eq!(snap.data.synthetic_per_class, 12);
    assert_eq!(read_patch_file(out.join("pool.csv")).unwrap().len(), 24);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let code = |args: &[&str]| fedqnn(args).status.code().unwrap();

    assert_eq!(code(&["federate", "--weights", "5:0:4", "--out", p(&out)]), 1);
    assert_eq!(code(&["federate", "--weights", "5::4", "--out", p(&out)]), 1);
    assert_eq!(code(&["evaluate", "--out", p(&out)]), 1);
    assert_eq!(code(&["federate", "--optimizer", "sgd", "--out", p(&out)]), 1);
    assert_eq!(code(&["train-local", "--layers", "0", "--out", p(&out)]), 1);
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[training]\nepoch = 3\n").unwrap();
    assert_eq!(code(&["synthesize", "--config", p(&bad), "--out", p(&out)]), 1);
    assert_eq!(code(&["synthesize"]), 1);
    assert_eq!(code(&["--help"]), 0);

    let missing = dir.path().join("missing.csv");
    assert_eq!(code(&["split", "--data", p(&missing), "--out", p(&out)]), 2);

    // a server that answers with garbage
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let fake = thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut line = String::new();
        reader.read_line(&mut line).unwrap();
        (&stream).write_all(b"not json\n").unwrap();
        line
    });
    let data = dir.path().join("d.csv");
    write_patch_file(&data, &synthetic_pool(4, 1, &SyntheticConfig::default())).unwrap();
    let args = [
        "client",
        "--connect",
        &addr,
        "--client-id",
        "c1",
        "--weight",
        "1",
        "--train",
        p(&data),
        "--validation",
        p(&data),
        "--out",
        p(&out),
    ];
    assert_eq!(code(&args), 3);
    assert!(fake.join().unwrap().contains("\"hello\""));
}

#[test]
fn serve_over_loopback_with_transcripts() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["synthesize", "--per-class", "16", "--seed", "8", "--out", p(&dir.path().join("pool"))]);
    ok(&[
        "split",
        "--data",
        p(&dir.path().join("pool/pool.csv")),
        "--clients",
        "2",
        "--seed",
        "8",
        "--out",
        p(&dir.path().join("split")),
    ]);
    let mut server = Command::new(env!("CARGO_BIN_EXE_fedqnn"))
        .args(["serve", "--listen", "127.0.0.1:0", "--weights", "2:1", "--rounds", "2", "--epochs", "3"])
        .args(["--patience", "2", "--timeout", "60", "--out", p(&dir.path().join("server"))])
        .stdout(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    let mut banner = String::new();
    let mut server_out = BufReader::new(server.stdout.take().unwrap());
    server_out.read_line(&mut banner).unwrap();
    let addr = banner.trim().strip_prefix("listening on ").unwrap().to_string();
    let clients: Vec<_> = [("c1", "2", "8"), ("c2", "1", "9")]
        .iter()
        .map(|(id, w, seed)| {
            let split = dir.path().join("split");
            Command::new(env!("CARGO_BIN_EXE_fedqnn"))
                .args(["client", "--connect", &addr, "--client-id", id, "--weight", w, "--seed", seed])
                .args(["--train", p(&split.join(format!("{id}_train.csv")))])
                .args(["--validation", p(&split.join(format!("{id}_validation.csv")))])
                .args(["--out", p(&dir.path().join(id))])
                .stdout(std::process::Stdio::null())
                .stderr(std::process::Stdio::piped())
                .spawn()
                .unwrap()
        })
        .collect();
    let clients: Vec<Output> = clients.into_iter().map(|c| c.wait_with_output().unwrap()).collect();
    let mut summary = String::new();
    std::io::Read::read_to_string(&mut server_out, &mut summary).unwrap();
    assert!(server.wait().unwrap().success());
    assert!(summary.starts_with("round 0:"), "{summary}");
    for c in &clients {
        assert!(c.status.success(), "{}", String::from_utf8_lossy(&c.stderr));
    }
    let server_dir = dir.path().join("server");
    let transcript = std::fs::read_to_string(server_dir.join("transcript.log")).unwrap();
    assert!(transcript.lines().any(|l| l.starts_with("send c1 {\"type\":\"welcome\"")), "{transcript}");
    assert!(transcript.lines().last().unwrap().contains("\"done\""));
    assert!(server_dir.join("models/round_01_global.json").exists());
    assert_eq!(metrics(&server_dir).evaluations.len(), 4);
    let c1 = dir.path().join("c1");
    assert!(c1.join("transcript.log").exists() && c1.join("curves/round_01.csv").exists());
    let global_server = Model::load(server_dir.join("models/round_01_global.json")).unwrap();
    let global_client = Model::load(c1.join("models/round_01_global.json")).unwrap();
    assert_eq!(global_server, global_client);
}
