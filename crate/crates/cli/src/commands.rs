//! One function per mode. Each writes `config.snapshot` first, then its
//! artifacts, and prints a short human-readable summary.

use std::io::Write;
use std::net::TcpListener;
use std::sync::Arc;
use std::time::Duration;

use fedqnn::data::synthetic::{synthetic_pool, SyntheticConfig};
use fedqnn::data::{self, read_patch_file};
use fedqnn::fed::{clients_from_pool, local_train, FedError};
use fedqnn::fednet::{self, ClientError, ClientSettings, ServeError, ServerPlan};
use fedqnn::qnn::evaluate;
use fedqnn::{run_federation, ClientConfig, FederationPlan, Model, ModelParams, PatchDataset, RoundRecord};

use crate::artifacts::{percent, round_name, Evaluation, MetricsDocument, RunDir, METRICS_FILE, TRANSCRIPT_FILE};
use crate::config::{missing, RunConfig, SNAPSHOT_FILE};
use crate::CliError;

/// Summary output; a closed stdout must not abort a run.
macro_rules! say {
    ($($arg:tt)*) => {{
        let mut out = std::io::stdout().lock();
        let _ = writeln!(out, $($arg)*);
        let _ = out.flush();
    }};
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn fed_error(e: FedError) -> CliError {
    match e {
        FedError::InvalidPlan(_) | FedError::NonPositiveWeight { .. } | FedError::Optim(_) => {
            CliError::Config(e.to_string())
        }
        other => CliError::Runtime(other.to_string()),
    }
}

fn load_patches(path: &std::path::Path) -> Result<PatchDataset, CliError> {
    read_patch_file(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn open_run(cfg: &RunConfig) -> Result<RunDir, CliError> {
    let dir = RunDir::create(cfg.out_dir()?)?;
    dir.write(SNAPSHOT_FILE, cfg.to_toml())?;
    Ok(dir)
}

fn synthetic(cfg: &RunConfig) -> PatchDataset {
    synthetic_pool(cfg.data.synthetic_per_class, cfg.seed, &SyntheticConfig::default())
}

fn evaluation(scope: String, cm: fedqnn::ConfusionMatrix) -> Result<Evaluation, CliError> {
    Evaluation::new(scope, cm).map_err(runtime)
}

fn check_circuit(cfg: &RunConfig) -> Result<(), CliError> {
    cfg.circuit.validate().map_err(|e| CliError::Config(format!("circuit: {e}")))?;
    cfg.training.validate().map_err(|e| CliError::Config(format!("training: {e}")))
}

pub fn train_local(cfg: &RunConfig) -> Result<(), CliError> {
    check_circuit(cfg)?;
    let (train, validation) = match (&cfg.data.train, &cfg.data.validation) {
        (Some(t), Some(v)) => (load_patches(t)?, load_patches(v)?),
        (None, None) => data::split(&synthetic(cfg), cfg.data.train_fraction, cfg.seed).map_err(runtime)?,
        (Some(_), None) => return Err(missing("data.validation")),
        (None, Some(_)) => return Err(missing("data.train")),
    };
    let dir = open_run(cfg)?;
    dir.write_patches("data/train.csv", &train)?;
    dir.write_patches("data/validation.csv", &validation)?;
    let client = ClientConfig {
        client_id: "local".into(),
        weight: 1.0,
        train: Arc::new(train),
        validation: Arc::new(validation),
        rng_seed: cfg.seed,
    };
    let init = ModelParams::zeros(&cfg.circuit);
    let outcome = local_train(&client, &cfg.circuit, &init, &cfg.training).map_err(fed_error)?;
    dir.write_model("models/best.json", &cfg.circuit, &outcome.best_params)?;
    dir.write_curves("curves/local.csv", &outcome.history)?;
    let cm = evaluate(&cfg.circuit, &outcome.best_params, &client.validation.examples()).map_err(runtime)?;
    let eval = evaluation("best model on validation".into(), cm)?;
    say!(
        "best epoch {} of {}: validation accuracy {}",
        outcome.best_epoch,
        outcome.epochs_run,
        percent(eval.metrics.accuracy)
    );
    dir.write_json(METRICS_FILE, &MetricsDocument { evaluations: vec![eval] })?;
    Ok(())
}

/// Per-round models, curves, summaries and global-model metrics shared by
/// the in-process and served federations.
fn write_rounds(dir: &RunDir, cfg: &RunConfig, records: &[RoundRecord]) -> Result<(), CliError> {
    let mut doc = MetricsDocument::default();
    for record in records {
        let name = round_name(record.round_index);
        dir.write_model(&format!("models/{name}_global.json"), &cfg.circuit, &record.global_params)?;
        dir.write_json(&format!("rounds/{name}.json"), record)?;
        let mut line = format!("round {}:", record.round_index);
        for c in &record.clients {
            let id = &c.client_id;
            dir.write_model(&format!("models/{name}_{id}_best.json"), &cfg.circuit, &c.best_params)?;
            if !c.history.is_empty() {
                dir.write_curves(&format!("curves/{name}_{id}.csv"), &c.history)?;
            }
            let scope = format!("round {} global on {id} validation", record.round_index);
            let eval = evaluation(scope, c.global_validation)?.for_client(record.round_index, id);
            line.push_str(&format!(" {id} {}", percent(eval.metrics.accuracy)));
            doc.evaluations.push(eval);
        }
        say!("{line}");
    }
    if let Some(last) = records.last() {
        dir.write_model("models/final_global.json", &cfg.circuit, &last.global_params)?;
    }
    dir.write_json(METRICS_FILE, &doc)?;
    Ok(())
}

fn client_datasets(cfg: &RunConfig) -> Result<Vec<ClientConfig>, CliError> {
    let pool = match &cfg.data.pool {
        Some(path) => load_patches(path)?,
        None => synthetic(cfg),
    };
    clients_from_pool(&pool, &cfg.federation.weights, cfg.data.train_fraction, cfg.seed).map_err(fed_error)
}

pub fn federate(cfg: &RunConfig) -> Result<(), CliError> {
    check_circuit(cfg)?;
    let clients = client_datasets(cfg)?;
    let plan = FederationPlan {
        clients,
        rounds_max: cfg.federation.rounds_max,
        target_accuracy: cfg.federation.target_accuracy,
        circuit: cfg.circuit,
        training: cfg.training,
        parallel_clients: cfg.federation.parallel_clients,
    };
    plan.validate().map_err(fed_error)?;
    let dir = open_run(cfg)?;
    for c in &plan.clients {
        dir.write_patches(&format!("data/{}_train.csv", c.client_id), &c.train)?;
        dir.write_patches(&format!("data/{}_validation.csv", c.client_id), &c.validation)?;
    }
    let records = run_federation(&plan).map_err(fed_error)?;
    write_rounds(&dir, cfg, &records)
}

fn serve_error(e: ServeError) -> CliError {
    match e {
        ServeError::Transport { .. } | ServeError::ClientFailed { .. } => CliError::Protocol(e.to_string()),
        ServeError::Plan(f) => fed_error(f),
        other => CliError::Runtime(other.to_string()),
    }
}

pub fn serve(cfg: &RunConfig) -> Result<(), CliError> {
    check_circuit(cfg)?;
    let plan = ServerPlan {
        roster: cfg
            .federation
            .weights
            .iter()
            .enumerate()
            .map(|(i, &w)| (format!("c{}", i + 1), w))
            .collect(),
        rounds_max: cfg.federation.rounds_max,
        target_accuracy: cfg.federation.target_accuracy,
        circuit: cfg.circuit,
        training: cfg.training,
        round_timeout: Duration::from_secs(cfg.network.timeout_secs),
    };
    plan.validate().map_err(fed_error)?;
    let dir = open_run(cfg)?;
    let listener = TcpListener::bind(&cfg.network.listen)
        .map_err(|e| CliError::Runtime(format!("bind {}: {e}", cfg.network.listen)))?;
    let addr = listener.local_addr().map_err(runtime)?;
    say!("listening on {addr}");
    let outcome = fednet::serve_on(&plan, listener).map_err(serve_error)?;
    let transcript: Vec<String> = outcome
        .transcript
        .iter()
        .map(|t| format!("{} {} {}", t.direction, t.peer, t.line))
        .collect();
    dir.write(TRANSCRIPT_FILE, transcript.join("\n") + "\n")?;
    write_rounds(&dir, cfg, &outcome.records)
}

fn client_error(e: ClientError) -> CliError {
    if e.is_protocol() {
        CliError::Protocol(e.to_string())
    } else {
        CliError::Runtime(e.to_string())
    }
}

pub fn client(cfg: &RunConfig) -> Result<(), CliError> {
    let client_id = cfg.network.client_id.clone().ok_or_else(|| missing("network.client_id"))?;
    let weight = cfg.network.weight.ok_or_else(|| missing("network.weight"))?;
    let train = load_patches(cfg.data.train.as_deref().ok_or_else(|| missing("data.train"))?)?;
    let validation = load_patches(cfg.data.validation.as_deref().ok_or_else(|| missing("data.validation"))?)?;
    let dir = open_run(cfg)?;
    let mut settings = ClientSettings::new(client_id.clone(), weight, cfg.seed);
    settings.connect_timeout = Duration::from_secs(cfg.network.timeout_secs);
    let outcome = fednet::client_run(&cfg.network.connect, &settings, &train.examples(), &validation.examples())
        .map_err(client_error)?;
    dir.write(TRANSCRIPT_FILE, outcome.transcript.join("\n") + "\n")?;
    let mut doc = MetricsDocument::default();
    for log in &outcome.rounds {
        let name = round_name(log.round);
        dir.write_model(&format!("models/{name}_best.json"), &outcome.circuit, &log.outcome.best_params)?;
        dir.write_curves(&format!("curves/{name}.csv"), &log.outcome.history)?;
        if let Some(global) = &log.global_params {
            dir.write_model(&format!("models/{name}_global.json"), &outcome.circuit, global)?;
        }
        if let Some(cm) = log.global_validation {
            let scope = format!("round {} global on {client_id} validation", log.round);
            let eval = evaluation(scope, cm)?.for_client(log.round, &client_id);
            say!("round {}: global validation accuracy {}", log.round, percent(eval.metrics.accuracy));
            doc.evaluations.push(eval);
        }
    }
    dir.write_json(METRICS_FILE, &doc)?;
    say!("{client_id} done after {} rounds: {}", outcome.rounds.len(), outcome.done_reason);
    Ok(())
}

pub fn evaluate_model(cfg: &RunConfig) -> Result<(), CliError> {
    let model_path = cfg.data.model.as_deref().ok_or_else(|| missing("data.model"))?;
    let data_path = cfg.data.patches.as_deref().ok_or_else(|| missing("data.patches"))?;
    let model = Model::load(model_path).map_err(|e| CliError::Runtime(format!("{}: {e}", model_path.display())))?;
    let dataset = load_patches(data_path)?;
    let dir = open_run(cfg)?;
    let cm = evaluate(&model.spec, &model.params, &dataset.examples()).map_err(runtime)?;
    let eval = evaluation(format!("{} on {}", model_path.display(), data_path.display()), cm)?;
    let m = &eval.metrics;
    say!(
        "accuracy {} precision {} recall {} f1 {} specificity {}",
        percent(m.accuracy),
        percent(m.precision),
        percent(m.recall),
        percent(m.f1),
        percent(m.specificity)
    );
    dir.write_json(METRICS_FILE, &MetricsDocument { evaluations: vec![eval] })?;
    Ok(())
}

pub fn extract(cfg: &RunConfig) -> Result<(), CliError> {
    let image_path = cfg.data.image.as_deref().ok_or_else(|| missing("data.image"))?;
    let mask_path = cfg.data.mask.as_deref().ok_or_else(|| missing("data.mask"))?;
    let image = data::pnm::read_ppm(image_path).map_err(|e| CliError::Runtime(format!("{}: {e}", image_path.display())))?;
    let mask = data::pnm::read_pgm_mask(mask_path).map_err(|e| CliError::Runtime(format!("{}: {e}", mask_path.display())))?;
    let id = image_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into());
    let patches = data::extract_patches(&id, &image, &mask, cfg.data.per_image, cfg.seed).map_err(runtime)?;
    let dir = open_run(cfg)?;
    let path = dir.write_patches("patches.csv", &patches)?;
    let (healthy, affected) = patches.class_counts();
    say!("{healthy} healthy and {affected} affected patches written to {}", path.display());
    Ok(())
}

pub fn split(cfg: &RunConfig) -> Result<(), CliError> {
    let path = cfg.data.patches.as_deref().ok_or_else(|| missing("data.patches"))?;
    let pool = load_patches(path)?;
    let weights = vec![1.0; cfg.data.clients];
    let clients = clients_from_pool(&pool, &weights, cfg.data.train_fraction, cfg.seed).map_err(fed_error)?;
    let dir = open_run(cfg)?;
    for c in &clients {
        dir.write_patches(&format!("{}_train.csv", c.client_id), &c.train)?;
        dir.write_patches(&format!("{}_validation.csv", c.client_id), &c.validation)?;
        say!(
            "{}: {} train, {} validation, seed {}",
            c.client_id,
            c.train.len(),
            c.validation.len(),
            c.rng_seed
        );
    }
    Ok(())
}

pub fn synthesize(cfg: &RunConfig) -> Result<(), CliError> {
    let pool = synthetic(cfg);
    let dir = open_run(cfg)?;
    let path = dir.write_patches("pool.csv", &pool)?;
    say!("{} patches written to {}", pool.len(), path.display());
    Ok(())
}
