//! Runs the three-client synthetic federation and prints per-round results.
//!
//! `cargo run --release -p fedqnn --example synthetic_federation -- [gd|nesterov|adam] [lr]`

use std::time::Instant;

use fedqnn::data::synthetic::{synthetic_pool, SyntheticConfig};
use fedqnn::fed::clients_from_pool;
use fedqnn::{run_federation, CircuitSpec, FederationPlan, OptimizerConfig, TrainingConfig};

fn main() {
    let mut args = std::env::args().skip(1);
    let kind = args.next().map(|s| s.parse().unwrap()).unwrap_or_default();
    let lr: f64 = args.next().map(|s| s.parse().unwrap()).unwrap_or(0.01);
    let seed = 42;

    let pool = synthetic_pool(471, seed, &SyntheticConfig::default());
    let clients = clients_from_pool(&pool, &[5.0, 5.0, 4.0], 0.75, seed).unwrap();
    let training = TrainingConfig {
        optimizer: OptimizerConfig {
            kind,
            learning_rate: lr,
            ..Default::default()
        },
        ..Default::default()
    };
    let mut plan = FederationPlan::new(clients, CircuitSpec::default(), training);
    plan.parallel_clients = true;

    let start = Instant::now();
    let records = run_federation(&plan).unwrap();
    for r in &records {
        let summary: Vec<String> = r
            .clients
            .iter()
            .map(|c| {
                format!(
                    "{} local {:.3} ({} ep) global {:.3}",
                    c.client_id,
                    c.best_validation_accuracy,
                    c.epochs_run,
                    c.global_accuracy()
                )
            })
            .collect();
        println!("round {}: {}", r.round_index, summary.join(" | "));
    }
    println!("elapsed {:.1?}", start.elapsed());
}
