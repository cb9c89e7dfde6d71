//! A complete experiment on synthetic blobs, no dataset needed. Writes the
//! usual artifacts.
//!
//!     cargo run --release --example synthetic_run -- /tmp/synthetic

use flipfl::config::ExperimentConfig;
use flipfl::experiment::run_experiment;

const CONFIG: &str = r#"
seed = 4

[data.source]
kind = "synthetic"
num_classes = 5
dim = 64
train_per_class = 200
test_per_class = 60

[trigger]
size = 2
target_label = 1

[federation]
num_clients = 20
clients_per_round = 6
num_adversaries = 2
total_rounds = 12
attack_start_round = 6
batch_size = 32
poison_count = 10
epochs_continuous = 2

[inversion]
max_steps = 50
samples_per_class = 16
"#;

fn main() -> flipfl::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "synthetic-out".into());
    let cfg = ExperimentConfig::from_toml_str(CONFIG)?;
    let outcome = run_experiment(&cfg, Some(out.as_ref()))?;
    for r in &outcome.records {
        println!("round {:2} adversaries {} acc {:.3} asr {:.3}", r.round, r.adversaries, r.acc, r.asr);
    }
    let s = &outcome.summary;
    println!("final acc {:.3} asr {:.3}, artifacts in {out}", s.final_metrics.acc, s.final_metrics.asr);
    Ok(())
}
