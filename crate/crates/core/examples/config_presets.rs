//! Shipped presets and config overrides.

use flipfl::config::{preset, ExperimentConfig, PRESET_NAMES};

fn main() -> flipfl::Result<()> {
    for name in PRESET_NAMES {
        let c = preset(name)?;
        let f = &c.federation;
        println!(
            "{name:<20} {} clients ({}/round, {} adversaries), {:?} from round {}, {} rounds, defense {:?}",
            f.num_clients, f.clients_per_round, f.num_adversaries, f.attack_mode, f.attack_start_round, f.total_rounds, f.defense
        );
    }
    let custom = ExperimentConfig::from_toml_str(
        r#"
seed = 42
[federation]
num_clients = 10
clients_per_round = 5
[federation.aggregator]
rule = "krum"
f = 1
"#,
    )?;
    println!("\n{}", custom.to_toml_string());
    match ExperimentConfig::from_toml_str("[federation]\nnum_clients = 10\nclients_per_round = 11") {
        Err(e) => println!("rejected: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
