//! The two-client setting round by round, with and without FLIP.
//!
//!     cargo run --release --example federated_attack -- continuous
//!     cargo run --release --example federated_attack -- single-shot

use flipfl::config::preset;
use flipfl::experiment::{load_data, planted_trigger};
use flipfl::federation::{AttackMode, DefenseKind, Simulation};

fn main() -> flipfl::Result<()> {
    let mode = std::env::args().nth(1).unwrap_or_else(|| "continuous".into());
    let mut cfg = preset("theory-harness")?;
    cfg.federation.total_rounds = 20;
    if mode == "single-shot" {
        cfg.federation.attack_mode = AttackMode::SingleShot;
        cfg.federation.scale_factor = 2.0;
    }
    let (train, test) = load_data(&cfg)?;
    let trigger = planted_trigger(&cfg, &train)?;
    for defense in [DefenseKind::None, DefenseKind::Flip] {
        let mut fed = cfg.federation.clone();
        fed.defense = defense;
        let mut sim = Simulation::new(fed, cfg.inversion.clone(), trigger.clone(), &train, &test, cfg.seed)?;
        println!("defense {defense:?}");
        for r in sim.run()? {
            println!(
                "  round {:2} adversaries {}  acc {:.4}  asr {:.4}  rejected clean/backdoor {}/{}",
                r.round, r.adversaries, r.acc, r.asr, r.clean_rejected, r.bd_rejected
            );
        }
    }
    Ok(())
}
