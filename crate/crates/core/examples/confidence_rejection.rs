//! Thresholded inference on a backdoored model: how accuracy, attack success
//! and rejections move with tau, and the ROC of confidence-based rejection.
//!
//!     cargo run --release --example confidence_rejection -- roc.csv

use flipfl::config::preset;
use flipfl::experiment::{load_data, planted_trigger};
use flipfl::federation::Simulation;
use flipfl::guard::{roc_points, verdicts, write_roc_csv};

fn main() -> flipfl::Result<()> {
    let mut cfg = preset("theory-harness")?;
    cfg.federation.total_rounds = 15;
    let (train, test) = load_data(&cfg)?;
    let trigger = planted_trigger(&cfg, &train)?;
    let mut sim = Simulation::new(cfg.federation, cfg.inversion, trigger, &train, &test, cfg.seed)?;
    sim.run()?;
    for tau in [0.0, 0.3, 0.5, 0.7, 0.9] {
        let m = sim.metrics(tau)?;
        println!(
            "tau {tau:.1}: acc {:.4} asr {:.4} rejected clean {} backdoor {} (auc {:.3})",
            m.acc, m.asr, m.clean_rejected, m.bd_rejected, m.auc
        );
    }
    if let Some(path) = std::env::args().nth(1) {
        let conf = |v: Vec<flipfl::guard::InferenceVerdict>| v.into_iter().map(|v| v.confidence).collect::<Vec<_>>();
        let clean = conf(verdicts(&sim.global, &sim.clean_test, None, 0.0)?);
        let bd = conf(verdicts(&sim.global, &sim.bd_test, Some(&sim.trigger), 0.0)?);
        write_roc_csv(&roc_points(&clean, &bd)?, &mut std::fs::File::create(&path)?)?;
        println!("wrote {path}");
    }
    Ok(())
}
