//! The two-client bound check on MNIST: every clean and backdoor test sample
//! is checked against its loss-change bracket after one pinned round.
//!
//!     cargo run --release --example theory_harness -- theory.json

use flipfl::config::preset;
use flipfl::experiment::run_theory;

fn main() -> flipfl::Result<()> {
    let mut cfg = preset("theory-harness")?;
    cfg.federation.total_rounds = 15;
    let out = std::env::args().nth(1);
    let r = run_theory(&cfg, out.as_deref().map(|p| std::path::Path::new(p).parent().unwrap_or(".".as_ref())))?;
    println!("round {} eta {} benign weight {:.3}", r.round, r.eta, r.benign_weight);
    println!("weight update matches its closed form to {:.1e}", r.weight_delta_error);
    println!(
        "bound violations: clean {}/{}  backdoor {}/{}",
        r.clean_bounds.violations, r.clean_bounds.checked, r.backdoor_bounds.violations, r.backdoor_bounds.checked
    );
    println!("forecast {:?}", r.forecast);
    println!(
        "loss-rejected backdoor samples {} -> {}, clean {} -> {}",
        r.no_defense.backdoor_loss_rejected,
        r.defense.backdoor_loss_rejected,
        r.no_defense.clean_loss_rejected,
        r.defense.clean_loss_rejected
    );
    println!("certificate: {}", r.certificate.status);
    Ok(())
}
