use std::io::Read;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use flipfl::config::{preset, ExperimentConfig, PRESET_NAMES};
use flipfl::experiment::{run_experiment, run_sweep, run_theory};

/// Federated backdoor simulator with trigger-inversion hardening.
#[derive(Parser)]
#[command(version)]
struct Cli {
    /// TOML experiment config; `-` reads stdin.
    #[arg(long, global = true, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in preset.
    #[arg(long, global = true, value_parser = clap::builder::PossibleValuesParser::new(PRESET_NAMES))]
    preset: Option<String>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for client updates (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the federation and write rounds.csv, summary.json, roc.csv and triggers/.
    Run,
    /// Run the two-client bound check and write theory.json.
    Theory,
    /// Run every configured sweep and write sweep.csv.
    Sweep,
}

fn load(cli: &Cli) -> flipfl::Result<ExperimentConfig> {
    let mut cfg = match (&cli.config, &cli.preset) {
        (Some(p), _) if p.as_os_str() == "-" => {
            let mut text = String::new();
            std::io::stdin().read_to_string(&mut text)?;
            ExperimentConfig::from_toml_str(&text)?
        }
        (Some(p), _) => ExperimentConfig::from_path(p)?,
        (None, Some(name)) => preset(name)?,
        (None, None) => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> flipfl::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| flipfl::FlipError::InvalidArgument(format!("--threads: {e}")))?;
    }
    let cfg = load(cli)?;
    let out = cli.out.as_path();
    match cli.command {
        Command::Run => {
            let s = run_experiment(&cfg, Some(out))?.summary;
            let m = &s.final_metrics;
            println!("acc {:.4}  asr {:.4}  auc {:.4}  (tau {})", m.acc, m.asr, m.auc, m.tau);
        }
        Command::Theory => {
            let r = run_theory(&cfg, Some(out))?;
            println!(
                "bound violations: clean {} backdoor {}  certificate: {}",
                r.clean_bounds.violations, r.backdoor_bounds.violations, r.certificate.status
            );
            println!(
                "rejected backdoor: {} without defense, {} with",
                r.no_defense.backdoor_loss_rejected, r.defense.backdoor_loss_rejected
            );
        }
        Command::Sweep => {
            for p in run_sweep(&cfg, Some(out))? {
                println!("{} = {}: acc {:.4} asr {:.4}", p.axis, p.value, p.metrics.acc, p.metrics.asr);
            }
        }
    }
    eprintln!("artifacts in {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
