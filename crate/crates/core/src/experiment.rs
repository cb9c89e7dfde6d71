//! End-to-end runs driven by an [`ExperimentConfig`], and the artifacts they
//! leave in an output directory:
//!
//! ```text
//! out/
//!   rounds.csv      one row per round
//!   summary.json    final metrics and the config that produced them
//!   roc.csv         rejection ROC of the final model
//!   theory.json     bound-check report (when enabled)
//!   triggers/       planted and recovered triggers
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{resolve_data_dir, DataSource, ExperimentConfig};
use crate::data::{gen_synthetic, load_idx_pair, LabeledDataset, TriggerSpec};
use crate::error::{FlipError, Result};
use crate::federation::{AttackMode, RoundRecord, Simulation};
use crate::guard::{roc_points, verdicts, write_roc_csv};
use crate::inversion::{class_distance, export_trigger, flip_rate, invert_trigger};
use crate::numerics::SeededRng;
use crate::theory::{run_theory_harness, theory_check, TheoryReport};

/// Train and test split described by `cfg.data`.
pub fn load_data(cfg: &ExperimentConfig) -> Result<(LabeledDataset, LabeledDataset)> {
    let (train, test) = match &cfg.data.source {
        DataSource::Idx { dir } => load_idx_pair(resolve_data_dir(dir))?,
        DataSource::Synthetic {
            num_classes,
            dim,
            train_per_class,
            test_per_class,
        } => {
            let mut rng = SeededRng::new(cfg.seed).derive(&[u64::MAX - 3]);
            let all = gen_synthetic(*num_classes, *dim, train_per_class + test_per_class, &mut rng)?;
            let cut = train_per_class * num_classes;
            let idx: Vec<usize> = (0..all.len()).collect();
            (all.select(&idx[..cut]), all.select(&idx[cut..]))
        }
    };
    let train = cfg.data.train_limit.map_or(train.clone(), |n| train.take(n));
    let test = cfg.data.test_limit.map_or(test.clone(), |n| test.take(n));
    Ok((train, test))
}

/// The square patch described by `cfg.trigger`, sized for `ds`.
pub fn planted_trigger(cfg: &ExperimentConfig, ds: &LabeledDataset) -> Result<TriggerSpec> {
    let t = &cfg.trigger;
    if t.target_label >= ds.num_classes {
        return Err(FlipError::Config {
            key: "trigger.target_label".into(),
            message: format!("dataset has {} classes", ds.num_classes),
        });
    }
    TriggerSpec::square_patch((ds.width, ds.height, ds.channels), t.size, t.corner, t.margin, t.target_label)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub tau: f64,
    pub acc: f64,
    pub asr: f64,
    pub clean_rejected: usize,
    pub bd_rejected: usize,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerReport {
    pub planted_l1: f64,
    /// Mask L1 of a trigger inverted toward the target on the final model.
    pub recovered_l1: f64,
    /// Share of backdoor test sources the recovered trigger sends to the target.
    pub recovered_flip_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub rounds: usize,
    pub attack_rounds: usize,
    pub final_metrics: FinalMetrics,
    /// Final model evaluated with thresholding off.
    pub no_threshold: FinalMetrics,
    pub peak_asr: f64,
    /// Mean ASR over rounds in which an adversary took part, and every later round.
    pub mean_asr_after_attack: f64,
    pub triggers: Option<TriggerReport>,
    pub config: ExperimentConfig,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub records: Vec<RoundRecord>,
    pub summary: RunSummary,
    pub theory: Option<TheoryReport>,
    pub simulation: Simulation,
}

fn final_metrics(sim: &Simulation, tau: f64) -> Result<FinalMetrics> {
    let m = sim.metrics(tau)?;
    Ok(FinalMetrics {
        tau,
        acc: m.acc,
        asr: m.asr,
        clean_rejected: m.clean_rejected,
        bd_rejected: m.bd_rejected,
        auc: m.auc,
    })
}

fn recover_trigger(sim: &Simulation) -> Result<TriggerSpec> {
    let mut rng = sim.rng().derive(&[u64::MAX - 9]);
    Ok(invert_trigger(&sim.global, &sim.bd_test, sim.trigger.target_label, &sim.inversion, &mut rng)?.trigger)
}

fn summarize(cfg: &ExperimentConfig, sim: &Simulation, records: &[RoundRecord], recovered: Option<&TriggerSpec>) -> Result<RunSummary> {
    let first_attack = records.iter().position(|r| r.adversaries > 0);
    let after: Vec<f64> = first_attack.map_or(Vec::new(), |i| records[i..].iter().map(|r| r.asr).collect());
    let triggers = match recovered {
        Some(t) => Some(TriggerReport {
            planted_l1: class_distance(&sim.trigger),
            recovered_l1: class_distance(t),
            recovered_flip_rate: flip_rate(&sim.global, &sim.bd_test, t)?,
        }),
        None => None,
    };
    Ok(RunSummary {
        seed: cfg.seed,
        rounds: records.len(),
        attack_rounds: records.iter().filter(|r| r.adversaries > 0).count(),
        final_metrics: final_metrics(sim, cfg.federation.tau)?,
        no_threshold: final_metrics(sim, 0.0)?,
        peak_asr: records.iter().map(|r| r.asr).fold(0.0, f64::max),
        mean_asr_after_attack: if after.is_empty() { 0.0 } else { after.iter().sum::<f64>() / after.len() as f64 },
        triggers,
        config: cfg.clone(),
    })
}

#[derive(Serialize)]
struct RoundRow {
    round: usize,
    adversaries: usize,
    acc: String,
    asr: String,
    auc: String,
    clean_rejected: usize,
    bd_rejected: usize,
    aggregator_pick: Option<usize>,
}

fn fixed(v: f64) -> String {
    format!("{v:.6}")
}

/// CSV with header `round,adversaries,acc,asr,auc,clean_rejected,bd_rejected,aggregator_pick`.
/// Reals carry six decimals; a missing pick is an empty field.
pub fn write_rounds_csv(records: &[RoundRecord], w: impl Write) -> Result<()> {
    if records.is_empty() {
        return Err(FlipError::InvalidArgument("no round records to write".into()));
    }
    let mut out = csv::Writer::from_writer(w);
    for r in records {
        out.serialize(RoundRow {
            round: r.round,
            adversaries: r.adversaries,
            acc: fixed(r.acc),
            asr: fixed(r.asr),
            auc: fixed(r.auc),
            clean_rejected: r.clean_rejected,
            bd_rejected: r.bd_rejected,
            aggregator_pick: r.aggregator_pick,
        })
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> FlipError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => FlipError::Io(io),
        other => FlipError::InvalidArgument(format!("csv: {other:?}")),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn write_roc(sim: &Simulation, path: &Path) -> Result<()> {
    let clean = verdicts(&sim.global, &sim.clean_test, None, 0.0)?;
    let bd = verdicts(&sim.global, &sim.bd_test, Some(&sim.trigger), 0.0)?;
    let cc: Vec<f64> = clean.iter().map(|v| v.confidence).collect();
    let bc: Vec<f64> = bd.iter().map(|v| v.confidence).collect();
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    write_roc_csv(&roc_points(&cc, &bc)?, &mut f)?;
    f.flush()?;
    Ok(())
}

/// Train, evaluate and summarize on already-loaded data.
pub fn run_on(cfg: &ExperimentConfig, train: &LabeledDataset, test: &LabeledDataset) -> Result<RunOutcome> {
    cfg.validate()?;
    let trigger = planted_trigger(cfg, train)?;
    let mut sim = Simulation::new(cfg.federation.clone(), cfg.inversion.clone(), trigger, train, test, cfg.seed)?;
    let mut records = Vec::with_capacity(cfg.federation.total_rounds);
    while sim.round < cfg.federation.total_rounds {
        let r = sim.run_round()?;
        log::info!(
            "round {:3}  adversaries {}  acc {:.4}  asr {:.4}  auc {:.3}",
            r.round,
            r.adversaries,
            r.acc,
            r.asr,
            r.auc
        );
        records.push(r);
    }
    let recovered = if cfg.output.triggers && cfg.federation.attack_mode != AttackMode::None {
        Some(recover_trigger(&sim)?)
    } else {
        None
    };
    let summary = summarize(cfg, &sim, &records, recovered.as_ref())?;
    let theory = if cfg.output.theory {
        Some(theory_check(&sim, &cfg.theory)?)
    } else {
        None
    };
    Ok(RunOutcome {
        records,
        summary,
        theory,
        simulation: sim,
    })
}

/// Write every artifact of `outcome` into `dir`.
pub fn write_artifacts(cfg: &ExperimentConfig, outcome: &RunOutcome, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_rounds_csv(&outcome.records, fs::File::create(dir.join("rounds.csv"))?)?;
    write_json(&dir.join("summary.json"), &outcome.summary)?;
    if let Some(t) = &outcome.theory {
        write_json(&dir.join("theory.json"), t)?;
    }
    let sim = &outcome.simulation;
    if cfg.output.roc {
        write_roc(sim, &dir.join("roc.csv"))?;
    }
    if cfg.output.triggers {
        let geometry = Some((sim.clean_test.width, sim.clean_test.height)).filter(|_| sim.clean_test.channels == 1);
        export_trigger(&sim.trigger, dir.join("triggers/planted"), geometry)?;
        if cfg.federation.attack_mode != AttackMode::None {
            export_trigger(&recover_trigger(sim)?, dir.join("triggers/recovered"), geometry)?;
        }
    }
    Ok(())
}

/// Load data, run, and write artifacts to `out` when given.
pub fn run_experiment(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<RunOutcome> {
    let (train, test) = load_data(cfg)?;
    let outcome = run_on(cfg, &train, &test)?;
    if let Some(dir) = out {
        write_artifacts(cfg, &outcome, dir)?;
    }
    Ok(outcome)
}

/// The bound-check harness alone; writes `theory.json` to `out` when given.
pub fn run_theory(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<TheoryReport> {
    cfg.validate()?;
    let (train, test) = load_data(cfg)?;
    let trigger = planted_trigger(cfg, &train)?;
    let report = run_theory_harness(&cfg.federation, &cfg.inversion, &cfg.theory, &trigger, &train, &test, cfg.seed)?;
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        write_json(&dir.join("theory.json"), &report)?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub axis: String,
    pub value: f64,
    pub metrics: FinalMetrics,
}

fn point_dir(out: Option<&Path>, axis: &str, value: f64) -> Option<std::path::PathBuf> {
    out.map(|d| d.join(format!("{axis}-{value}")))
}

/// Every non-empty sweep list of `cfg`. The τ axis re-evaluates one trained
/// model at each threshold; the other axes retrain per value. Writes
/// `sweep.csv` plus one sub-directory of artifacts per point.
pub fn run_sweep(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<Vec<SweepPoint>> {
    cfg.validate()?;
    if cfg.sweep.is_empty() {
        return Err(FlipError::Config {
            key: "sweep".into(),
            message: "no sweep values configured".into(),
        });
    }
    let (train, test) = load_data(cfg)?;
    let mut points = Vec::new();

    if !cfg.sweep.tau.is_empty() {
        let base = run_on(cfg, &train, &test)?;
        if let Some(dir) = out {
            write_artifacts(cfg, &base, &dir.join("base"))?;
        }
        for &tau in &cfg.sweep.tau {
            let metrics = final_metrics(&base.simulation, tau)?;
            if let Some(dir) = point_dir(out, "tau", tau) {
                fs::create_dir_all(&dir)?;
                let mut summary = base.summary.clone();
                summary.final_metrics = metrics.clone();
                summary.config.federation.tau = tau;
                write_json(&dir.join("summary.json"), &summary)?;
            }
            points.push(SweepPoint {
                axis: "tau".into(),
                value: tau,
                metrics,
            });
        }
    }

    let mut retrain = |axis: &str, value: f64, sub: ExperimentConfig| -> Result<()> {
        log::info!("sweep {axis} = {value}");
        let outcome = run_on(&sub, &train, &test)?;
        if let Some(dir) = point_dir(out, axis, value) {
            write_artifacts(&sub, &outcome, &dir)?;
        }
        points.push(SweepPoint {
            axis: axis.into(),
            value,
            metrics: outcome.summary.final_metrics,
        });
        Ok(())
    };
    for &size in &cfg.sweep.trigger_size {
        let mut sub = cfg.clone();
        sub.trigger.size = size;
        retrain("trigger_size", size as f64, sub)?;
    }
    for &alpha in &cfg.sweep.dirichlet_alpha {
        let mut sub = cfg.clone();
        sub.federation.dirichlet_alpha = Some(alpha);
        retrain("dirichlet_alpha", alpha, sub)?;
    }

    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        write_sweep_csv(&points, fs::File::create(dir.join("sweep.csv"))?)?;
    }
    Ok(points)
}

#[derive(Serialize)]
struct SweepRow<'a> {
    axis: &'a str,
    value: String,
    tau: String,
    acc: String,
    asr: String,
    auc: String,
    clean_rejected: usize,
    bd_rejected: usize,
}

pub fn write_sweep_csv(points: &[SweepPoint], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for p in points {
        out.serialize(SweepRow {
            axis: &p.axis,
            value: fixed(p.value),
            tau: fixed(p.metrics.tau),
            acc: fixed(p.metrics.acc),
            asr: fixed(p.metrics.asr),
            auc: fixed(p.metrics.auc),
            clean_rejected: p.metrics.clean_rejected,
            bd_rejected: p.metrics.bd_rejected,
        })
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}
