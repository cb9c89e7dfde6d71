//! Trigger inversion, the per-client class-distance cache, and generation of
//! hardening samples (stamped inputs that keep their true labels).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{stamp_into, Batch, LabeledDataset, TriggerSpec};
use crate::error::{FlipError, Result};
use crate::model::{write_container, LinearModel};
use crate::numerics::{cross_entropy_from_logits, dot, softmax_in_place, DenseMatrix, DenseVector};

/// How a cached distance was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceKind {
    /// Variance of the per-step loss of the source class during a universal
    /// inversion (warm-up approximation).
    LossVariance,
    /// L1 norm of a pair-specific inverted mask.
    MaskL1,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceEntry {
    pub value: f64,
    pub round: usize,
    pub kind: DistanceKind,
}

/// Square source × target table. Entries start absent; the diagonal is never
/// written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    num_classes: usize,
    entries: Vec<Option<DistanceEntry>>,
}

impl DistanceMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            entries: vec![None; num_classes * num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, source: usize, target: usize) -> Option<&DistanceEntry> {
        self.entries[source * self.num_classes + target].as_ref()
    }

    pub fn set(
        &mut self,
        source: usize,
        target: usize,
        value: f64,
        round: usize,
        kind: DistanceKind,
    ) -> Result<()> {
        if source >= self.num_classes || target >= self.num_classes || source == target {
            return Err(FlipError::InvalidArgument(format!(
                "distance entry ({source}, {target}) is not an off-diagonal cell of a {n}x{n} matrix",
                n = self.num_classes
            )));
        }
        if !(value >= 0.0 && value.is_finite()) {
            return Err(FlipError::InvalidArgument(format!(
                "distance must be finite and non-negative, got {value}"
            )));
        }
        self.entries[source * self.num_classes + target] = Some(DistanceEntry { value, round, kind });
        Ok(())
    }

    pub fn num_set(&self) -> usize {
        self.entries.iter().filter(|e| e.is_some()).count()
    }

    /// Set entries as `(source, target, entry)` in row-major order.
    pub fn iter_set(&self) -> impl Iterator<Item = (usize, usize, &DistanceEntry)> + '_ {
        let n = self.num_classes;
        self.entries
            .iter()
            .enumerate()
            .filter_map(move |(i, e)| e.as_ref().map(|e| (i / n, i % n, e)))
    }

    /// Oldest round stamp among set entries.
    pub fn oldest_round(&self) -> Option<usize> {
        self.iter_set().map(|(_, _, e)| e.round).min()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InversionConfig {
    pub max_steps: usize,
    pub step_size: f64,
    /// Weight of the mask L1 penalty.
    pub mask_weight: f64,
    /// Starting mask value when no explicit init trigger is given.
    pub init_mask: f64,
    /// Samples drawn per source class for one inversion.
    pub samples_per_class: usize,
    /// A class needs strictly more samples than this to take part in pair
    /// hardening.
    pub min_class_samples: usize,
    /// Pairs hardened per selection.
    pub top_k: usize,
    /// Cap on stamped samples produced per hardening direction.
    pub hardening_samples: usize,
    /// Stamped samples appended to each training batch.
    pub augmented_per_batch: usize,
    /// Re-run the warm-up when the oldest cached entry is this many rounds old.
    /// Zero disables refreshing.
    pub refresh_interval: usize,
    /// Also harden against the universal triggers found during warm-up.
    pub harden_universal: bool,
    #[serde(skip)]
    pub init: Option<TriggerSpec>,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            max_steps: 100,
            step_size: 0.1,
            mask_weight: 1e-2,
            init_mask: 0.05,
            samples_per_class: 32,
            min_class_samples: 5,
            top_k: 3,
            hardening_samples: 256,
            augmented_per_batch: 64,
            refresh_interval: 0,
            harden_universal: true,
            init: None,
        }
    }
}

impl InversionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: &str| FlipError::Config {
            key: format!("inversion.{key}"),
            message: message.into(),
        };
        if self.max_steps == 0 {
            return Err(bad("max_steps", "must be at least 1"));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(bad("step_size", "must be positive"));
        }
        if !(self.mask_weight >= 0.0 && self.mask_weight.is_finite()) {
            return Err(bad("mask_weight", "must be non-negative"));
        }
        if !(self.init_mask > 0.0 && self.init_mask < 1.0) {
            return Err(bad("init_mask", "must lie strictly between 0 and 1"));
        }
        if self.samples_per_class == 0 {
            return Err(bad("samples_per_class", "must be at least 1"));
        }
        if self.top_k == 0 {
            return Err(bad("top_k", "must be at least 1"));
        }
        Ok(())
    }
}

/// Result of one inversion run.
#[derive(Debug, Clone)]
pub struct Inversion {
    pub trigger: TriggerSpec,
    /// Objective value at every step.
    pub loss_trace: Vec<f64>,
    /// Mean cross-entropy of each source class at every step.
    pub class_traces: BTreeMap<usize, Vec<f64>>,
}

fn sigmoid(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-6, 1.0 - 1e-6);
    (p / (1.0 - p)).ln()
}

struct Direction {
    mask_logit: Vec<f64>,
    pattern_logit: Vec<f64>,
    target: usize,
}

impl Direction {
    fn init(dim: usize, target: usize, cfg: &InversionConfig, rng: &mut impl Rng) -> Self {
        match &cfg.init {
            Some(t) if t.dim() == dim => Self {
                mask_logit: t.mask.as_slice().iter().map(|&m| logit(m)).collect(),
                pattern_logit: t.pattern.as_slice().iter().map(|&p| logit(p)).collect(),
                target,
            },
            _ => {
                let base = logit(cfg.init_mask);
                Self {
                    mask_logit: (0..dim).map(|_| base + rng.random_range(-0.5..0.5)).collect(),
                    pattern_logit: (0..dim).map(|_| logit(rng.random_range(0.05..0.95))).collect(),
                    target,
                }
            }
        }
    }

    fn trigger(&self) -> TriggerSpec {
        TriggerSpec {
            mask: DenseVector::from_vec_unchecked(self.mask_logit.iter().map(|&u| sigmoid(u)).collect()),
            pattern: DenseVector::from_vec_unchecked(
                self.pattern_logit.iter().map(|&v| sigmoid(v)).collect(),
            ),
            target_label: self.target,
        }
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    fn new(d: usize) -> Self {
        Self {
            m: vec![0.0; d],
            v: vec![0.0; d],
        }
    }

    fn step(&mut self, i: usize, g: f64, bc1: f64, bc2: f64, lr: f64) -> f64 {
        self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
        self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
        lr * (self.m[i] / bc1) / ((self.v[i] / bc2).sqrt() + ADAM_EPS)
    }
}

struct AdamPair {
    mask: Adam,
    pattern: Adam,
}

impl AdamPair {
    fn new(d: usize) -> Self {
        Self {
            mask: Adam::new(d),
            pattern: Adam::new(d),
        }
    }
}

/// Minimizes `mean CE(stamped, target) + α Σ ‖m‖₁` with Adam over the logits
/// of mask and pattern. Sample `j` is stamped with the trigger of direction
/// `route[j]`.
fn optimize(
    model: &LinearModel,
    xs: &Batch,
    route: &[usize],
    dirs: &mut [Direction],
    cfg: &InversionConfig,
) -> (Vec<f64>, BTreeMap<usize, Vec<f64>>) {
    let d = xs.dim;
    let n = xs.len() as f64;
    let w = model.weights();
    let mut class_n: BTreeMap<usize, usize> = BTreeMap::new();
    for &y in &xs.labels {
        *class_n.entry(y).or_default() += 1;
    }
    let mut trace = Vec::with_capacity(cfg.max_steps);
    let mut class_traces: BTreeMap<usize, Vec<f64>> =
        class_n.keys().map(|&c| (c, Vec::with_capacity(cfg.max_steps))).collect();

    let mut stamped = vec![0.0; d];
    let mut gx = vec![0.0; d];
    let mut state: Vec<AdamPair> = dirs.iter().map(|_| AdamPair::new(d)).collect();
    let mut step = 0;
    for _ in 0..cfg.max_steps {
        let trig: Vec<(Vec<f64>, Vec<f64>)> = dirs
            .iter()
            .map(|dir| {
                (
                    dir.mask_logit.iter().map(|&u| sigmoid(u)).collect(),
                    dir.pattern_logit.iter().map(|&v| sigmoid(v)).collect(),
                )
            })
            .collect();
        let mut gm = vec![vec![0.0; d]; dirs.len()];
        let mut gp = vec![vec![0.0; d]; dirs.len()];
        let mut ce_total = 0.0;
        let mut class_ce: BTreeMap<usize, f64> = class_n.keys().map(|&c| (c, 0.0)).collect();

        for ((x, y), &g) in xs.iter().zip(route) {
            let (m, p) = &trig[g];
            stamp_into(x, m, p, &mut stamped);
            let mut r = model.logits_of(&stamped);
            let ce = cross_entropy_from_logits(&r, dirs[g].target);
            ce_total += ce;
            *class_ce.get_mut(&y).unwrap() += ce;
            softmax_in_place(&mut r);
            r[dirs[g].target] -= 1.0;
            for (i, v) in gx.iter_mut().enumerate() {
                *v = dot(w.row(i), &r);
            }
            for i in 0..d {
                gm[g][i] += (p[i] - x[i]) * gx[i];
                gp[g][i] += m[i] * gx[i];
            }
        }

        let l1: f64 = trig.iter().map(|(m, _)| m.iter().sum::<f64>()).sum();
        trace.push(ce_total / n + cfg.mask_weight * l1);
        for (c, total) in class_ce {
            class_traces.get_mut(&c).unwrap().push(total / class_n[&c] as f64);
        }

        step += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(step);
        let bc2 = 1.0 - ADAM_BETA2.powi(step);
        for (g, dir) in dirs.iter_mut().enumerate() {
            let (m, p) = &trig[g];
            let st = &mut state[g];
            for i in 0..d {
                let du = (gm[g][i] / n + cfg.mask_weight) * m[i] * (1.0 - m[i]);
                let dv = gp[g][i] / n * p[i] * (1.0 - p[i]);
                dir.mask_logit[i] -= st.mask.step(i, du, bc1, bc2, cfg.step_size);
                dir.pattern_logit[i] -= st.pattern.step(i, dv, bc1, bc2, cfg.step_size);
            }
        }
    }
    (trace, class_traces)
}

/// Up to `cfg.samples_per_class` randomly chosen samples of every class in
/// `sources`.
fn draw_inversion_batch(
    sources: &LabeledDataset,
    classes: &[usize],
    per_class: usize,
    rng: &mut impl Rng,
) -> Batch {
    let mut batch = Batch::with_capacity(sources.dim(), classes.len() * per_class);
    for &c in classes {
        let mut idx = sources.class_indices(c);
        idx.shuffle(rng);
        for &i in idx.iter().take(per_class) {
            batch.push(sources.image(i), c);
        }
    }
    batch
}

fn present_classes(ds: &LabeledDataset) -> Vec<usize> {
    ds.class_counts()
        .iter()
        .enumerate()
        .filter(|(_, &n)| n > 0)
        .map(|(c, _)| c)
        .collect()
}

/// Universal inversion: one trigger that pushes every sample in `sources`
/// toward `target`.
pub fn invert_trigger(
    model: &LinearModel,
    sources: &LabeledDataset,
    target: usize,
    cfg: &InversionConfig,
    rng: &mut impl Rng,
) -> Result<Inversion> {
    cfg.validate()?;
    if sources.is_empty() {
        return Err(FlipError::EmptySourceSet);
    }
    if target >= model.num_classes() {
        return Err(FlipError::InvalidArgument(format!("target {target} is not a class")));
    }
    if sources.labels().contains(&target) {
        return Err(FlipError::InvalidArgument(format!(
            "source set contains samples of the target class {target}"
        )));
    }
    let classes = present_classes(sources);
    let batch = draw_inversion_batch(sources, &classes, cfg.samples_per_class, rng);
    let mut dirs = [Direction::init(sources.dim(), target, cfg, rng)];
    let route = vec![0; batch.len()];
    let (loss_trace, class_traces) = optimize(model, &batch, &route, &mut dirs, cfg);
    Ok(Inversion {
        trigger: dirs[0].trigger(),
        loss_trace,
        class_traces,
    })
}

/// L1 norm of the mask.
pub fn class_distance(trig: &TriggerSpec) -> f64 {
    trig.mask.l1_norm()
}

fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / xs.len() as f64
}

/// Output of the warm-up phase.
#[derive(Debug, Clone)]
pub struct Warmup {
    pub distances: DistanceMatrix,
    /// Number of universal inversions run.
    pub inversions: usize,
    pub triggers: Vec<TriggerSpec>,
}

/// One universal inversion per class present in `shard`, using every other
/// present class as sources. Entry `[s][t]` becomes the variance of class
/// `s`'s loss over the optimization.
pub fn warmup_distances(
    model: &LinearModel,
    shard: &LabeledDataset,
    cfg: &InversionConfig,
    round: usize,
    rng: &mut impl Rng,
) -> Result<Warmup> {
    if shard.is_empty() {
        return Err(FlipError::EmptyShard);
    }
    let mut distances = DistanceMatrix::new(shard.num_classes);
    let mut triggers = Vec::new();
    let present = present_classes(shard);
    for &t in &present {
        let sources = shard.filter(|l| l != t);
        if sources.is_empty() {
            continue;
        }
        let inv = invert_trigger(model, &sources, t, cfg, rng)?;
        for (&s, trace) in &inv.class_traces {
            distances.set(s, t, variance(trace), round, DistanceKind::LossVariance)?;
        }
        triggers.push(inv.trigger);
    }
    Ok(Warmup {
        distances,
        inversions: triggers.len(),
        triggers,
    })
}

/// The `k` largest set entries as `(source, target)`, ties broken by
/// `(source, target)` order.
pub fn select_pairs(dm: &DistanceMatrix, k: usize) -> Vec<(usize, usize)> {
    let mut set: Vec<(usize, usize, f64)> = dm.iter_set().map(|(s, t, e)| (s, t, e.value)).collect();
    set.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
    set.into_iter().take(k).map(|(s, t, _)| (s, t)).collect()
}

/// Stamped samples with their original labels, plus the triggers that made
/// them.
#[derive(Debug, Clone)]
pub struct Hardening {
    pub samples: Batch,
    pub triggers: Vec<TriggerSpec>,
}

fn require_samples(shard: &LabeledDataset, class: usize, cfg: &InversionConfig) -> Result<Vec<usize>> {
    let idx = shard.class_indices(class);
    if idx.len() <= cfg.min_class_samples {
        return Err(FlipError::InsufficientData {
            class,
            available: idx.len(),
            required: cfg.min_class_samples,
        });
    }
    Ok(idx)
}

fn stamp_pool(
    shard: &LabeledDataset,
    idx: &mut [usize],
    trig: &TriggerSpec,
    cap: usize,
    out: &mut Batch,
    rng: &mut impl Rng,
) {
    idx.shuffle(rng);
    let mut buf = vec![0.0; shard.dim()];
    for &i in idx.iter().take(cap) {
        stamp_into(shard.image(i), trig.mask.as_slice(), trig.pattern.as_slice(), &mut buf);
        out.push(&buf, shard.label(i));
    }
}

/// Jointly invert `a → b` and `b → a`, routing each sample through the
/// trigger of its own direction. Both distance entries are refreshed.
pub fn symmetric_invert(
    model: &LinearModel,
    shard: &LabeledDataset,
    (a, b): (usize, usize),
    cfg: &InversionConfig,
    distances: &mut DistanceMatrix,
    round: usize,
    rng: &mut impl Rng,
) -> Result<Hardening> {
    cfg.validate()?;
    let mut idx_a = require_samples(shard, a, cfg)?;
    let mut idx_b = require_samples(shard, b, cfg)?;
    let batch = draw_inversion_batch(shard, &[a, b], cfg.samples_per_class, rng);
    let route: Vec<usize> = batch.labels.iter().map(|&l| usize::from(l != a)).collect();
    let mut dirs = [
        Direction::init(shard.dim(), b, cfg, rng),
        Direction::init(shard.dim(), a, cfg, rng),
    ];
    optimize(model, &batch, &route, &mut dirs, cfg);
    let t_ab = dirs[0].trigger();
    let t_ba = dirs[1].trigger();
    distances.set(a, b, class_distance(&t_ab), round, DistanceKind::MaskL1)?;
    distances.set(b, a, class_distance(&t_ba), round, DistanceKind::MaskL1)?;

    let mut samples = Batch::with_capacity(shard.dim(), 2 * cfg.hardening_samples);
    stamp_pool(shard, &mut idx_a, &t_ab, cfg.hardening_samples, &mut samples, rng);
    stamp_pool(shard, &mut idx_b, &t_ba, cfg.hardening_samples, &mut samples, rng);
    Ok(Hardening {
        samples,
        triggers: vec![t_ab, t_ba],
    })
}

/// Invert `a → b` only and refresh that single distance entry.
pub fn asymmetric_invert(
    model: &LinearModel,
    shard: &LabeledDataset,
    (a, b): (usize, usize),
    cfg: &InversionConfig,
    distances: &mut DistanceMatrix,
    round: usize,
    rng: &mut impl Rng,
) -> Result<Hardening> {
    cfg.validate()?;
    let mut idx_a = require_samples(shard, a, cfg)?;
    let batch = draw_inversion_batch(shard, &[a], cfg.samples_per_class, rng);
    let mut dirs = [Direction::init(shard.dim(), b, cfg, rng)];
    let route = vec![0; batch.len()];
    optimize(model, &batch, &route, &mut dirs, cfg);
    let t_ab = dirs[0].trigger();
    distances.set(a, b, class_distance(&t_ab), round, DistanceKind::MaskL1)?;

    let mut samples = Batch::with_capacity(shard.dim(), cfg.hardening_samples);
    stamp_pool(shard, &mut idx_a, &t_ab, cfg.hardening_samples, &mut samples, rng);
    Ok(Hardening {
        samples,
        triggers: vec![t_ab],
    })
}

/// Stamp samples of every non-target class with each universal trigger,
/// keeping the original labels. The smallest trigger gets `cap` samples and
/// the others a share inversely proportional to their mask L1.
pub fn universal_hardening(
    shard: &LabeledDataset,
    triggers: &[TriggerSpec],
    cap: usize,
    rng: &mut impl Rng,
) -> Batch {
    let l1: Vec<f64> = triggers.iter().map(class_distance).collect();
    let smallest = l1.iter().copied().fold(f64::INFINITY, f64::min);
    let mut samples = Batch::with_capacity(shard.dim(), cap * triggers.len());
    for (trig, &d) in triggers.iter().zip(&l1) {
        let share = if d > 0.0 { smallest / d } else { 1.0 };
        let n = ((cap as f64) * share).round() as usize;
        let mut idx: Vec<usize> = (0..shard.len()).filter(|&i| shard.label(i) != trig.target_label).collect();
        stamp_pool(shard, &mut idx, trig, n, &mut samples, rng);
    }
    samples
}

/// Write `mask.ckpt` and `pattern.ckpt` (1×d checkpoint containers) into
/// `dir`, plus `mask.pgm` / `pattern.pgm` when the image geometry is given.
pub fn export_trigger(
    trig: &TriggerSpec,
    dir: impl AsRef<Path>,
    geometry: Option<(usize, usize)>,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    for (name, v) in [("mask", &trig.mask), ("pattern", &trig.pattern)] {
        let m = DenseMatrix::new(1, v.len(), v.as_slice().to_vec())?;
        let mut f = fs::File::create(dir.join(format!("{name}.ckpt")))?;
        write_container(&mut f, &m, None)?;
        if let Some((w, h)) = geometry {
            if w * h == v.len() {
                let mut pgm = format!("P5\n{w} {h}\n255\n").into_bytes();
                pgm.extend(v.as_slice().iter().map(|&x| (x * 255.0).round().clamp(0.0, 255.0) as u8));
                fs::write(dir.join(format!("{name}.pgm")), pgm)?;
            }
        }
    }
    fs::write(dir.join("target.txt"), format!("{}\n", trig.target_label))?;
    Ok(())
}

/// Fraction of `ds` (excluding the trigger's target class) that `model`
/// classifies as the target after stamping.
pub fn flip_rate(model: &LinearModel, ds: &LabeledDataset, trig: &TriggerSpec) -> Result<f64> {
    let mut buf = vec![0.0; ds.dim()];
    let mut total = 0usize;
    let mut flipped = 0usize;
    for (x, y) in ds.iter() {
        if y == trig.target_label {
            continue;
        }
        stamp_into(x, trig.mask.as_slice(), trig.pattern.as_slice(), &mut buf);
        total += 1;
        if model.predict(&buf) == trig.target_label {
            flipped += 1;
        }
    }
    if total == 0 {
        return Err(FlipError::EmptySourceSet);
    }
    Ok(flipped as f64 / total as f64)
}
