//! Loss-change bounds, the robustness certificate and rejection forecasts for
//! a bias-free linear softmax model, plus a harness that checks them against
//! one live two-client round.

use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

use crate::data::{make_poison_batch, stamp_into, Batch, LabeledDataset, TriggerSpec};
use crate::error::{shape_err, FlipError, Result};
use crate::federation::{AttackMode, DefenseKind, FederationConfig, Role, Simulation};
use crate::inversion::{invert_trigger, InversionConfig};
use crate::model::LinearModel;
use crate::numerics::{argmax, argmin, cross_entropy_from_logits, DenseMatrix, SeededRng};

/// Slack allowed on either side of a bound.
pub const BOUND_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundPair {
    pub lower: f64,
    pub upper: f64,
}

fn logits(x: &[f64], w: &DenseMatrix) -> Vec<f64> {
    let mut out = vec![0.0; w.cols()];
    w.accumulate_vecmat(x, &mut out);
    out
}

fn check_sample(op: &'static str, x: &[f64], label: usize, w: &DenseMatrix) -> Result<()> {
    if x.len() != w.rows() {
        return Err(shape_err(op, w.rows(), x.len()));
    }
    if label >= w.cols() {
        return Err(FlipError::InvalidArgument(format!("label {label} out of range for {} classes", w.cols())));
    }
    Ok(())
}

/// `min_t (xΔW)_t − (xΔW)_label` and `max_t (xΔW)_t − (xΔW)_label`.
pub fn loss_diff_bounds(x: &[f64], label: usize, delta_w: &DenseMatrix) -> Result<BoundPair> {
    check_sample("loss_diff_bounds", x, label, delta_w)?;
    let s = logits(x, delta_w);
    let lo = s.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(BoundPair {
        lower: lo - s[label],
        upper: hi - s[label],
    })
}

/// Exact `L(x; W') − L(x; W)` for the cross-entropy at `label`.
pub fn loss_change(x: &[f64], label: usize, w: &DenseMatrix, w_prime: &DenseMatrix) -> Result<f64> {
    check_sample("loss_change", x, label, w)?;
    if w.shape() != w_prime.shape() {
        return Err(shape_err("loss_change", format!("{:?}", w.shape()), format!("{:?}", w_prime.shape())));
    }
    Ok(cross_entropy_from_logits(&logits(x, w_prime), label) - cross_entropy_from_logits(&logits(x, w), label))
}

/// A bound pair together with the loss change it brackets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub lower: f64,
    pub diff: f64,
    pub upper: f64,
}

impl BoundCheck {
    pub fn holds(&self) -> bool {
        self.lower - BOUND_TOL <= self.diff && self.diff <= self.upper + BOUND_TOL
    }
}

/// Inputs and values of a failed bound check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundViolation {
    pub x: Vec<f64>,
    pub label: usize,
    pub check: BoundCheck,
}

/// Evaluate both bounds and the exact loss change. A bracket that fails by
/// more than [`BOUND_TOL`] comes back as `Err(violation)`.
pub fn verify_bounds(
    x: &[f64],
    label: usize,
    w: &DenseMatrix,
    w_prime: &DenseMatrix,
) -> Result<std::result::Result<BoundCheck, Box<BoundViolation>>> {
    let diff = loss_change(x, label, w, w_prime)?;
    let b = loss_diff_bounds(x, label, &w_prime.sub(w)?)?;
    let check = BoundCheck {
        lower: b.lower,
        diff,
        upper: b.upper,
    };
    if check.holds() {
        Ok(Ok(check))
    } else {
        Ok(Err(Box::new(BoundViolation {
            x: x.to_vec(),
            label,
            check,
        })))
    }
}

/// `−η Σ_j z_jᵀ (p(z_j) − Y_j)`: the weight change one summed-gradient step on
/// the augmented samples adds on top of the clean step.
pub fn one_step_weight_delta(z: &Batch, w: &DenseMatrix, eta: f64) -> Result<DenseMatrix> {
    if z.is_empty() {
        return Err(FlipError::EmptyBatch);
    }
    if z.dim != w.rows() {
        return Err(shape_err("one_step_weight_delta", w.rows(), z.dim));
    }
    let mut out = DenseMatrix::zeros(w.rows(), w.cols());
    for (x, y) in z.iter() {
        if y >= w.cols() {
            return Err(FlipError::InvalidArgument(format!("label {y} out of range")));
        }
        let mut r = logits(x, w);
        crate::numerics::softmax_in_place(&mut r);
        r[y] -= 1.0;
        out.rank_one_update(-eta, x, &r);
    }
    Ok(out)
}

/// Class whose logit change is smallest (backdoor side) or largest (clean
/// side) for each sample; ties go to the lowest index.
pub fn extreme_classes(samples: &Batch, delta_w: &DenseMatrix, largest: bool) -> Vec<usize> {
    samples
        .iter()
        .map(|(x, _)| {
            let s = logits(x, delta_w);
            if largest {
                argmax(&s)
            } else {
                argmin(&s)
            }
        })
        .collect()
}

/// `v = Σ_s G c_s` and `N = Σ_s z_s G c_s` with `c_s = q*_s − q_s`.
fn certificate_sums(samples: &Batch, qstar: &[usize], g: &DenseMatrix) -> (Vec<f64>, f64) {
    let mut v = vec![0.0; g.rows()];
    let mut n = 0.0;
    for ((z, q), &qs) in samples.iter().zip(qstar) {
        if qs == q {
            continue;
        }
        for (r, vr) in v.iter_mut().enumerate() {
            let row = g.row(r);
            let c = row[qs] - row[q];
            *vr += c;
            n += z[r] * c;
        }
    }
    (v, n)
}

/// `Σ_s x_s G (q*_s − q_s)` over clean samples.
pub fn max_loss_cap(clean: &Batch, qstar: &[usize], g: &DenseMatrix) -> Result<f64> {
    if clean.len() != qstar.len() {
        return Err(shape_err("max_loss_cap", clean.len(), qstar.len()));
    }
    if clean.dim != g.rows() {
        return Err(shape_err("max_loss_cap", g.rows(), clean.dim));
    }
    Ok(certificate_sums(clean, qstar, g).1)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustnessCertificate {
    pub alpha: f64,
    /// Sign of `v`, zero mapped to `+1`.
    pub b: Vec<f64>,
    pub max_loss_cap: f64,
    pub numerator: f64,
    pub v: Vec<f64>,
}

impl RobustnessCertificate {
    /// `Δmin_loss` at perturbation `eps`: `N − eps·v`.
    pub fn min_loss_at(&self, eps: &[f64]) -> f64 {
        self.numerator - crate::numerics::dot(eps, &self.v)
    }

    pub fn extremal(&self) -> Vec<f64> {
        self.b.iter().map(|s| s * self.alpha).collect()
    }
}

/// Inputs to the certificate. `backdoor` holds the samples stamped with the
/// recovered trigger (labels are the attack target), `hardening` the augmented
/// samples with their true labels.
pub struct CertificateInput<'a> {
    pub backdoor: &'a Batch,
    pub backdoor_qstar: &'a [usize],
    pub clean: &'a Batch,
    pub clean_qstar: &'a [usize],
    pub hardening: &'a Batch,
    pub weights: &'a DenseMatrix,
    pub eta: f64,
}

/// `α = N / ‖v‖₁` with `G = η Σ_j z_jᵀ (q_j − p(z_j))`.
pub fn robustness_alpha(input: &CertificateInput<'_>) -> Result<RobustnessCertificate> {
    if input.backdoor.len() != input.backdoor_qstar.len() {
        return Err(shape_err("robustness_alpha", input.backdoor.len(), input.backdoor_qstar.len()));
    }
    if input.backdoor.dim != input.weights.rows() {
        return Err(shape_err("robustness_alpha", input.weights.rows(), input.backdoor.dim));
    }
    let g = one_step_weight_delta(input.hardening, input.weights, input.eta)?;
    let (v, numerator) = certificate_sums(input.backdoor, input.backdoor_qstar, &g);
    let denom: f64 = v.iter().map(|x| x.abs()).sum();
    if denom == 0.0 {
        return Err(FlipError::DegenerateCertificate);
    }
    let alpha = numerator / denom;
    if alpha < 0.0 {
        return Err(FlipError::EmptyCertifiedBall { alpha });
    }
    let max_loss_cap = max_loss_cap(input.clean, input.clean_qstar, &g)?;
    Ok(RobustnessCertificate {
        alpha,
        b: v.iter().map(|&x| if x < 0.0 { -1.0 } else { 1.0 }).collect(),
        max_loss_cap,
        numerator,
        v,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectionForecast {
    /// Backdoor samples past the threshold with the defense.
    pub r_b_defense: usize,
    pub r_b: usize,
    pub r_c_defense: usize,
    pub r_c: usize,
    pub rejected_backdoor: i64,
    pub rejected_benign: i64,
    /// Set when a difference came out negative.
    pub defense_lowers_loss: bool,
}

/// Loss level matching confidence `tau`: `−ln τ`.
pub fn loss_threshold(tau: f64) -> Result<f64> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(FlipError::InvalidThreshold(tau));
    }
    Ok(-tau.ln())
}

/// Indicator sums over per-sample no-defense losses, shifted by the lower
/// bound on backdoor samples and the upper bound on clean ones.
pub fn rejection_forecast(
    clean_losses: &[f64],
    clean_bounds: &[BoundPair],
    bd_losses: &[f64],
    bd_bounds: &[BoundPair],
    tau: f64,
) -> Result<RejectionForecast> {
    let lt = loss_threshold(tau)?;
    if clean_losses.len() != clean_bounds.len() {
        return Err(shape_err("rejection_forecast", clean_losses.len(), clean_bounds.len()));
    }
    if bd_losses.len() != bd_bounds.len() {
        return Err(shape_err("rejection_forecast", bd_losses.len(), bd_bounds.len()));
    }
    let count = |it: &mut dyn Iterator<Item = f64>| it.filter(|&l| l > lt).count();
    let r_b = count(&mut bd_losses.iter().copied());
    let r_b_defense = count(&mut bd_losses.iter().zip(bd_bounds).map(|(l, b)| l + b.lower));
    let r_c = count(&mut clean_losses.iter().copied());
    let r_c_defense = count(&mut clean_losses.iter().zip(clean_bounds).map(|(l, b)| l + b.upper));
    let rejected_backdoor = r_b_defense as i64 - r_b as i64;
    let rejected_benign = r_c_defense as i64 - r_c as i64;
    Ok(RejectionForecast {
        r_b_defense,
        r_b,
        r_c_defense,
        r_c,
        rejected_backdoor,
        rejected_benign,
        defense_lowers_loss: rejected_backdoor < 0 || rejected_benign < 0,
    })
}

/// Settings for the bound-check round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TheoryConfig {
    /// Step size of the single summed-gradient step every client takes.
    pub check_lr: f64,
    /// Keep per-sample bound triples in the report.
    pub per_sample: bool,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self {
            check_lr: 0.001,
            per_sample: false,
        }
    }
}

impl TheoryConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.check_lr >= 0.0 && self.check_lr.is_finite()) {
            return Err(FlipError::Config {
                key: "theory.check_lr".into(),
                message: "must be a non-negative number".into(),
            });
        }
        Ok(())
    }
}

/// Rejection and acceptance counts of one branch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct BranchCounts {
    /// Loss above `−ln τ`.
    pub clean_loss_rejected: usize,
    pub backdoor_loss_rejected: usize,
    /// Confidence below `τ`.
    pub clean_conf_rejected: usize,
    pub backdoor_conf_rejected: usize,
    pub clean_accepted_correct: usize,
    pub backdoor_accepted_as_target: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundSummary {
    pub checked: usize,
    pub violations: usize,
    /// Largest amount by which a diff left its bracket (0 when none did).
    pub max_excess: f64,
    pub worst: Option<BoundViolation>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificateSummary {
    /// `ok`, `degenerate`, `empty_ball` or `no_hardening`.
    pub status: String,
    pub alpha: Option<f64>,
    pub numerator: Option<f64>,
    pub denominator: Option<f64>,
    pub max_loss_cap: Option<f64>,
    pub min_loss_at_extremal: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleBound {
    pub backdoor: bool,
    pub label: usize,
    pub loss: f64,
    pub check: BoundCheck,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoryReport {
    pub round: usize,
    pub eta: f64,
    pub benign_weight: f64,
    pub tau: f64,
    pub clean_total: usize,
    pub backdoor_total: usize,
    pub hardening_samples: usize,
    /// Largest entry of `|(W' − W) − ΔW_predicted|`.
    pub weight_delta_error: f64,
    pub clean_bounds: BoundSummary,
    pub backdoor_bounds: BoundSummary,
    pub forecast: RejectionForecast,
    pub no_defense: BranchCounts,
    pub defense: BranchCounts,
    pub certificate: CertificateSummary,
    pub samples: Option<Vec<SampleBound>>,
}

fn require(ok: bool, key: &str, message: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(FlipError::Config {
            key: format!("federation.{key}"),
            message: message.into(),
        })
    }
}

fn stamped(ds: &LabeledDataset, trig: &TriggerSpec) -> Batch {
    let mut out = Batch::with_capacity(ds.dim(), ds.len());
    let mut buf = vec![0.0; ds.dim()];
    for (x, _) in ds.iter() {
        stamp_into(x, trig.mask.as_slice(), trig.pattern.as_slice(), &mut buf);
        out.push(&buf, trig.target_label);
    }
    out
}

fn step(w: &LinearModel, batch: &Batch, eta: f64) -> Result<LinearModel> {
    if batch.is_empty() {
        return Ok(w.clone());
    }
    w.sgd_step(&w.gradient(batch)?, eta)
}

fn summarize(checks: &[(BoundCheck, &[f64], usize)]) -> BoundSummary {
    let mut s = BoundSummary {
        checked: checks.len(),
        violations: 0,
        max_excess: 0.0,
        worst: None,
    };
    for &(c, x, label) in checks {
        if c.holds() {
            continue;
        }
        s.violations += 1;
        let excess = (c.lower - c.diff).max(c.diff - c.upper);
        if excess > s.max_excess {
            s.max_excess = excess;
            s.worst = Some(BoundViolation { x: x.to_vec(), label, check: c });
        }
    }
    s
}

fn branch_counts(model: &LinearModel, batch: &Batch, target: Option<usize>, tau: f64, lt: f64) -> BranchCounts {
    let mut c = BranchCounts::default();
    for (x, y) in batch.iter() {
        let z = model.logits_of(x);
        let loss = cross_entropy_from_logits(&z, y);
        let pred = argmax(&z);
        let mut p = z;
        crate::numerics::softmax_in_place(&mut p);
        let accepted = p[pred] >= tau;
        match target {
            None => {
                c.clean_loss_rejected += usize::from(loss > lt);
                c.clean_conf_rejected += usize::from(!accepted);
                c.clean_accepted_correct += usize::from(accepted && pred == y);
            }
            Some(t) => {
                c.backdoor_loss_rejected += usize::from(loss > lt);
                c.backdoor_conf_rejected += usize::from(!accepted);
                c.backdoor_accepted_as_target += usize::from(accepted && pred == t);
            }
        }
    }
    c
}

/// Run `fed` to completion, then play one extra round twice from the same
/// global weights: once with the benign client's augmented samples and once
/// without. Every client takes a single summed-gradient step of size
/// `theory.check_lr`. The bounds, the certificate and the forecast are
/// evaluated on the test set against the two aggregated models.
pub fn run_theory_harness(
    fed: &FederationConfig,
    inv: &InversionConfig,
    theory: &TheoryConfig,
    trigger: &TriggerSpec,
    train: &LabeledDataset,
    test: &LabeledDataset,
    seed: u64,
) -> Result<TheoryReport> {
    check_harness_config(fed)?;
    theory.validate()?;
    let mut sim = Simulation::new(fed.clone(), inv.clone(), trigger.clone(), train, test, seed)?;
    sim.run()?;
    theory_check(&sim, theory)
}

fn check_harness_config(fed: &FederationConfig) -> Result<()> {
    require(fed.num_clients == 2, "num_clients", "the theory harness needs exactly 2 clients")?;
    require(fed.clients_per_round == 2, "clients_per_round", "the theory harness needs both clients every round")?;
    require(fed.num_adversaries == 1, "num_adversaries", "the theory harness needs exactly 1 adversary")?;
    require(!fed.model_bias, "model_bias", "the bounds hold for a bias-free model")?;
    require(fed.attack_mode != AttackMode::None, "attack_mode", "the theory harness needs an attacker")
}

/// The bound-check round on top of a simulation that has already run: one
/// summed-gradient step per client from the current global model, with and
/// without hardening samples on the benign side.
pub fn theory_check(sim: &Simulation, theory: &TheoryConfig) -> Result<TheoryReport> {
    let (fed, inv, trigger) = (&sim.cfg, &sim.inversion, &sim.trigger);
    check_harness_config(fed)?;
    theory.validate()?;
    let seed = sim.rng().seed();
    let round = sim.round;
    let global = sim.global.clone();
    let w = global.weights().clone();
    let benign = sim.clients.iter().position(|c| c.role == Role::Benign).expect("one benign client");
    let malicious = 1 - benign;
    let mut rng = SeededRng::new(seed).derive(&[u64::MAX - 7]);

    let shard_b = &sim.clients[benign].shard;
    let idx: Vec<usize> = (0..shard_b.len()).collect();
    let clean_idx: Vec<usize> = idx.choose_multiple(&mut rng, fed.batch_size.min(idx.len())).copied().collect();
    let clean_batch = Batch::from_dataset(&shard_b.select(&clean_idx));
    let target = trigger.target_label;
    let sources_b = shard_b.filter(|l| l != target);
    let mut hardening = Batch::with_capacity(w.rows(), inv.augmented_per_batch);
    let mut recovered = None;
    if fed.defense == DefenseKind::Flip && fed.adversarial_training && !sources_b.is_empty() {
        let trig = invert_trigger(&global, &sources_b, target, inv, &mut rng)?.trigger;
        let mut buf = vec![0.0; w.rows()];
        for _ in 0..inv.augmented_per_batch {
            let j = rand::Rng::random_range(&mut rng, 0..sources_b.len());
            stamp_into(sources_b.image(j), trig.mask.as_slice(), trig.pattern.as_slice(), &mut buf);
            hardening.push(&buf, sources_b.label(j));
        }
        recovered = Some(trig);
    }
    let shard_m = &sim.clients[malicious].shard;
    let poison = make_poison_batch(shard_m, trigger, fed.batch_size, fed.poison_count, &mut rng)?;

    let eta = theory.check_lr;
    let (n_b, n_m) = (shard_b.len(), shard_m.len());
    let local_b = step(&global, &clean_batch, eta)?;
    let mut with_z = clean_batch.clone();
    with_z.extend(&hardening);
    let local_b_def = step(&global, &with_z, eta)?;
    let local_m = step(&global, &poison, eta)?;
    let order = |b: LinearModel| -> Vec<(LinearModel, usize)> {
        let mut v = vec![(b, n_b), (local_m.clone(), n_m)];
        if benign > malicious {
            v.swap(0, 1);
        }
        v
    };
    let plain = crate::federation::aggregate_fedavg(&order(local_b))?;
    let defended = crate::federation::aggregate_fedavg(&order(local_b_def))?;
    let benign_weight = n_b as f64 / (n_b + n_m) as f64;
    let delta = defended.weights().sub(plain.weights())?;
    let predicted = if hardening.is_empty() {
        DenseMatrix::zeros(w.rows(), w.cols())
    } else {
        one_step_weight_delta(&hardening, &w, eta * benign_weight)?
    };
    let weight_delta_error = delta.max_abs_diff(&predicted);

    let clean = Batch::from_dataset(&sim.clean_test);
    let bd_sources = sim.bd_test.clone();
    let backdoor = stamped(&bd_sources, trigger);
    let eval = |batch: &Batch| -> Result<Vec<(BoundCheck, f64)>> {
        batch
            .iter()
            .map(|(x, y)| {
                let loss = cross_entropy_from_logits(&logits(x, plain.weights()), y);
                let diff = loss_change(x, y, plain.weights(), defended.weights())?;
                let b = loss_diff_bounds(x, y, &delta)?;
                Ok((
                    BoundCheck {
                        lower: b.lower,
                        diff,
                        upper: b.upper,
                    },
                    loss,
                ))
            })
            .collect()
    };
    let clean_checks = eval(&clean)?;
    let bd_checks = eval(&backdoor)?;
    let triples = |batch: &'_ Batch, checks: &[(BoundCheck, f64)]| -> Vec<(BoundCheck, Vec<f64>, usize)> {
        batch.iter().zip(checks).map(|((x, y), (c, _))| (*c, x.to_vec(), y)).collect()
    };
    let clean_triples = triples(&clean, &clean_checks);
    let bd_triples = triples(&backdoor, &bd_checks);
    let as_refs = |t: &[(BoundCheck, Vec<f64>, usize)]| -> BoundSummary {
        let v: Vec<(BoundCheck, &[f64], usize)> = t.iter().map(|(c, x, y)| (*c, x.as_slice(), *y)).collect();
        summarize(&v)
    };

    let tau = fed.tau;
    let bounds = |checks: &[(BoundCheck, f64)]| -> Vec<BoundPair> {
        checks.iter().map(|(c, _)| BoundPair { lower: c.lower, upper: c.upper }).collect()
    };
    let losses = |checks: &[(BoundCheck, f64)]| -> Vec<f64> { checks.iter().map(|(_, l)| *l).collect() };
    let forecast = rejection_forecast(
        &losses(&clean_checks),
        &bounds(&clean_checks),
        &losses(&bd_checks),
        &bounds(&bd_checks),
        tau.max(f64::MIN_POSITIVE),
    )?;
    let lt = loss_threshold(tau.max(f64::MIN_POSITIVE))?;
    let counts = |m: &LinearModel| {
        let mut c = branch_counts(m, &clean, None, tau, lt);
        let b = branch_counts(m, &backdoor, Some(target), tau, lt);
        c.backdoor_loss_rejected = b.backdoor_loss_rejected;
        c.backdoor_conf_rejected = b.backdoor_conf_rejected;
        c.backdoor_accepted_as_target = b.backdoor_accepted_as_target;
        c
    };

    let certificate = if let (false, Some(recovered)) = (hardening.is_empty(), recovered.as_ref()) {
        let z_s = stamped(&bd_sources, recovered);
        let bd_qstar = extreme_classes(&backdoor, &delta, false);
        let clean_qstar = extreme_classes(&clean, &delta, true);
        let input = CertificateInput {
            backdoor: &z_s,
            backdoor_qstar: &bd_qstar,
            clean: &clean,
            clean_qstar: &clean_qstar,
            hardening: &hardening,
            weights: &w,
            eta: eta * benign_weight,
        };
        let g = one_step_weight_delta(&hardening, &w, eta * benign_weight)?;
        let (v, numerator) = certificate_sums(&z_s, &bd_qstar, &g);
        let denominator: f64 = v.iter().map(|x| x.abs()).sum();
        let cap = max_loss_cap(&clean, &clean_qstar, &g)?;
        match robustness_alpha(&input) {
            Ok(cert) => CertificateSummary {
                status: "ok".into(),
                alpha: Some(cert.alpha),
                numerator: Some(numerator),
                denominator: Some(denominator),
                max_loss_cap: Some(cap),
                min_loss_at_extremal: Some(cert.min_loss_at(&cert.extremal())),
            },
            Err(e) => CertificateSummary {
                status: match e {
                    FlipError::DegenerateCertificate => "degenerate",
                    FlipError::EmptyCertifiedBall { .. } => "empty_ball",
                    _ => return Err(e),
                }
                .into(),
                alpha: (denominator > 0.0).then(|| numerator / denominator),
                numerator: Some(numerator),
                denominator: Some(denominator),
                max_loss_cap: Some(cap),
                min_loss_at_extremal: None,
            },
        }
    } else {
        CertificateSummary {
            status: "no_hardening".into(),
            alpha: None,
            numerator: None,
            denominator: None,
            max_loss_cap: None,
            min_loss_at_extremal: None,
        }
    };

    let samples = theory.per_sample.then(|| {
        clean_checks
            .iter()
            .zip(clean.labels.iter())
            .map(|((c, l), &y)| SampleBound { backdoor: false, label: y, loss: *l, check: *c })
            .chain(bd_checks.iter().map(|(c, l)| SampleBound { backdoor: true, label: target, loss: *l, check: *c }))
            .collect()
    });

    Ok(TheoryReport {
        round,
        eta,
        benign_weight,
        tau,
        clean_total: clean.len(),
        backdoor_total: backdoor.len(),
        hardening_samples: hardening.len(),
        weight_delta_error,
        clean_bounds: as_refs(&clean_triples),
        backdoor_bounds: as_refs(&bd_triples),
        forecast,
        no_defense: counts(&plain),
        defense: counts(&defended),
        certificate,
        samples,
    })
}
