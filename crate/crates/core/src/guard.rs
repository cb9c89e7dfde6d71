//! Thresholded global inference and evaluation metrics.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{stamp_into, LabeledDataset, TriggerSpec};
use crate::error::{FlipError, Result};
use crate::model::LinearModel;
use crate::numerics::argmax;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferenceVerdict {
    pub predicted: usize,
    /// Largest softmax probability.
    pub confidence: f64,
    pub accepted: bool,
}

fn check_tau(tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(FlipError::InvalidThreshold(tau));
    }
    Ok(())
}

fn verdict(model: &LinearModel, x: &[f64], tau: f64) -> InferenceVerdict {
    let p = model.probs_of(x);
    let predicted = argmax(&p);
    let confidence = p[predicted];
    InferenceVerdict {
        predicted,
        confidence,
        accepted: confidence >= tau,
    }
}

/// Predict and accept only when the top probability reaches `tau`.
pub fn predict_with_threshold(model: &LinearModel, x: &[f64], tau: f64) -> Result<InferenceVerdict> {
    check_tau(tau)?;
    if x.len() != model.dim() {
        return Err(crate::error::shape_err("predict_with_threshold", model.dim(), x.len()));
    }
    Ok(verdict(model, x, tau))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub acc: f64,
    pub asr: f64,
    pub clean_accepted: usize,
    pub clean_rejected: usize,
    pub bd_accepted: usize,
    pub bd_rejected: usize,
    pub auc: f64,
}

/// Test samples whose label differs from the trigger target (unstamped).
pub fn backdoor_sources(test: &LabeledDataset, target: usize) -> LabeledDataset {
    test.filter(|l| l != target)
}

/// Verdicts for every sample of `ds`, stamped with `trig` when given.
pub fn verdicts(
    model: &LinearModel,
    ds: &LabeledDataset,
    trig: Option<&TriggerSpec>,
    tau: f64,
) -> Result<Vec<InferenceVerdict>> {
    check_tau(tau)?;
    if ds.dim() != model.dim() {
        return Err(crate::error::shape_err("verdicts", model.dim(), ds.dim()));
    }
    Ok((0..ds.len())
        .into_par_iter()
        .map_init(
            || vec![0.0; ds.dim()],
            |buf, i| match trig {
                Some(t) => {
                    stamp_into(ds.image(i), t.mask.as_slice(), t.pattern.as_slice(), buf);
                    verdict(model, buf, tau)
                }
                None => verdict(model, ds.image(i), tau),
            },
        )
        .collect())
}

/// ACC over `clean_test`, ASR over `bd_test` stamped with `trig`, and the
/// AUC of confidence-based rejection. Rejected samples count as neither
/// correct nor attacked.
pub fn compute_metrics(
    model: &LinearModel,
    clean_test: &LabeledDataset,
    bd_test: &LabeledDataset,
    trig: &TriggerSpec,
    tau: f64,
) -> Result<MetricSet> {
    if clean_test.is_empty() || bd_test.is_empty() {
        return Err(FlipError::EmptyDataset);
    }
    if bd_test.labels().contains(&trig.target_label) {
        return Err(FlipError::Precondition(format!(
            "backdoor test set contains samples of the target class {}",
            trig.target_label
        )));
    }
    let clean = verdicts(model, clean_test, None, tau)?;
    let bd = verdicts(model, bd_test, Some(trig), tau)?;
    let correct = clean
        .iter()
        .zip(clean_test.labels())
        .filter(|(v, &y)| v.accepted && v.predicted == y)
        .count();
    let attacked = bd
        .iter()
        .filter(|v| v.accepted && v.predicted == trig.target_label)
        .count();
    let clean_accepted = clean.iter().filter(|v| v.accepted).count();
    let bd_accepted = bd.iter().filter(|v| v.accepted).count();
    let cc: Vec<f64> = clean.iter().map(|v| v.confidence).collect();
    let bc: Vec<f64> = bd.iter().map(|v| v.confidence).collect();
    Ok(MetricSet {
        acc: correct as f64 / clean.len() as f64,
        asr: attacked as f64 / bd.len() as f64,
        clean_accepted,
        clean_rejected: clean.len() - clean_accepted,
        bd_accepted,
        bd_rejected: bd.len() - bd_accepted,
        auc: compute_auc(&cc, &bc)?,
    })
}

/// Average ranks (1-based) with ties sharing the mean rank.
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Area under the ROC of "reject when confidence < t", backdoor samples as
/// positives. Mann-Whitney form; ties count one half.
pub fn compute_auc(confidences_clean: &[f64], confidences_bd: &[f64]) -> Result<f64> {
    if confidences_clean.is_empty() || confidences_bd.is_empty() {
        return Err(FlipError::EmptyDataset);
    }
    let all: Vec<f64> = confidences_clean.iter().chain(confidences_bd).copied().collect();
    let r = ranks(&all);
    let nc = confidences_clean.len() as f64;
    let nb = confidences_bd.len() as f64;
    let rank_sum_clean: f64 = r[..confidences_clean.len()].iter().sum();
    Ok((rank_sum_clean - nc * (nc + 1.0) / 2.0) / (nc * nb))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
}

/// One point per distinct confidence plus a final reject-everything point.
pub fn roc_points(confidences_clean: &[f64], confidences_bd: &[f64]) -> Result<Vec<RocPoint>> {
    if confidences_clean.is_empty() || confidences_bd.is_empty() {
        return Err(FlipError::EmptyDataset);
    }
    let mut thresholds: Vec<f64> = confidences_clean.iter().chain(confidences_bd).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    thresholds.push(f64::INFINITY);
    let frac = |xs: &[f64], t: f64| xs.iter().filter(|&&c| c < t).count() as f64 / xs.len() as f64;
    Ok(thresholds
        .into_iter()
        .map(|t| RocPoint {
            threshold: t,
            tpr: frac(confidences_bd, t),
            fpr: frac(confidences_clean, t),
        })
        .collect())
}

pub fn write_roc_csv(points: &[RocPoint], w: &mut impl Write) -> Result<()> {
    writeln!(w, "threshold,tpr,fpr")?;
    for p in points {
        let t = if p.threshold.is_finite() {
            format!("{:.6}", p.threshold)
        } else {
            "inf".to_string()
        };
        writeln!(w, "{t},{:.6},{:.6}", p.tpr, p.fpr)?;
    }
    Ok(())
}
