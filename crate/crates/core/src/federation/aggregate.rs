//! Server-side aggregation rules. All rules see client models as flat
//! parameter vectors (see [`LinearModel::params`]).

use serde::{Deserialize, Serialize};

use crate::error::{FlipError, Result};
use crate::model::LinearModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule", deny_unknown_fields)]
pub enum AggregatorKind {
    Fedavg,
    Krum { f: usize },
    Multikrum { f: usize, m: usize },
    Median,
    TrimmedMean { beta: usize },
}

impl Default for AggregatorKind {
    fn default() -> Self {
        Self::Fedavg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoordinateRule {
    Median,
    TrimmedMean,
}

/// Aggregated model plus, for Krum, the index of the chosen update.
#[derive(Debug, Clone)]
pub struct Aggregate {
    pub model: LinearModel,
    pub pick: Option<usize>,
}

fn check_layout(updates: &[(LinearModel, usize)]) -> Result<()> {
    let first = &updates.first().ok_or(FlipError::InvalidArgument("no updates to aggregate".into()))?.0;
    for (m, _) in updates {
        if m.weights().shape() != first.weights().shape() || m.has_bias() != first.has_bias() {
            return Err(FlipError::InvalidArgument("client models disagree on shape".into()));
        }
    }
    Ok(())
}

/// Weighted mean with `g_k = n_k / Σ n`.
pub fn aggregate_fedavg(updates: &[(LinearModel, usize)]) -> Result<LinearModel> {
    check_layout(updates)?;
    let total: usize = updates.iter().map(|(_, n)| n).sum();
    if total == 0 {
        return Err(FlipError::InvalidArgument("aggregate sample count is zero".into()));
    }
    let mut acc = vec![0.0; updates[0].0.num_params()];
    for (m, n) in updates {
        let g = *n as f64 / total as f64;
        for (a, p) in acc.iter_mut().zip(m.params()) {
            *a += g * p;
        }
    }
    updates[0].0.with_params(acc)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Krum scores: sum of squared distances to the `n - f - 2` nearest others.
pub fn krum_scores(params: &[Vec<f64>], f: usize) -> Result<Vec<f64>> {
    let n = params.len();
    if n < f + 3 {
        return Err(FlipError::Precondition(format!(
            "krum needs n >= f + 3 (n = {n}, f = {f})"
        )));
    }
    let mut dist = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = sq_dist(&params[i], &params[j]);
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }
    Ok((0..n)
        .map(|i| {
            let mut others: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| dist[i][j]).collect();
            others.sort_by(f64::total_cmp);
            others[..n - f - 2].iter().sum()
        })
        .collect())
}

/// Krum (`multi_m == 1`) or Multi-Krum: average of the `multi_m` updates with
/// the lowest scores. Ties go to the lowest index.
pub fn aggregate_krum(updates: &[(LinearModel, usize)], f: usize, multi_m: usize) -> Result<Aggregate> {
    check_layout(updates)?;
    if multi_m == 0 || multi_m > updates.len() {
        return Err(FlipError::Precondition(format!(
            "multi-krum m = {multi_m} must lie in [1, {}]",
            updates.len()
        )));
    }
    let params: Vec<Vec<f64>> = updates.iter().map(|(m, _)| m.params()).collect();
    let scores = krum_scores(&params, f)?;
    let mut order: Vec<usize> = (0..params.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let chosen = &order[..multi_m];
    let mut acc = vec![0.0; params[0].len()];
    for &i in chosen {
        for (a, p) in acc.iter_mut().zip(&params[i]) {
            *a += p / multi_m as f64;
        }
    }
    Ok(Aggregate {
        model: updates[0].0.with_params(acc)?,
        pick: Some(order[0]),
    })
}

/// Coordinate-wise median (even counts average the middle pair) or mean after
/// dropping the `beta` largest and smallest values.
pub fn aggregate_coordinatewise(
    updates: &[(LinearModel, usize)],
    rule: CoordinateRule,
    beta: usize,
) -> Result<LinearModel> {
    check_layout(updates)?;
    let n = updates.len();
    if rule == CoordinateRule::TrimmedMean && n <= 2 * beta {
        return Err(FlipError::Precondition(format!(
            "trimmed mean needs n > 2*beta (n = {n}, beta = {beta})"
        )));
    }
    let params: Vec<Vec<f64>> = updates.iter().map(|(m, _)| m.params()).collect();
    let mut column = vec![0.0; n];
    let out = (0..params[0].len())
        .map(|k| {
            for (c, p) in column.iter_mut().zip(&params) {
                *c = p[k];
            }
            column.sort_by(f64::total_cmp);
            match rule {
                CoordinateRule::Median if n % 2 == 1 => column[n / 2],
                CoordinateRule::Median => (column[n / 2 - 1] + column[n / 2]) / 2.0,
                CoordinateRule::TrimmedMean => {
                    let kept = &column[beta..n - beta];
                    kept.iter().sum::<f64>() / kept.len() as f64
                }
            }
        })
        .collect();
    updates[0].0.with_params(out)
}

pub fn aggregate(updates: &[(LinearModel, usize)], kind: AggregatorKind) -> Result<Aggregate> {
    match kind {
        AggregatorKind::Fedavg => Ok(Aggregate {
            model: aggregate_fedavg(updates)?,
            pick: None,
        }),
        AggregatorKind::Krum { f } => aggregate_krum(updates, f, 1),
        AggregatorKind::Multikrum { f, m } => aggregate_krum(updates, f, m),
        AggregatorKind::Median => Ok(Aggregate {
            model: aggregate_coordinatewise(updates, CoordinateRule::Median, 0)?,
            pick: None,
        }),
        AggregatorKind::TrimmedMean { beta } => Ok(Aggregate {
            model: aggregate_coordinatewise(updates, CoordinateRule::TrimmedMean, beta)?,
            pick: None,
        }),
    }
}
