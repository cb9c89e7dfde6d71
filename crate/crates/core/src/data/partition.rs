use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use super::LabeledDataset;
use crate::error::{FlipError, Result};

/// Sample-to-client assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionPlan {
    pub assignment: Vec<usize>,
    pub dirichlet_alpha: f64,
    pub num_clients: usize,
}

impl PartitionPlan {
    pub fn shard_indices(&self) -> Vec<Vec<usize>> {
        let mut shards = vec![Vec::new(); self.num_clients];
        for (i, &c) in self.assignment.iter().enumerate() {
            shards[c].push(i);
        }
        shards
    }

    pub fn shards(&self, ds: &LabeledDataset) -> Vec<LabeledDataset> {
        self.shard_indices().iter().map(|idx| ds.select(idx)).collect()
    }

    pub fn shard_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_clients];
        for &c in &self.assignment {
            sizes[c] += 1;
        }
        sizes
    }
}

/// Per class, split the class's samples across clients with proportions drawn
/// from `Dirichlet(alpha)`. Empty shards are allowed.
pub fn dirichlet_partition(
    ds: &LabeledDataset,
    num_clients: usize,
    alpha: f64,
    rng: &mut impl Rng,
) -> Result<PartitionPlan> {
    if num_clients == 0 {
        return Err(FlipError::InvalidArgument("num_clients must be >= 1".into()));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(FlipError::InvalidArgument(format!(
            "dirichlet alpha must be positive, got {alpha}"
        )));
    }
    let gamma = Gamma::new(alpha, 1.0)
        .map_err(|e| FlipError::InvalidArgument(format!("dirichlet alpha: {e}")))?;
    let mut assignment = vec![0; ds.len()];
    for class in 0..ds.num_classes {
        let mut idx = ds.class_indices(class);
        if idx.is_empty() {
            continue;
        }
        idx.shuffle(rng);
        let mut props: Vec<f64> = (0..num_clients).map(|_| gamma.sample(rng)).collect();
        let total: f64 = props.iter().sum();
        if total > 0.0 {
            props.iter_mut().for_each(|p| *p /= total);
        } else {
            // every draw underflowed; hand the class to one client
            let pick = rng.random_range(0..num_clients);
            props.iter_mut().enumerate().for_each(|(i, p)| *p = f64::from(u8::from(i == pick)));
        }
        let n = idx.len();
        let mut start = 0;
        let mut cum = 0.0;
        for (client, p) in props.iter().enumerate() {
            cum += p;
            let end = if client + 1 == num_clients {
                n
            } else {
                ((cum * n as f64).round() as usize).clamp(start, n)
            };
            for &i in &idx[start..end] {
                assignment[i] = client;
            }
            start = end;
        }
    }
    Ok(PartitionPlan {
        assignment,
        dirichlet_alpha: alpha,
        num_clients,
    })
}

/// Shannon entropy (nats) of a shard's label distribution; 0 for empty shards.
pub fn label_entropy(shard: &LabeledDataset) -> f64 {
    let n = shard.len() as f64;
    if n == 0.0 {
        return 0.0;
    }
    shard
        .class_counts()
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}
