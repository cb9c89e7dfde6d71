//! Server-side rules against one outlying update.

use flipfl::federation::{aggregate, AggregatorKind};
use flipfl::model::LinearModel;

fn main() -> flipfl::Result<()> {
    let honest = [[1.0, 0.9], [1.1, 1.0], [0.9, 1.1], [1.0, 1.0], [1.05, 0.95]];
    let mut updates: Vec<(LinearModel, usize)> = honest
        .iter()
        .map(|p| Ok((LinearModel::zeros(2, 1, false).with_params(p.to_vec())?, 100)))
        .collect::<flipfl::Result<_>>()?;
    updates.push((LinearModel::zeros(2, 1, false).with_params(vec![25.0, -30.0])?, 100));

    for kind in [
        AggregatorKind::Fedavg,
        AggregatorKind::Krum { f: 1 },
        AggregatorKind::Multikrum { f: 1, m: 3 },
        AggregatorKind::Median,
        AggregatorKind::TrimmedMean { beta: 1 },
    ] {
        let agg = aggregate(&updates, kind)?;
        let p = agg.model.params();
        match agg.pick {
            Some(i) => println!("{kind:?}: [{:.3}, {:.3}] (picked update {i})", p[0], p[1]),
            None => println!("{kind:?}: [{:.3}, {:.3}]", p[0], p[1]),
        }
    }
    Ok(())
}
