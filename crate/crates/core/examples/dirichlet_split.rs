//! How the Dirichlet concentration shapes client shards: smaller alpha gives
//! fewer classes per client.
//!
//!     cargo run --release --example dirichlet_split

use flipfl::config::resolve_data_dir;
use flipfl::data::{dirichlet_partition, label_entropy, load_idx_pair};
use flipfl::numerics::SeededRng;

fn main() -> flipfl::Result<()> {
    let (train, _) = load_idx_pair(resolve_data_dir("data/mnist".as_ref()))?;
    for alpha in [0.1, 0.5, 1.0, 10.0] {
        let mut rng = SeededRng::new(1);
        let plan = dirichlet_partition(&train, 100, alpha, &mut rng)?;
        let shards = plan.shards(&train);
        let empty = shards.iter().filter(|s| s.is_empty()).count();
        let entropy: f64 = shards.iter().map(label_entropy).sum::<f64>() / shards.len() as f64;
        let sizes = plan.shard_sizes();
        println!(
            "alpha {alpha:>4}: mean label entropy {entropy:.3} nats, shard sizes {}..{}, {empty} empty",
            sizes.iter().min().unwrap(),
            sizes.iter().max().unwrap()
        );
    }
    let mut rng = SeededRng::new(1);
    let shard = &dirichlet_partition(&train, 100, 0.5, &mut rng)?.shards(&train)[0];
    println!("client 0 at alpha 0.5: class counts {:?}", shard.class_counts());
    Ok(())
}
