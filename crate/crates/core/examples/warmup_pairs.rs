//! One benign client's view of FLIP: the warm-up fills the class-distance
//! cache, the top pairs are picked and hardened.
//!
//!     cargo run --release --example warmup_pairs

use flipfl::config::resolve_data_dir;
use flipfl::data::{dirichlet_partition, load_idx_pair};
use flipfl::federation::{ClientState, Role};
use flipfl::federation::hardening_pool;
use flipfl::inversion::{select_pairs, warmup_distances, InversionConfig};
use flipfl::model::{train_sgd, LinearModel, SgdConfig};
use flipfl::numerics::SeededRng;

fn main() -> flipfl::Result<()> {
    let (train, _) = load_idx_pair(resolve_data_dir("data/mnist".as_ref()))?;
    let mut rng = SeededRng::new(5);
    let shard = dirichlet_partition(&train, 20, 0.5, &mut rng)?.shards(&train).remove(0);
    println!("client shard: {} samples, class counts {:?}", shard.len(), shard.class_counts());

    let sgd = SgdConfig {
        learning_rate: 0.1,
        batch_size: 64,
        epochs: 3,
        mean_gradients: true,
    };
    let global = train_sgd(&LinearModel::zeros(train.dim(), 10, true), &train, &sgd, &mut rng)?;
    let inv = InversionConfig::default();

    let w = warmup_distances(&global, &shard, &inv, 0, &mut rng)?;
    println!("warm-up ran {} universal inversions", w.inversions);
    for (s, t, e) in w.distances.iter_set().take(8) {
        println!("  d[{s}][{t}] = {:.5} ({:?})", e.value, e.kind);
    }
    println!("top pairs: {:?}", select_pairs(&w.distances, inv.top_k));

    let mut client = ClientState::new(0, Role::Benign, shard);
    let (pool, triggers) = hardening_pool(&global, &mut client, &inv, 0, &mut rng)?;
    println!("hardening pool: {} stamped samples from {} triggers", pool.len(), triggers.len());
    Ok(())
}
