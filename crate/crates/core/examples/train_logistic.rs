//! Centralised softmax regression on MNIST, the model every client trains.
//!
//!     cargo run --release --example train_logistic

use flipfl::config::resolve_data_dir;
use flipfl::data::load_idx_pair;
use flipfl::model::{train_sgd, LinearModel, SgdConfig};
use flipfl::numerics::SeededRng;

fn main() -> flipfl::Result<()> {
    let (train, test) = load_idx_pair(resolve_data_dir("data/mnist".as_ref()))?;
    println!("{} train / {} test samples, {} classes", train.len(), test.len(), train.num_classes);
    let cfg = SgdConfig {
        learning_rate: 0.1,
        batch_size: 64,
        epochs: 1,
        mean_gradients: true,
    };
    let mut rng = SeededRng::new(7);
    let mut model = LinearModel::zeros(train.dim(), train.num_classes, true);
    for epoch in 1..=5 {
        model = train_sgd(&model, &train, &cfg, &mut rng)?;
        println!("epoch {epoch}: test accuracy {:.4}", model.evaluate_accuracy(&test)?);
    }
    Ok(())
}
