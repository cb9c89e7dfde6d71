//! Poison a model centrally, then recover the backdoor by universal trigger
//! inversion. The trigger found on the poisoned model is far smaller than the
//! one a clean model needs.
//!
//!     cargo run --release --example invert_trigger -- /tmp/inverted

use flipfl::config::{resolve_data_dir, ExperimentConfig};
use flipfl::data::{load_idx_pair, make_poison_batch, LabeledDataset, TriggerSpec};
use flipfl::experiment::planted_trigger;
use flipfl::inversion::{class_distance, export_trigger, flip_rate, invert_trigger, InversionConfig};
use flipfl::model::{LinearModel, SgdConfig};
use flipfl::numerics::SeededRng;

fn train(ds: &LabeledDataset, trig: &TriggerSpec, poison: usize) -> flipfl::Result<LinearModel> {
    let cfg = SgdConfig {
        learning_rate: 0.1,
        batch_size: 64,
        epochs: 1,
        mean_gradients: true,
    };
    let mut rng = SeededRng::new(3);
    let mut m = LinearModel::zeros(ds.dim(), ds.num_classes, false);
    for _ in 0..5 * ds.len() / 64 {
        m = m.train_batch(&make_poison_batch(ds, trig, 64, poison, &mut rng)?, &cfg)?;
    }
    Ok(m)
}

fn main() -> flipfl::Result<()> {
    let out = std::env::args().nth(1);
    let (train_set, test) = load_idx_pair(resolve_data_dir("data/mnist".as_ref()))?;
    let planted = planted_trigger(&ExperimentConfig::default(), &train_set)?;
    let target = planted.target_label;
    let sources = train_set.filter(|l| l != target);
    let held_out = test.filter(|l| l != target);
    let inv = InversionConfig::default();

    for (name, poison) in [("poisoned", 20), ("clean", 0)] {
        let model = train(&train_set, &planted, poison)?;
        let mut rng = SeededRng::new(11);
        let found = invert_trigger(&model, &sources, target, &inv, &mut rng)?;
        println!(
            "{name:>8}: planted ASR {:.3}, inverted mask L1 {:.1}, inverted flip rate {:.3}, final objective {:.4}",
            flip_rate(&model, &held_out, &planted)?,
            class_distance(&found.trigger),
            flip_rate(&model, &held_out, &found.trigger)?,
            found.loss_trace.last().copied().unwrap_or(f64::NAN)
        );
        if let Some(dir) = &out {
            export_trigger(&found.trigger, format!("{dir}/{name}"), Some((test.width, test.height)))?;
        }
    }
    Ok(())
}
