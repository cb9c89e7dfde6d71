//! Stamp the default 4×4 patch onto a few MNIST digits and write them as PGM
//! images next to the clean originals.
//!
//!     cargo run --example stamp_trigger -- /tmp/stamped

use std::path::PathBuf;

use flipfl::config::{resolve_data_dir, ExperimentConfig};
use flipfl::data::{load_idx_pair, stamp};
use flipfl::experiment::planted_trigger;

fn pgm(w: usize, h: usize, px: &[f64]) -> Vec<u8> {
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(px.iter().map(|v| (v * 255.0).round() as u8));
    out
}

fn main() -> flipfl::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "stamped".into()));
    std::fs::create_dir_all(&out)?;
    let (_, test) = load_idx_pair(resolve_data_dir("data/mnist".as_ref()))?;
    let trig = planted_trigger(&ExperimentConfig::default(), &test)?;
    println!("trigger mask L1 {} target {}", trig.mask_l1(), trig.target_label);
    for i in 0..5 {
        let x = test.image(i);
        let s = stamp(x, &trig)?;
        std::fs::write(out.join(format!("{i}-clean.pgm")), pgm(test.width, test.height, x))?;
        std::fs::write(out.join(format!("{i}-stamped.pgm")), pgm(test.width, test.height, s.as_slice()))?;
        println!("sample {i}: label {}", test.label(i));
    }
    println!("wrote {}", out.display());
    Ok(())
}
