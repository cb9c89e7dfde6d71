//! The loss-change bounds, the robustness certificate and the rejection
//! forecast on small random instances.
//!
//! The certified ball is empty for most draws: the worst-case class comes from
//! the planted trigger, and a recovered trigger close to it rarely beats it.
//! The search below reports how many draws it took to find a non-empty one.

use flipfl::data::Batch;
use flipfl::numerics::{DenseMatrix, SeededRng};
use flipfl::theory::{
    extreme_classes, loss_diff_bounds, one_step_weight_delta, rejection_forecast, robustness_alpha, verify_bounds,
    CertificateInput,
};
use rand::Rng;

const D: usize = 8;
const K: usize = 3;
const TARGET: usize = 2;

fn stamp(x: &[f64], mask: &[f64], pattern: &[f64]) -> Vec<f64> {
    x.iter().zip(mask).zip(pattern).map(|((x, m), p)| (1.0 - m) * x + m * p).collect()
}

fn uniform(n: usize, rng: &mut SeededRng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(0.0..1.0)).collect()
}

fn main() -> flipfl::Result<()> {
    let mut rng = SeededRng::new(17);
    let w = DenseMatrix::from_rows(&(0..D).map(|_| uniform(K, &mut rng).iter().map(|v| 2.0 * v - 1.0).collect()).collect::<Vec<_>>())?;

    // One hardening step with samples from classes 0 and 1.
    let mut z = Batch::with_capacity(D, 6);
    for i in 0..6 {
        z.push(&uniform(D, &mut rng), i % 2);
    }
    let dw = one_step_weight_delta(&z, &w, 0.05)?;
    let mut w2 = w.clone();
    w2.axpy(1.0, &dw)?;
    let x = uniform(D, &mut rng);
    let check = verify_bounds(&x, 0, &w, &w2)?.expect("bounds hold");
    println!("loss change {:.5} within [{:.5}, {:.5}]", check.diff, check.lower, check.upper);

    let losses: Vec<f64> = (0..4).map(|i| 0.3 + 0.6 * i as f64).collect();
    let bounds: Vec<_> = (0..4)
        .map(|_| loss_diff_bounds(&uniform(D, &mut rng), TARGET, &dw))
        .collect::<flipfl::Result<_>>()?;
    let f = rejection_forecast(&losses, &bounds, &losses, &bounds, 0.3)?;
    println!("forecast at tau 0.3: {f:?}");

    for draw in 1..=100_000 {
        let mask: Vec<f64> = (0..D).map(|_| if rng.random_bool(0.3) { 1.0 } else { 0.0 }).collect();
        let pattern = uniform(D, &mut rng);
        let noisy = |v: &[f64], rng: &mut SeededRng| -> Vec<f64> {
            v.iter().map(|a| (a + rng.random_range(-0.15..0.15)).clamp(0.0, 1.0)).collect()
        };
        let (rmask, rpattern) = (noisy(&mask, &mut rng), noisy(&pattern, &mut rng));

        let mut hardening = Batch::with_capacity(D, 8);
        for i in 0..8 {
            hardening.push(&stamp(&uniform(D, &mut rng), &rmask, &rpattern), i % 2);
        }
        let g = one_step_weight_delta(&hardening, &w, 0.05)?;
        let (mut planted, mut backdoor) = (Batch::with_capacity(D, 6), Batch::with_capacity(D, 6));
        for _ in 0..6 {
            let x = uniform(D, &mut rng);
            planted.push(&stamp(&x, &mask, &pattern), TARGET);
            backdoor.push(&stamp(&x, &rmask, &rpattern), TARGET);
        }
        let mut clean = Batch::with_capacity(D, 6);
        for i in 0..6 {
            clean.push(&uniform(D, &mut rng), i % 2);
        }
        let input = CertificateInput {
            backdoor: &backdoor,
            backdoor_qstar: &extreme_classes(&planted, &g, false),
            clean: &clean,
            clean_qstar: &extreme_classes(&clean, &g, true),
            hardening: &hardening,
            weights: &w,
            eta: 0.05,
        };
        if let Ok(c) = robustness_alpha(&input) {
            println!(
                "draw {draw}: certified radius {:.5}, loss at the extremal perturbation {:.2e}, clean loss cap {:.5}",
                c.alpha,
                c.min_loss_at(&c.extremal()),
                c.max_loss_cap
            );
            return Ok(());
        }
    }
    println!("no non-empty certificate in 100000 draws");
    Ok(())
}
