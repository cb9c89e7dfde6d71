use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::LabeledDataset;
use crate::error::{FlipError, Result};

/// Per-pixel spread of the default blobs.
pub const DEFAULT_BLOB_STD: f64 = 0.1;

/// Gaussian class blobs clipped to `[0, 1]`. Class means are drawn uniformly
/// from `[0.1, 0.9]^dim`. Images are square when `dim` is a perfect square,
/// otherwise a single row. Samples come out class-interleaved.
pub fn gen_synthetic(
    num_classes: usize,
    dim: usize,
    per_class: usize,
    rng: &mut impl Rng,
) -> Result<LabeledDataset> {
    if dim < 4 || per_class < 1 || num_classes < 1 {
        return Err(FlipError::InvalidArgument(format!(
            "gen_synthetic needs dim >= 4, per_class >= 1, num_classes >= 1 (got {dim}, {per_class}, {num_classes})"
        )));
    }
    let means: Vec<Vec<f64>> = (0..num_classes)
        .map(|_| (0..dim).map(|_| rng.random_range(0.1..0.9)).collect())
        .collect();
    gen_blobs(&means, DEFAULT_BLOB_STD, per_class, rng)
}

/// Blobs around explicit class means.
pub fn gen_blobs(
    means: &[Vec<f64>],
    std: f64,
    per_class: usize,
    rng: &mut impl Rng,
) -> Result<LabeledDataset> {
    let dim = means.first().map_or(0, Vec::len);
    if dim == 0 || means.iter().any(|m| m.len() != dim) {
        return Err(FlipError::InvalidArgument("blob means must share a nonzero dimension".into()));
    }
    let noise = Normal::new(0.0, std)
        .map_err(|e| FlipError::InvalidArgument(format!("blob std: {e}")))?;
    let side = (dim as f64).sqrt().round() as usize;
    let geometry = if side * side == dim { (side, side, 1) } else { (dim, 1, 1) };

    let mut pixels = Vec::with_capacity(dim * per_class * means.len());
    let mut labels = Vec::with_capacity(per_class * means.len());
    for _ in 0..per_class {
        for (class, mean) in means.iter().enumerate() {
            pixels.extend(mean.iter().map(|&m| (m + noise.sample(rng)).clamp(0.0, 1.0)));
            labels.push(class);
        }
    }
    LabeledDataset::new(pixels, labels, geometry, means.len())
}
