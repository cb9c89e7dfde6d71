use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Batch, LabeledDataset};
use crate::error::{shape_err, FlipError, Result};
use crate::numerics::DenseVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Corner {
    #[default]
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
}

/// A backdoor trigger: where to paint (`mask`), what to paint (`pattern`), and
/// the label the attacker wants.
#[derive(Debug, Clone, PartialEq)]
pub struct TriggerSpec {
    pub mask: DenseVector,
    pub pattern: DenseVector,
    pub target_label: usize,
}

impl TriggerSpec {
    pub fn new(mask: DenseVector, pattern: DenseVector, target_label: usize) -> Result<Self> {
        if mask.len() != pattern.len() {
            return Err(shape_err("TriggerSpec", mask.len(), pattern.len()));
        }
        let in_unit = |v: &DenseVector| v.as_slice().iter().all(|x| (0.0..=1.0).contains(x));
        if !in_unit(&mask) || !in_unit(&pattern) {
            return Err(FlipError::InvalidArgument(
                "trigger mask and pattern must lie in [0, 1]".into(),
            ));
        }
        Ok(Self {
            mask,
            pattern,
            target_label,
        })
    }

    /// Solid white `side`×`side` square, `margin` pixels in from `corner`,
    /// painted into every channel.
    pub fn square_patch(
        (width, height, channels): (usize, usize, usize),
        side: usize,
        corner: Corner,
        margin: usize,
        target_label: usize,
    ) -> Result<Self> {
        if side == 0 || side + margin > width || side + margin > height {
            return Err(FlipError::InvalidArgument(format!(
                "a {side}px patch with margin {margin} does not fit a {width}x{height} image"
            )));
        }
        let d = width * height * channels;
        let mut mask = vec![0.0; d];
        let row0 = match corner {
            Corner::TopLeft | Corner::TopRight => margin,
            Corner::BottomLeft | Corner::BottomRight => height - margin - side,
        };
        let col0 = match corner {
            Corner::TopLeft | Corner::BottomLeft => margin,
            Corner::TopRight | Corner::BottomRight => width - margin - side,
        };
        for r in row0..row0 + side {
            for c in col0..col0 + side {
                for ch in 0..channels {
                    mask[(r * width + c) * channels + ch] = 1.0;
                }
            }
        }
        Ok(Self {
            pattern: DenseVector::from_vec_unchecked(mask.clone()),
            mask: DenseVector::from_vec_unchecked(mask),
            target_label,
        })
    }

    pub fn dim(&self) -> usize {
        self.mask.len()
    }

    /// L1 norm of the mask.
    pub fn mask_l1(&self) -> f64 {
        self.mask.l1_norm()
    }
}

/// `(1 - m)·x + m·δ`, element-wise.
pub fn stamp(x: &[f64], trig: &TriggerSpec) -> Result<DenseVector> {
    if x.len() != trig.dim() {
        return Err(shape_err("stamp", trig.dim(), x.len()));
    }
    let mut out = vec![0.0; x.len()];
    stamp_into(x, trig.mask.as_slice(), trig.pattern.as_slice(), &mut out);
    Ok(DenseVector::from_vec_unchecked(out))
}

pub fn stamp_into(x: &[f64], mask: &[f64], pattern: &[f64], out: &mut [f64]) {
    for (((o, &xv), &m), &p) in out.iter_mut().zip(x).zip(mask).zip(pattern) {
        *o = (1.0 - m) * xv + m * p;
    }
}

/// Draw `batch_size` samples uniformly with replacement from `shard`; the
/// first `poison_count` are stamped with `trig` and relabeled to its target.
pub fn make_poison_batch(
    shard: &LabeledDataset,
    trig: &TriggerSpec,
    batch_size: usize,
    poison_count: usize,
    rng: &mut impl Rng,
) -> Result<Batch> {
    if shard.is_empty() {
        return Err(FlipError::EmptyShard);
    }
    if poison_count > batch_size {
        return Err(FlipError::InvalidArgument(format!(
            "poison count {poison_count} exceeds batch size {batch_size}"
        )));
    }
    if trig.dim() != shard.dim() {
        return Err(shape_err("make_poison_batch", shard.dim(), trig.dim()));
    }
    let d = shard.dim();
    let mut batch = Batch::with_capacity(d, batch_size);
    let mut buf = vec![0.0; d];
    for k in 0..batch_size {
        let i = rng.random_range(0..shard.len());
        if k < poison_count {
            stamp_into(shard.image(i), trig.mask.as_slice(), trig.pattern.as_slice(), &mut buf);
            batch.push(&buf, trig.target_label);
        } else {
            batch.push(shard.image(i), shard.label(i));
        }
    }
    Ok(batch)
}
