//! Multinomial logistic regression: one linear layer followed by softmax,
//! trained with plain SGD on cross-entropy.
//!
//! Gradients are batch sums unless [`SgdConfig::mean_gradients`] is set.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{Batch, LabeledDataset};
use crate::error::{shape_err, FlipError, Result};
use crate::numerics::{
    argmax, cross_entropy_from_logits, softmax_in_place, DenseMatrix, DenseVector,
};

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    weights: DenseMatrix,
    bias: Option<DenseVector>,
}

/// Gradient of the summed (or averaged) cross-entropy. `bias` is always
/// populated, even for bias-free models.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: DenseMatrix,
    pub bias: DenseVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Divide batch gradients by the batch size.
    #[serde(default)]
    pub mean_gradients: bool,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            batch_size: 64,
            epochs: 5,
            mean_gradients: false,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(FlipError::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(FlipError::InvalidArgument("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

impl LinearModel {
    pub fn zeros(dim: usize, num_classes: usize, with_bias: bool) -> Self {
        Self {
            weights: DenseMatrix::zeros(dim, num_classes),
            bias: with_bias.then(|| DenseVector::zeros(num_classes)),
        }
    }

    /// Weights drawn from N(0, std²), bias zero.
    pub fn gaussian(
        dim: usize,
        num_classes: usize,
        with_bias: bool,
        std: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let normal = Normal::new(0.0, std)
            .map_err(|e| FlipError::InvalidArgument(format!("init std {std}: {e}")))?;
        let data = (0..dim * num_classes).map(|_| normal.sample(rng)).collect();
        Ok(Self {
            weights: DenseMatrix::new(dim, num_classes, data)?,
            bias: with_bias.then(|| DenseVector::zeros(num_classes)),
        })
    }

    pub fn from_parts(weights: DenseMatrix, bias: Option<DenseVector>) -> Result<Self> {
        if let Some(b) = &bias {
            if b.len() != weights.cols() {
                return Err(shape_err("LinearModel bias", weights.cols(), b.len()));
            }
        }
        if !weights.is_finite() {
            return Err(FlipError::InvalidArgument("model weights are not finite".into()));
        }
        Ok(Self { weights, bias })
    }

    pub fn weights(&self) -> &DenseMatrix {
        &self.weights
    }

    pub fn bias(&self) -> Option<&DenseVector> {
        self.bias.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.weights.cols()
    }

    pub fn has_bias(&self) -> bool {
        self.bias.is_some()
    }

    /// Number of scalar parameters (weights then bias).
    pub fn num_params(&self) -> usize {
        self.weights.as_slice().len() + self.bias.as_ref().map_or(0, |b| b.len())
    }

    /// All parameters as one flat vector: row-major weights, then bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        out.extend_from_slice(self.weights.as_slice());
        if let Some(b) = &self.bias {
            out.extend_from_slice(b.as_slice());
        }
        out
    }

    /// Inverse of [`params`](Self::params), using `self` for the layout.
    pub fn with_params(&self, params: Vec<f64>) -> Result<Self> {
        if params.len() != self.num_params() {
            return Err(shape_err("LinearModel::with_params", self.num_params(), params.len()));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(FlipError::InvalidArgument("model parameters are not finite".into()));
        }
        let (rows, cols) = self.weights.shape();
        let mut params = params;
        let bias = self
            .bias
            .as_ref()
            .map(|_| DenseVector::from_vec_unchecked(params.split_off(rows * cols)));
        Ok(Self {
            weights: DenseMatrix::from_vec_unchecked(rows, cols, params),
            bias,
        })
    }

    /// `x W + b` without shape checks.
    pub(crate) fn logits_of(&self, x: &[f64]) -> Vec<f64> {
        let mut out = match &self.bias {
            Some(b) => b.as_slice().to_vec(),
            None => vec![0.0; self.num_classes()],
        };
        self.weights.accumulate_vecmat(x, &mut out);
        out
    }

    pub(crate) fn probs_of(&self, x: &[f64]) -> Vec<f64> {
        let mut p = self.logits_of(x);
        softmax_in_place(&mut p);
        p
    }

    fn check_dim(&self, op: &'static str, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(shape_err(op, self.dim(), len));
        }
        Ok(())
    }

    pub fn forward_logits(&self, x: &DenseVector) -> Result<DenseVector> {
        self.check_dim("forward_logits", x.len())?;
        Ok(DenseVector::from_vec_unchecked(self.logits_of(x.as_slice())))
    }

    /// `softmax(x W + b)`.
    pub fn forward_probs(&self, x: &DenseVector) -> Result<DenseVector> {
        self.check_dim("forward_probs", x.len())?;
        Ok(DenseVector::from_vec_unchecked(self.probs_of(x.as_slice())))
    }

    /// Predicted class; ties go to the lowest index.
    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.logits_of(x))
    }

    /// Summed cross-entropy over a batch, computed exactly from logits.
    pub fn loss(&self, batch: &Batch) -> Result<f64> {
        if batch.is_empty() {
            return Err(FlipError::EmptyBatch);
        }
        self.check_dim("loss", batch.dim)?;
        Ok(batch
            .iter()
            .map(|(x, y)| cross_entropy_from_logits(&self.logits_of(x), y))
            .sum())
    }

    /// `Σ_j x_jᵀ (p(x_j) − Y_j)` and `Σ_j (p(x_j) − Y_j)`.
    pub fn gradient(&self, batch: &Batch) -> Result<Gradient> {
        if batch.is_empty() {
            return Err(FlipError::EmptyBatch);
        }
        self.check_dim("gradient", batch.dim)?;
        let mut gw = DenseMatrix::zeros(self.dim(), self.num_classes());
        let mut gb = vec![0.0; self.num_classes()];
        for (x, y) in batch.iter() {
            let mut r = self.probs_of(x);
            r[y] -= 1.0;
            gw.rank_one_update(1.0, x, &r);
            for (g, v) in gb.iter_mut().zip(&r) {
                *g += v;
            }
        }
        Ok(Gradient {
            weights: gw,
            bias: DenseVector::from_vec_unchecked(gb),
        })
    }

    /// `W − η·gradW` (and the same for the bias, when present).
    pub fn sgd_step(&self, grad: &Gradient, learning_rate: f64) -> Result<LinearModel> {
        if grad.weights.shape() != self.weights.shape() {
            return Err(shape_err(
                "sgd_step",
                format!("{:?}", self.weights.shape()),
                format!("{:?}", grad.weights.shape()),
            ));
        }
        let mut next = self.clone();
        next.weights.axpy(-learning_rate, &grad.weights)?;
        if let Some(b) = next.bias.as_mut() {
            b.axpy(-learning_rate, &grad.bias)?;
        }
        Ok(next)
    }

    /// One SGD step on `batch` following `cfg`'s gradient scaling.
    pub fn train_batch(&self, batch: &Batch, cfg: &SgdConfig) -> Result<LinearModel> {
        let grad = self.gradient(batch)?;
        let lr = if cfg.mean_gradients {
            cfg.learning_rate / batch.len() as f64
        } else {
            cfg.learning_rate
        };
        self.sgd_step(&grad, lr)
    }

    /// Fraction of samples whose argmax prediction equals the label.
    pub fn evaluate_accuracy(&self, ds: &LabeledDataset) -> Result<f64> {
        if ds.is_empty() {
            return Err(FlipError::EmptyDataset);
        }
        self.check_dim("evaluate_accuracy", ds.dim())?;
        let correct = ds.iter().filter(|(x, y)| self.predict(x) == *y).count();
        Ok(correct as f64 / ds.len() as f64)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        write_container(&mut f, &self.weights, self.bias.as_ref())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut f = fs::File::open(path)?;
        let (weights, bias) = read_container(&mut f)?;
        Self::from_parts(weights, bias)
    }
}

/// Shuffled minibatch index lists covering `0..n` once.
pub fn minibatch_indices(n: usize, batch_size: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Plain minibatch SGD for `cfg.epochs` epochs over `ds`.
pub fn train_sgd(
    model: &LinearModel,
    ds: &LabeledDataset,
    cfg: &SgdConfig,
    rng: &mut impl Rng,
) -> Result<LinearModel> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(FlipError::EmptyDataset);
    }
    let mut m = model.clone();
    for _ in 0..cfg.epochs {
        for chunk in minibatch_indices(ds.len(), cfg.batch_size, rng) {
            let mut batch = Batch::with_capacity(ds.dim(), chunk.len());
            for i in chunk {
                batch.push(ds.image(i), ds.label(i));
            }
            m = m.train_batch(&batch, cfg)?;
        }
    }
    Ok(m)
}

const CONTAINER_MAGIC: &[u8; 8] = b"FLIPCKPT";
const CONTAINER_VERSION: u32 = 1;

/// Serialize a matrix (and optional trailing vector) in the checkpoint layout:
///
/// ```text
/// magic  "FLIPCKPT"        8 bytes
/// version                 u32 LE (currently 1)
/// rows, cols              u64 LE each
/// has_vector              u8 (0 or 1)
/// data                    rows*cols f64 LE, row-major
/// vector                  cols f64 LE, present iff has_vector == 1
/// ```
pub fn write_container(
    w: &mut impl Write,
    matrix: &DenseMatrix,
    vector: Option<&DenseVector>,
) -> Result<()> {
    if let Some(v) = vector {
        if v.len() != matrix.cols() {
            return Err(shape_err("write_container", matrix.cols(), v.len()));
        }
    }
    let mut buf = Vec::with_capacity(29 + 8 * (matrix.as_slice().len() + matrix.cols()));
    buf.extend_from_slice(CONTAINER_MAGIC);
    buf.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
    buf.extend_from_slice(&(matrix.rows() as u64).to_le_bytes());
    buf.extend_from_slice(&(matrix.cols() as u64).to_le_bytes());
    buf.push(u8::from(vector.is_some()));
    for v in matrix.as_slice() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(v) = vector {
        for x in v.as_slice() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_container(r: &mut impl Read) -> Result<(DenseMatrix, Option<DenseVector>)> {
    let bad = |msg: &str| FlipError::InvalidArgument(format!("checkpoint: {msg}"));
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 29 || &bytes[..8] != CONTAINER_MAGIC {
        return Err(bad("missing FLIPCKPT header"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CONTAINER_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let rows = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(bytes[20..28].try_into().unwrap()) as usize;
    let has_vector = match bytes[28] {
        0 => false,
        1 => true,
        _ => return Err(bad("bad vector flag")),
    };
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| bad("dimensions overflow"))?;
    let expected = 29 + 8 * (n + if has_vector { cols } else { 0 });
    if bytes.len() != expected {
        return Err(bad(&format!("expected {expected} bytes, found {}", bytes.len())));
    }
    let floats: Vec<f64> = bytes[29..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let matrix = DenseMatrix::new(rows, cols, floats[..n].to_vec())?;
    let vector = if has_vector {
        Some(DenseVector::new(floats[n..].to_vec())?)
    } else {
        None
    };
    Ok((matrix, vector))
}
