//! IDX reader/writer (the MNIST container). Gzip-framed files are detected by
//! their magic bytes and inflated transparently.

use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use super::LabeledDataset;
use crate::error::{FlipError, IdxError, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize) -> std::result::Result<u32, IdxError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(IdxError::Truncated {
            expected: at + 4,
            found: bytes.len(),
        })
}

fn check_magic(bytes: &[u8], expected: u32) -> std::result::Result<(), IdxError> {
    if bytes.is_empty() {
        return Err(IdxError::Empty);
    }
    let found = be_u32(bytes, 0)?;
    if found != expected {
        return Err(IdxError::BadMagic { expected, found });
    }
    Ok(())
}

fn parse_images(bytes: &[u8]) -> std::result::Result<(usize, usize, usize, &[u8]), IdxError> {
    check_magic(bytes, IMAGES_MAGIC)?;
    let n = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let expected = 16 + n * rows * cols;
    if bytes.len() < expected {
        return Err(IdxError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    Ok((n, rows, cols, &bytes[16..expected]))
}

fn parse_labels(bytes: &[u8]) -> std::result::Result<&[u8], IdxError> {
    check_magic(bytes, LABELS_MAGIC)?;
    let n = be_u32(bytes, 4)? as usize;
    let expected = 8 + n;
    if bytes.len() < expected {
        return Err(IdxError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    Ok(&bytes[8..expected])
}

/// Parse in-memory IDX image and label payloads. `num_classes` defaults to
/// `max label + 1`.
pub fn parse_idx(
    image_bytes: &[u8],
    label_bytes: &[u8],
    num_classes: Option<usize>,
) -> Result<LabeledDataset> {
    let (n, rows, cols, px) = parse_images(image_bytes)?;
    let labels = parse_labels(label_bytes)?;
    if labels.len() != n {
        return Err(IdxError::CountMismatch {
            images: n,
            labels: labels.len(),
        }
        .into());
    }
    let observed = labels.iter().copied().max().map_or(0, |m| m as usize + 1);
    let num_classes = num_classes.unwrap_or(observed);
    if let Some((index, &label)) = labels
        .iter()
        .enumerate()
        .find(|(_, &l)| l as usize >= num_classes)
    {
        return Err(IdxError::BadLabel { index, label }.into());
    }
    let pixels = px.iter().map(|&b| f64::from(b) / 255.0).collect();
    let labels = labels.iter().map(|&l| l as usize).collect();
    LabeledDataset::new(pixels, labels, (cols, rows, 1), num_classes)
}

pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let images = read_maybe_gz(images_path.as_ref())?;
    let labels = read_maybe_gz(labels_path.as_ref())?;
    parse_idx(&images, &labels, None)
}

fn resolve(dir: &Path, stem: &str) -> Result<std::path::PathBuf> {
    let plain = dir.join(stem);
    if plain.exists() {
        return Ok(plain);
    }
    let gz = dir.join(format!("{stem}.gz"));
    if gz.exists() {
        return Ok(gz);
    }
    Err(FlipError::Io(std::io::Error::new(
        std::io::ErrorKind::NotFound,
        format!("neither {} nor {} exists", plain.display(), gz.display()),
    )))
}

/// Load the canonical `train-*` / `t10k-*` file pair from `dir` (plain or
/// `.gz`). Both splits share `num_classes`.
pub fn load_idx_pair(dir: impl AsRef<Path>) -> Result<(LabeledDataset, LabeledDataset)> {
    let dir = dir.as_ref();
    let load = |prefix: &str, classes: Option<usize>| -> Result<LabeledDataset> {
        let images = read_maybe_gz(&resolve(dir, &format!("{prefix}-images-idx3-ubyte"))?)?;
        let labels = read_maybe_gz(&resolve(dir, &format!("{prefix}-labels-idx1-ubyte"))?)?;
        parse_idx(&images, &labels, classes)
    };
    let train = load("train", None)?;
    let test = load("t10k", Some(train.num_classes))?;
    Ok((train, test))
}

fn to_byte(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

pub fn encode_idx_images(ds: &LabeledDataset) -> Result<Vec<u8>> {
    if ds.channels != 1 {
        return Err(FlipError::InvalidArgument(
            "IDX export supports single-channel images only".into(),
        ));
    }
    let mut out = Vec::with_capacity(16 + ds.pixels().len());
    out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(ds.len() as u32).to_be_bytes());
    out.extend_from_slice(&(ds.height as u32).to_be_bytes());
    out.extend_from_slice(&(ds.width as u32).to_be_bytes());
    out.extend(ds.pixels().iter().map(|&v| to_byte(v)));
    Ok(out)
}

pub fn encode_idx_labels(ds: &LabeledDataset) -> Result<Vec<u8>> {
    if ds.num_classes > 256 {
        return Err(FlipError::InvalidArgument(
            "IDX labels are single bytes".into(),
        ));
    }
    let mut out = Vec::with_capacity(8 + ds.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(ds.len() as u32).to_be_bytes());
    out.extend(ds.labels().iter().map(|&l| l as u8));
    Ok(out)
}

/// Write uncompressed IDX image and label files.
pub fn write_idx(
    ds: &LabeledDataset,
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<()> {
    fs::write(images_path, encode_idx_images(ds)?)?;
    fs::write(labels_path, encode_idx_labels(ds)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn images(n: u32, rows: u32, cols: u32, px: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        for w in [IMAGES_MAGIC, n, rows, cols] {
            v.extend_from_slice(&w.to_be_bytes());
        }
        v.extend_from_slice(px);
        v
    }

    fn labels(ls: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        v.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
        v.extend_from_slice(&(ls.len() as u32).to_be_bytes());
        v.extend_from_slice(ls);
        v
    }

    #[test]
    fn parses_and_scales() {
        let ds = parse_idx(&images(2, 1, 2, &[0, 255, 51, 102]), &labels(&[1, 0]), None).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!((ds.width, ds.height), (2, 1));
        assert_eq!(ds.num_classes, 2);
        assert_eq!(ds.image(0), &[0.0, 1.0]);
        assert!((ds.image(1)[0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn distinct_errors() {
        let err = |r: Result<LabeledDataset>| match r {
            Err(FlipError::Idx(e)) => e,
            other => panic!("expected idx error, got {other:?}"),
        };
        assert_eq!(err(parse_idx(&[], &labels(&[0]), None)), IdxError::Empty);
        assert!(matches!(
            err(parse_idx(&labels(&[0]), &labels(&[0]), None)),
            IdxError::BadMagic { expected: IMAGES_MAGIC, found: LABELS_MAGIC }
        ));
        assert!(matches!(
            err(parse_idx(&images(2, 2, 2, &[0; 5]), &labels(&[0, 0]), None)),
            IdxError::Truncated { expected: 24, found: 21 }
        ));
        assert!(matches!(
            err(parse_idx(&images(1, 1, 1, &[0]), &labels(&[0, 1]), None)),
            IdxError::CountMismatch { images: 1, labels: 2 }
        ));
        assert!(matches!(
            err(parse_idx(&images(1, 1, 1, &[0]), &labels(&[3]), Some(2))),
            IdxError::BadLabel { .. }
        ));
        // header cut short
        assert!(matches!(
            err(parse_idx(&IMAGES_MAGIC.to_be_bytes()[..], &labels(&[0]), None)),
            IdxError::Truncated { .. }
        ));
    }

    #[test]
    fn round_trip_bytes() {
        let px: Vec<u8> = (0..=255).collect();
        let img = images(4, 8, 8, &px);
        let lbl = labels(&[3, 1, 4, 1]);
        let ds = parse_idx(&img, &lbl, None).unwrap();
        assert_eq!(encode_idx_images(&ds).unwrap(), img);
        assert_eq!(encode_idx_labels(&ds).unwrap(), lbl);
    }
}
