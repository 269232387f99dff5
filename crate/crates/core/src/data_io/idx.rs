//! Reader for the big-endian IDX files used by MNIST-style datasets.

use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::network::Dataset;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;
pub const NUM_CLASSES: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::TruncatedFile(format!("{what}: header ends at byte {}", bytes.len())))
}

fn check_magic(bytes: &[u8], expected: u32, what: &str) -> Result<()> {
    let found = be_u32(bytes, 0, what)?;
    if found != expected {
        return Err(Error::BadMagic { found, expected });
    }
    Ok(())
}

pub fn parse_images(bytes: &[u8]) -> Result<IdxImages> {
    check_magic(bytes, IMAGES_MAGIC, "images")?;
    let count = be_u32(bytes, 4, "images")? as usize;
    let rows = be_u32(bytes, 8, "images")? as usize;
    let cols = be_u32(bytes, 12, "images")? as usize;
    let need = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| Error::TruncatedFile("images: declared size overflows".into()))?;
    let body = &bytes[16..];
    if body.len() < need {
        return Err(Error::TruncatedFile(format!(
            "images: {need} pixel bytes declared, {} present",
            body.len()
        )));
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: body[..need].to_vec(),
    })
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, LABELS_MAGIC, "labels")?;
    let count = be_u32(bytes, 4, "labels")? as usize;
    let body = &bytes[8..];
    if body.len() < count {
        return Err(Error::TruncatedFile(format!(
            "labels: {count} labels declared, {} present",
            body.len()
        )));
    }
    Ok(body[..count].to_vec())
}

#[derive(Clone, Debug)]
pub struct IdxData {
    /// Pixels scaled to `[0, 1]`, one-hot targets over [`NUM_CLASSES`].
    pub dataset: Dataset,
    pub labels: Vec<u8>,
    /// `take_first_n` exceeded the file count and was reduced to it.
    pub clamped: bool,
}

/// Assembles the first `take_first_n` records of an image/label pair.
pub fn from_bytes(images: &[u8], labels: &[u8], take_first_n: usize) -> Result<IdxData> {
    let img = parse_images(images)?;
    let lab = parse_labels(labels)?;
    if img.count != lab.len() {
        return Err(Error::CountMismatch {
            images: img.count,
            labels: lab.len(),
        });
    }
    if let Some(bad) = lab.iter().find(|&&l| l as usize >= NUM_CLASSES) {
        return Err(Error::InvalidArgument(format!("label {bad} out of range")));
    }
    let n = take_first_n.min(img.count);
    if n == 0 {
        return Err(Error::InvalidArgument("no records selected".into()));
    }
    let dim = img.rows * img.cols;
    let inputs: Vec<f64> = img.pixels[..n * dim].iter().map(|&p| p as f64 / 255.0).collect();
    let mut targets = Matrix::zeros(n, NUM_CLASSES);
    for (i, &l) in lab[..n].iter().enumerate() {
        targets[(i, l as usize)] = 1.0;
    }
    Ok(IdxData {
        dataset: Dataset::new(Matrix::from_vec(n, dim, inputs), targets)?,
        labels: lab[..n].to_vec(),
        clamped: take_first_n > img.count,
    })
}

pub fn load_idx(images_path: &Path, labels_path: &Path, take_first_n: usize) -> Result<IdxData> {
    from_bytes(&std::fs::read(images_path)?, &std::fs::read(labels_path)?, take_first_n)
}

/// Serialized IDX image file, for fixtures.
pub fn encode_images(img: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + img.pixels.len());
    for v in [IMAGES_MAGIC, img.count as u32, img.rows as u32, img.cols as u32] {
        out.extend(v.to_be_bytes());
    }
    out.extend(&img.pixels);
    out
}

/// Serialized IDX label file, for fixtures.
pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend(LABELS_MAGIC.to_be_bytes());
    out.extend((labels.len() as u32).to_be_bytes());
    out.extend(labels);
    out
}
