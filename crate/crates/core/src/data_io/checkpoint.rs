//! Parameter checkpoints: one line of JSON metadata, then the parameters as
//! little-endian `f64`s.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const FORMAT: &str = "eoslab-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    /// Text description of the model the parameters belong to.
    pub spec: String,
    /// SHA-256 of `spec`, hex encoded.
    pub spec_digest: String,
    pub seed: u64,
    pub step: u64,
    pub loss: f64,
    pub len: usize,
}

impl CheckpointHeader {
    pub fn new(spec: &str, seed: u64, step: u64, loss: f64, len: usize) -> Self {
        Self {
            format: FORMAT.to_string(),
            version: VERSION,
            spec: spec.to_string(),
            spec_digest: spec_digest(spec),
            seed,
            step,
            loss,
            len,
        }
    }
}

pub fn spec_digest(spec: &str) -> String {
    hex::encode(Sha256::digest(spec.as_bytes()))
}

pub fn encode(header: &CheckpointHeader, theta: &[f64]) -> Result<Vec<u8>> {
    if header.len != theta.len() {
        return Err(Error::LengthMismatch {
            expected: header.len,
            got: theta.len(),
        });
    }
    let mut out = serde_json::to_vec(header)?;
    out.push(b'\n');
    out.reserve(8 * theta.len());
    for v in theta {
        out.extend(v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<(CheckpointHeader, Vec<f64>)> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::TruncatedFile("checkpoint header has no line end".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[..nl])?;
    if header.format != FORMAT {
        return Err(Error::InvalidArgument(format!(
            "not a checkpoint: format '{}'",
            header.format
        )));
    }
    if header.version != VERSION {
        return Err(Error::VersionMismatch(header.version));
    }
    if header.spec_digest != spec_digest(&header.spec) {
        return Err(Error::InvalidArgument("spec digest does not match spec".into()));
    }
    let payload = &bytes[nl + 1..];
    if payload.len() != 8 * header.len {
        return Err(Error::LengthMismatch {
            expected: header.len,
            got: payload.len() / 8,
        });
    }
    let theta = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok((header, theta))
}

pub fn write_checkpoint(path: &Path, header: &CheckpointHeader, theta: &[f64]) -> Result<()> {
    let bytes = encode(header, theta)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<(CheckpointHeader, Vec<f64>)> {
    decode(&std::fs::read(path)?)
}
