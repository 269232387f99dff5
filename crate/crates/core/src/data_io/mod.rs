//! Synthetic data generators, the IDX reader and the on-disk formats.

pub mod checkpoint;
pub mod idx;
pub mod synthetic;

use std::path::Path;

use crate::error::Result;

pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointHeader};
pub use idx::{load_idx, IdxData};
pub use synthetic::{generate, SyntheticKind, SyntheticSpec};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Pretty JSON with keys in sorted order, newline terminated.
pub fn json_text(value: &serde_json::Value) -> Result<String> {
    // serde_json's default map is ordered by key
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_text(dir: &Path, name: &str, contents: &str) -> Result<()> {
    std::fs::write(dir.join(name), contents)?;
    Ok(())
}

pub fn write_manifest(dir: &Path, value: &serde_json::Value) -> Result<()> {
    write_text(dir, MANIFEST_FILE, &json_text(value)?)
}
