//! Parameter checkpoint file: 8-byte magic, u32 length-prefixed JSON
//! manifest (caller metadata plus named shapes), then raw little-endian f64
//! planes in manifest order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SLIDENN1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad magic, not a checkpoint file")]
    BadMagic,
    #[error("bad manifest: {0}")]
    BadManifest(String),
    #[error("file ends before parameter data is complete")]
    Truncated,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    meta: serde_json::Value,
    params: Vec<ManifestEntry>,
}

/// One named parameter plane.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Caller metadata plus named parameter planes, in a stable order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamPack {
    pub meta: serde_json::Value,
    pub entries: Vec<ParamEntry>,
}

pub fn save_params(path: &Path, pack: &ParamPack) -> Result<(), CheckpointError> {
    let manifest = Manifest {
        meta: pack.meta.clone(),
        params: pack
            .entries
            .iter()
            .map(|e| ManifestEntry { name: e.name.clone(), shape: e.shape.clone() })
            .collect(),
    };
    let json = serde_json::to_vec(&manifest).map_err(|e| CheckpointError::BadManifest(e.to_string()))?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    for entry in &pack.entries {
        let n: usize = entry.shape.iter().product();
        assert_eq!(entry.values.len(), n, "entry {} shape/value mismatch", entry.name);
        let mut buf = Vec::with_capacity(n * 8);
        for v in &entry.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_params(path: &Path) -> Result<ParamPack, CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut len_bytes = [0u8; 4];
    r.read_exact(&mut len_bytes)?;
    let len = u32::from_le_bytes(len_bytes) as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let manifest: Manifest =
        serde_json::from_slice(&json).map_err(|e| CheckpointError::BadManifest(e.to_string()))?;
    let mut entries = Vec::with_capacity(manifest.params.len());
    for m in manifest.params {
        let n: usize = m.shape.iter().product();
        let mut buf = vec![0u8; n * 8];
        r.read_exact(&mut buf).map_err(|_| CheckpointError::Truncated)?;
        let values = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
            .collect();
        entries.push(ParamEntry { name: m.name, shape: m.shape, values });
    }
    Ok(ParamPack { meta: manifest.meta, entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn round_trip_preserves_bits() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let pack = ParamPack {
            meta: serde_json::json!({"seed": 7, "step": 42}),
            entries: vec![
                ParamEntry {
                    name: "w".into(),
                    shape: vec![2, 3],
                    values: vec![1.0, -0.5, 1e-300, 3.7, 0.0, -0.0],
                },
                ParamEntry { name: "b".into(), shape: vec![2], values: vec![0.25, 8.0] },
            ],
        };
        save_params(&path, &pack).unwrap();
        let back = load_params(&path).unwrap();
        assert_eq!(back.meta["seed"], 7);
        assert_eq!(back.entries.len(), 2);
        for (a, b) in back.entries.iter().zip(&pack.entries) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.shape, b.shape);
            let raw_a: Vec<u64> = a.values.iter().map(|v| v.to_bits()).collect();
            let raw_b: Vec<u64> = b.values.iter().map(|v| v.to_bits()).collect();
            assert_eq!(raw_a, raw_b);
        }
    }

    #[test]
    fn rejects_wrong_magic() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"JUNKJUNKJUNK").unwrap();
        assert!(matches!(load_params(&path), Err(CheckpointError::BadMagic)));
    }
}
