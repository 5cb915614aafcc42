//! Parameter checkpoints: one flat little-endian `f64` file plus a JSON manifest
//! naming each tensor, its shape and its offset.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::fingerprint_bytes;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};
use crate::tensor::Tensor;

pub const FORMAT: &str = "hpcde-f64le-v1";
pub const WEIGHTS_FILE: &str = "weights.bin";
pub const MANIFEST_FILE: &str = "checkpoint.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the weights file, in `f64` elements.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub config: ModelConfig,
    pub tensors: Vec<TensorEntry>,
    /// SHA-256 of the weights file.
    pub sha256: String,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Writes `weights.bin` and `checkpoint.json` into `dir`, creating it if needed.
pub fn save(dir: &Path, params: &ModelParams) -> Result<CheckpointManifest> {
    fs::create_dir_all(dir)?;
    let mut bytes = Vec::with_capacity(params.num_scalars() * 8);
    let mut tensors = Vec::new();
    let mut offset = 0;
    for (name, t) in params.names().iter().zip(params.tensors()) {
        tensors.push(TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset,
        });
        offset += t.len();
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = CheckpointManifest {
        format: FORMAT.to_string(),
        config: params.config.clone(),
        tensors,
        sha256: fingerprint_bytes(&bytes),
    };
    write_atomic(&dir.join(WEIGHTS_FILE), &bytes)?;
    write_atomic(&dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(manifest)
}

/// Accepts either the checkpoint directory or its manifest file.
pub fn load(path: &Path) -> Result<ModelParams> {
    let dir: PathBuf = if path.is_dir() {
        path.to_path_buf()
    } else {
        path.parent().map(Path::to_path_buf).unwrap_or_default()
    };
    let manifest: CheckpointManifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    if manifest.format != FORMAT {
        return Err(Error::Data(format!(
            "unsupported checkpoint format {:?}, expected {FORMAT:?}",
            manifest.format
        )));
    }
    let bytes = fs::read(dir.join(WEIGHTS_FILE))?;
    if fingerprint_bytes(&bytes) != manifest.sha256 {
        return Err(Error::Data(format!(
            "{} does not match the hash in its manifest",
            dir.join(WEIGHTS_FILE).display()
        )));
    }
    if bytes.len() % 8 != 0 {
        return Err(Error::Data("weights file length is not a multiple of 8".into()));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let mut named = Vec::with_capacity(manifest.tensors.len());
    for e in &manifest.tensors {
        let n: usize = e.shape.iter().product();
        let slice = values.get(e.offset..e.offset + n).ok_or_else(|| {
            Error::Data(format!("tensor {} runs past the end of the weights file", e.name))
        })?;
        named.push((e.name.clone(), Tensor::new(e.shape.clone(), slice.to_vec())?));
    }
    ModelParams::from_named(manifest.config, named)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hawkes::EventTerm;

    fn config() -> ModelConfig {
        ModelConfig {
            num_types: 3,
            dim_z: 4,
            dim_h: 3,
            layers: 2,
            hidden: 5,
            event_term: EventTerm::Marked,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = ModelParams::init(config(), 11).unwrap();
        p.set_flat(0, -0.0);
        p.set_flat(1, f64::MIN_POSITIVE / 4.0);
        save(dir.path(), &p).unwrap();
        let q = load(dir.path()).unwrap();
        let (a, b) = (p.flatten(), q.flatten());
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(q.config, p.config);
        assert_eq!(load(&dir.path().join(MANIFEST_FILE)).unwrap(), q);
    }

    #[test]
    fn corrupted_weights_are_detected() {
        let dir = tempfile::tempdir().unwrap();
        save(dir.path(), &ModelParams::init(config(), 1).unwrap()).unwrap();
        let w = dir.path().join(WEIGHTS_FILE);
        let mut bytes = fs::read(&w).unwrap();
        bytes[3] ^= 1;
        fs::write(&w, bytes).unwrap();
        assert!(matches!(load(dir.path()), Err(Error::Data(_))));
    }
}
