//! Parameter checkpoints: `checkpoint.json` naming every tensor plus one
//! RMFX float32 blob per tensor. Values are narrowed to `f32` on write.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{read_payload, write_payload, FeatureMatrix};
use crate::error::{Error, Result};

use super::params::{ModelConfig, TranRdParameters};

const CHECKPOINT_FILE: &str = "checkpoint.json";
const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
    file: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointManifest {
    version: u16,
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
}

pub fn write_checkpoint(params: &TranRdParameters, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tensors = Vec::new();
    for t in params.tensors() {
        let file = format!("{}.rmfx", t.name);
        let (rows, cols) = t.shape;
        let m = FeatureMatrix::new(rows, cols, t.values.iter().map(|&v| v as f32).collect())?;
        write_payload(&m, &dir.join(&file))?;
        tensors.push(TensorEntry {
            name: t.name,
            rows,
            cols,
            file,
        });
    }
    let manifest = CheckpointManifest {
        version: CHECKPOINT_VERSION,
        config: params.config.clone(),
        tensors,
    };
    let path = dir.join(CHECKPOINT_FILE);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
}

pub fn read_checkpoint(dir: &Path) -> Result<TranRdParameters> {
    let path = dir.join(CHECKPOINT_FILE);
    if !path.is_file() {
        return Err(Error::ManifestMissing(dir.to_path_buf()));
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: CheckpointManifest =
        serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
    if manifest.version != CHECKPOINT_VERSION {
        return Err(Error::format(
            &path,
            format!("unsupported version {}", manifest.version),
        ));
    }
    let mut params = TranRdParameters::init(manifest.config, 0)?;
    let expected: Vec<(String, (usize, usize))> = params
        .tensors()
        .into_iter()
        .map(|t| (t.name, t.shape))
        .collect();
    if expected.len() != manifest.tensors.len() {
        return Err(Error::format(&path, "tensor count mismatch"));
    }
    let slots = params.tensors_mut();
    for ((slot, (name, shape)), entry) in slots.into_iter().zip(&expected).zip(&manifest.tensors) {
        let blob = dir.join(&entry.file);
        if &entry.name != name || (entry.rows, entry.cols) != *shape {
            return Err(Error::format(
                &blob,
                format!("expected tensor {name} {shape:?}"),
            ));
        }
        let m = read_payload(&blob)?;
        if (m.rows(), m.cols()) != *shape {
            return Err(Error::format(&blob, "blob shape differs from manifest"));
        }
        for (d, &v) in slot.iter_mut().zip(m.as_slice()) {
            *d = f64::from(v);
        }
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip_at_f32_precision() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ModelConfig::new(8, 3);
        cfg.heads = 2;
        let p = TranRdParameters::init(cfg, 4).unwrap();
        write_checkpoint(&p, dir.path()).unwrap();
        let back = read_checkpoint(dir.path()).unwrap();
        assert_eq!(back.config, p.config);
        for (a, b) in p.flatten().iter().zip(back.flatten()) {
            assert_eq!(*a as f32, b as f32);
        }
        // a second save of the narrowed weights is lossless
        let again = tempfile::tempdir().unwrap();
        write_checkpoint(&back, again.path()).unwrap();
        assert_eq!(read_checkpoint(again.path()).unwrap(), back);
    }

    #[test]
    fn missing_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            read_checkpoint(dir.path()),
            Err(Error::ManifestMissing(_))
        ));
    }
}
