//! Dataset directory format.
//!
//! A dataset is a directory holding `manifest.json` and one binary payload
//! per sample. Payload layout (all little-endian):
//!
//! ```text
//! magic   "RMFX"        4 bytes
//! version u16           2 bytes
//! rows    u32           4 bytes
//! cols    u32           4 bytes
//! values  f32 * rows*cols, row-major
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Domain, FeatureDataset, FeatureMatrix, SnippetSequence};

pub const MAGIC: &[u8; 4] = b"RMFX";
pub const FORMAT_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 + 4;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub sample_id: String,
    pub label: usize,
    pub domain: Domain,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u16,
    pub class_count: usize,
    pub snippet_count: usize,
    pub dim: usize,
    pub samples: Vec<ManifestEntry>,
}

pub fn encode_payload(m: &FeatureMatrix) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * m.as_slice().len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    buf.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for v in m.as_slice() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn decode_payload(bytes: &[u8], path: &Path) -> Result<FeatureMatrix> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(path, "truncated header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::format(path, "bad magic"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported version {version}"),
        ));
    }
    let word = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let (rows, cols) = (word(6), word(10));
    let body = &bytes[HEADER_LEN..];
    if body.len() != rows * cols * 4 {
        return Err(Error::format(
            path,
            format!(
                "payload holds {} bytes, header declares {rows}x{cols}",
                body.len()
            ),
        ));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    FeatureMatrix::new(rows, cols, data)
}

pub fn write_payload(m: &FeatureMatrix, path: &Path) -> Result<()> {
    fs::write(path, encode_payload(m)).map_err(|e| Error::io(path, e))
}

pub fn read_payload(path: &Path) -> Result<FeatureMatrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_payload(&bytes, path)
}

fn payload_name(index: usize) -> String {
    format!("{index:06}.rmfx")
}

/// Writes `dataset` into `dir`, creating it if needed. The manifest is
/// written last through a rename so a partially written directory never
/// looks complete.
pub fn write_dataset(dataset: &FeatureDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut samples = Vec::with_capacity(dataset.len());
    for (i, s) in dataset.sequences().iter().enumerate() {
        let file = payload_name(i);
        write_payload(&s.features, &dir.join(&file))?;
        samples.push(ManifestEntry {
            sample_id: s.sample_id.clone(),
            label: s.label,
            domain: s.domain,
            file,
        });
    }
    let manifest = Manifest {
        version: FORMAT_VERSION,
        class_count: dataset.class_count(),
        snippet_count: dataset.snippet_count(),
        dim: dataset.dim(),
        samples,
    };
    let tmp = dir.join(".manifest.json.tmp");
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    let dest = dir.join(MANIFEST_FILE);
    fs::rename(&tmp, &dest).map_err(|e| Error::io(&dest, e))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    if !path.is_file() {
        return Err(Error::ManifestMissing(dir.to_path_buf()));
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
    if manifest.version != FORMAT_VERSION {
        return Err(Error::format(
            &path,
            format!("unsupported version {}", manifest.version),
        ));
    }
    Ok(manifest)
}

pub fn read_dataset(dir: &Path) -> Result<FeatureDataset> {
    let manifest = read_manifest(dir)?;
    let mut sequences = Vec::with_capacity(manifest.samples.len());
    for entry in &manifest.samples {
        let path: PathBuf = dir.join(&entry.file);
        let features = read_payload(&path)?;
        if features.rows() != manifest.snippet_count || features.cols() != manifest.dim {
            return Err(Error::format(
                &path,
                format!(
                    "payload is {}x{}, manifest declares {}x{}",
                    features.rows(),
                    features.cols(),
                    manifest.snippet_count,
                    manifest.dim
                ),
            ));
        }
        let seq = SnippetSequence::new(&entry.sample_id, entry.label, entry.domain, features)
            .map_err(|e| Error::format(&path, e.to_string()))?;
        sequences.push(seq);
    }
    FeatureDataset::new(
        sequences,
        manifest.class_count,
        manifest.snippet_count,
        manifest.dim,
    )
    .map_err(|e| Error::format(dir.join(MANIFEST_FILE), e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_samples() -> FeatureDataset {
        let a = FeatureMatrix::new(2, 4, vec![0.1, -2.5, 3.0, 1e-7, 5.0, 6.0, -0.0, 8.25]).unwrap();
        let b = FeatureMatrix::new(
            2,
            4,
            vec![f32::MIN_POSITIVE, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0],
        )
        .unwrap();
        FeatureDataset::new(
            vec![
                SnippetSequence::new("s0", 0, Domain::Source, a).unwrap(),
                SnippetSequence::new("t1", 1, Domain::Target, b).unwrap(),
            ],
            2,
            2,
            4,
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_byte_exact() {
        let dir = tempfile::tempdir().unwrap();
        let ds = two_samples();
        write_dataset(&ds, dir.path()).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back, ds);
        let other = tempfile::tempdir().unwrap();
        write_dataset(&back, other.path()).unwrap();
        for f in ["000000.rmfx", "000001.rmfx", MANIFEST_FILE] {
            let x = fs::read(dir.path().join(f)).unwrap();
            let y = fs::read(other.path().join(f)).unwrap();
            assert_eq!(x, y, "{f}");
        }
        // -0.0 survives bit-exactly
        assert_eq!(
            back.sequences()[0].features.get(1, 2).to_bits(),
            (-0.0f32).to_bits()
        );
    }

    #[test]
    fn dim_mismatch_names_file() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&two_samples(), dir.path()).unwrap();
        let mpath = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&mpath)
            .unwrap()
            .replace("\"dim\": 4", "\"dim\": 8");
        fs::write(&mpath, text).unwrap();
        let err = read_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("000000.rmfx"), "{err}");
    }

    #[test]
    fn empty_directory_reports_missing_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let err = read_dataset(dir.path()).unwrap_err();
        assert!(matches!(err, Error::ManifestMissing(_)));
        assert!(err.to_string().contains("manifest missing"));
    }

    #[test]
    fn corrupt_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&two_samples(), dir.path()).unwrap();
        let p = dir.path().join("000001.rmfx");
        let mut bytes = fs::read(&p).unwrap();
        bytes[0] = b'X';
        fs::write(&p, bytes).unwrap();
        let err = read_dataset(dir.path()).unwrap_err().to_string();
        assert!(
            err.contains("bad magic") && err.contains("000001.rmfx"),
            "{err}"
        );
    }

    #[test]
    fn header_layout() {
        let m = FeatureMatrix::new(1, 2, vec![1.0, 2.0]).unwrap();
        let b = encode_payload(&m);
        assert_eq!(&b[..4], b"RMFX");
        assert_eq!(&b[4..6], &[1, 0]);
        assert_eq!(&b[6..10], &[1, 0, 0, 0]);
        assert_eq!(&b[10..14], &[2, 0, 0, 0]);
        assert_eq!(&b[14..18], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 22);
    }

    proptest::proptest! {
        #[test]
        fn payload_round_trip(bits in proptest::collection::vec(proptest::num::u32::ANY, 1..64)) {
            let data: Vec<f32> = bits.iter().map(|&b| f32::from_bits(b)).collect();
            let m = FeatureMatrix::new(1, data.len(), data).unwrap();
            let back = decode_payload(&encode_payload(&m), Path::new("mem")).unwrap();
            let a: Vec<u32> = m.as_slice().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = back.as_slice().iter().map(|v| v.to_bits()).collect();
            proptest::prop_assert_eq!(a, b);
        }
    }
}
