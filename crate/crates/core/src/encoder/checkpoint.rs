//! Checkpoint layout, all integers little-endian:
//!
//! ```text
//! b"GKDM" | version: u32 | header_len: u64 | header (UTF-8 JSON) | payloads
//! ```
//!
//! The header holds the encoder config and the ordered tensor manifest
//! (name, dtype, shape). Payloads follow in manifest order as raw
//! little-endian floats.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{EncoderConfig, ModelParameters};
use crate::tensor::{DType, Real, Tensor};

pub const MAGIC: &[u8; 4] = b"GKDM";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint: bad magic bytes")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {VERSION})")]
    UnsupportedVersion { found: u32 },
    #[error("corrupt checkpoint manifest: {0}")]
    Manifest(String),
    #[error("shape mismatch for `{name}`: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    dtype: DType,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: EncoderConfig,
    tensors: Vec<TensorEntry>,
}

pub fn to_bytes<T: Real>(params: &ModelParameters<T>) -> Vec<u8> {
    let header = Header {
        config: params.config().clone(),
        tensors: params
            .named_tensors()
            .into_iter()
            .map(|(name, t)| TensorEntry {
                name,
                dtype: T::DTYPE,
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + header.len() + params.parameter_count() * T::DTYPE.size());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for t in params.tensors() {
        for &x in t.data() {
            x.write_le(&mut out);
        }
    }
    out
}

pub fn from_bytes<T: Real>(bytes: &[u8]) -> Result<ModelParameters<T>, CheckpointError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let truncated = || CheckpointError::Manifest("file is truncated".into());
    let version = u32::from_le_bytes(bytes.get(4..8).ok_or_else(truncated)?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion { found: version });
    }
    let header_len = u64::from_le_bytes(bytes.get(8..16).ok_or_else(truncated)?.try_into().expect("8 bytes"));
    let header_end = usize::try_from(header_len)
        .ok()
        .and_then(|l| l.checked_add(16))
        .filter(|&e| e <= bytes.len())
        .ok_or_else(truncated)?;
    let header: Header = serde_json::from_slice(&bytes[16..header_end])
        .map_err(|e| CheckpointError::Manifest(format!("bad header: {e}")))?;
    header
        .config
        .validate()
        .map_err(|e| CheckpointError::Manifest(e.to_string()))?;

    let expected = header.config.manifest();
    if expected.len() != header.tensors.len() {
        return Err(CheckpointError::Manifest(format!(
            "config implies {} tensors, manifest lists {}",
            expected.len(),
            header.tensors.len()
        )));
    }
    for ((name, shape), entry) in expected.iter().zip(&header.tensors) {
        if *name != entry.name {
            return Err(CheckpointError::Manifest(format!(
                "expected tensor `{name}`, found `{}`",
                entry.name
            )));
        }
        if *shape != entry.shape {
            return Err(CheckpointError::ShapeMismatch {
                name: name.clone(),
                expected: shape.clone(),
                found: entry.shape.clone(),
            });
        }
    }
    let payload_len: usize = header
        .tensors
        .iter()
        .map(|e| e.shape.iter().product::<usize>() * e.dtype.size())
        .sum();
    let payload = &bytes[header_end..];
    if payload.len() != payload_len {
        return Err(CheckpointError::Manifest(format!(
            "expected {payload_len} payload bytes, found {}",
            payload.len()
        )));
    }

    let mut offset = 0;
    let tensors = header
        .tensors
        .iter()
        .map(|e| {
            let n: usize = e.shape.iter().product();
            let raw = &payload[offset..offset + n * e.dtype.size()];
            offset += raw.len();
            let data = match e.dtype {
                DType::F32 => raw
                    .chunks_exact(4)
                    .map(|c| T::of(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
                    .collect(),
                DType::F64 => raw
                    .chunks_exact(8)
                    .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
                    .collect(),
            };
            Tensor::from_vec(&e.shape, data)
        })
        .collect();
    Ok(ModelParameters::from_manifest_tensors(header.config, tensors))
}

pub fn save_checkpoint<T: Real>(params: &ModelParameters<T>, path: &Path) -> Result<(), CheckpointError> {
    fs::write(path, to_bytes(params)).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Loads parameters (with their config), converting the stored dtype to `T`.
pub fn load_checkpoint<T: Real>(path: &Path) -> Result<ModelParameters<T>, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    from_bytes(&bytes)
}

/// Checks that a loaded model has the architecture a pipeline expects.
pub fn check_architecture(found: &EncoderConfig, expected: &EncoderConfig) -> Result<(), CheckpointError> {
    let expected_manifest = expected.manifest();
    let found_manifest = found.manifest();
    for ((en, es), (fnm, fs)) in expected_manifest.iter().zip(&found_manifest) {
        if en != fnm || es != fs {
            return Err(CheckpointError::ShapeMismatch {
                name: en.clone(),
                expected: es.clone(),
                found: fs.clone(),
            });
        }
    }
    if expected_manifest.len() != found_manifest.len() {
        return Err(CheckpointError::Manifest(format!(
            "expected {} tensors, found {}",
            expected_manifest.len(),
            found_manifest.len()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TaskId;
    use crate::encoder::init_params;

    fn config(hidden: usize) -> EncoderConfig {
        EncoderConfig {
            layers: 1,
            hidden,
            heads: 2,
            ffn: 8,
            vocab_size: 270,
            max_len: 8,
            tasks: vec![TaskId::B, TaskId::A],
            dropout: 0.1,
            tie_mlm: true,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let p: ModelParameters<f32> = init_params(&config(16), 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&p, &path).unwrap();
        let q: ModelParameters<f32> = load_checkpoint(&path).unwrap();
        assert_eq!(q.config(), p.config());
        for (a, b) in p.tensors().iter().zip(q.tensors()) {
            let ab: Vec<u32> = a.data().iter().map(|x| x.to_bits()).collect();
            let bb: Vec<u32> = b.data().iter().map(|x| x.to_bits()).collect();
            assert_eq!(ab, bb);
        }
        let p64: ModelParameters<f64> = init_params(&config(16), 11).unwrap();
        assert_eq!(from_bytes::<f64>(&to_bytes(&p64)).unwrap(), p64);
    }

    #[test]
    fn header_layout() {
        let p: ModelParameters<f32> = init_params(&config(4), 0).unwrap();
        let bytes = to_bytes(&p);
        assert_eq!(&bytes[..4], b"GKDM");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&bytes[16..16 + hlen]).unwrap();
        assert_eq!(header["tensors"][0]["name"], "token_embedding");
        assert_eq!(header["tensors"][0]["dtype"], "f32");
        assert_eq!(bytes.len(), 16 + hlen + 4 * p.parameter_count());
    }

    #[test]
    fn corruption_errors() {
        let p: ModelParameters<f32> = init_params(&config(4), 0).unwrap();
        let bytes = to_bytes(&p);
        assert!(matches!(from_bytes::<f32>(b"NOPE...."), Err(CheckpointError::BadMagic)));
        assert!(matches!(from_bytes::<f32>(b""), Err(CheckpointError::BadMagic)));
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(
            from_bytes::<f32>(&v2),
            Err(CheckpointError::UnsupportedVersion { found: 2 })
        ));
        for cut in [6, 12, 40, bytes.len() - 1] {
            assert!(matches!(from_bytes::<f32>(&bytes[..cut]), Err(CheckpointError::Manifest(_))));
        }
    }

    #[test]
    fn architecture_mismatch() {
        let small = config(16);
        let big = config(32);
        assert!(matches!(
            check_architecture(&small, &big),
            Err(CheckpointError::ShapeMismatch { .. })
        ));
        assert!(check_architecture(&small, &small).is_ok());
    }
}
