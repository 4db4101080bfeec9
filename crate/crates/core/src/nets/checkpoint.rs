//! Binary checkpoint: `"C2AE"`, a version byte, a little-endian `u64`
//! manifest length, the JSON manifest, then every tensor as little-endian
//! `f32` in manifest order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NetworkDef, OpenSetModel};
use crate::data::SplitSpec;
use crate::error::{Error, Result};
use crate::evt::ThresholdModel;

pub const MAGIC: &[u8; 4] = b"C2AE";
pub const FORMAT_VERSION: u8 = 1;
const HEADER_LEN: usize = 4 + 1 + 8;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    network: NetworkDef,
    tensors: Vec<TensorEntry>,
    threshold: Option<ThresholdModel>,
    #[serde(default)]
    split: Option<SplitSpec>,
}

/// Serializes `model` into checkpoint bytes.
pub fn write_checkpoint(model: &OpenSetModel) -> Result<Vec<u8>> {
    let params = model.named_params();
    let manifest = Manifest {
        network: model.def.clone(),
        tensors: params
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                dtype: "f32".into(),
            })
            .collect(),
        threshold: model.threshold.clone(),
        split: model.split.clone(),
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(HEADER_LEN + json.len() + params.iter().map(|(_, t)| 4 * t.len()).sum::<usize>());
    out.extend_from_slice(MAGIC);
    out.push(FORMAT_VERSION);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in params {
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_checkpoint(model: &OpenSetModel, path: impl AsRef<Path>) -> Result<()> {
    let bytes = write_checkpoint(model)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    f.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<OpenSetModel> {
    read_checkpoint(&fs::read(path)?)
}

/// Parses checkpoint bytes. Every structural problem is a format error
/// carrying the byte offset where it was detected.
pub fn read_checkpoint(bytes: &[u8]) -> Result<OpenSetModel> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::format(0, "not a checkpoint (bad magic)"));
    }
    match bytes.get(4) {
        None => return Err(Error::format(4, "truncated header")),
        Some(&FORMAT_VERSION) => {}
        Some(v) => return Err(Error::format(4, format!("unsupported version {v}"))),
    }
    let len_bytes = bytes
        .get(5..HEADER_LEN)
        .ok_or_else(|| Error::format(5, "truncated manifest length"))?;
    let manifest_len = u64::from_le_bytes(len_bytes.try_into().expect("8 bytes")) as usize;
    let manifest_end = HEADER_LEN
        .checked_add(manifest_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::format(bytes.len() as u64, format!("manifest of {manifest_len} bytes truncated")))?;
    let manifest: Manifest = serde_json::from_slice(&bytes[HEADER_LEN..manifest_end]).map_err(|e| {
        Error::format(HEADER_LEN as u64, format!("invalid manifest: {e}"))
    })?;
    manifest
        .network
        .validate()
        .map_err(|e| Error::format(HEADER_LEN as u64, format!("invalid network: {e}")))?;

    // Fresh model provides the expected names and shapes.
    let mut model = OpenSetModel::new(manifest.network.clone(), 0)?;
    let expected: Vec<(String, Vec<usize>)> = model
        .named_params()
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();
    if expected.len() != manifest.tensors.len() {
        return Err(Error::format(
            HEADER_LEN as u64,
            format!("{} tensors listed, network needs {}", manifest.tensors.len(), expected.len()),
        ));
    }
    for ((name, shape), entry) in expected.iter().zip(&manifest.tensors) {
        if &entry.name != name || &entry.shape != shape || entry.dtype != "f32" {
            return Err(Error::format(
                HEADER_LEN as u64,
                format!("tensor entry {} {:?} {} does not match network", entry.name, entry.shape, entry.dtype),
            ));
        }
    }

    let mut offset = manifest_end;
    for t in model.params_mut() {
        let need = 4 * t.len();
        let chunk = bytes.get(offset..offset + need).ok_or_else(|| {
            Error::format(bytes.len() as u64, format!("tensor payload truncated at offset {offset}"))
        })?;
        for (v, b) in t.data_mut().iter_mut().zip(chunk.chunks_exact(4)) {
            *v = f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]]));
        }
        offset += need;
    }
    if offset != bytes.len() {
        return Err(Error::format(offset as u64, "trailing bytes after tensor payload"));
    }
    model.threshold = manifest.threshold;
    model.split = manifest.split;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bits(m: &OpenSetModel) -> Vec<u64> {
        m.named_params()
            .iter()
            .flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits()))
            .collect()
    }

    #[test]
    fn roundtrip_is_lossless_after_one_pass() {
        let m = OpenSetModel::new(NetworkDef::toy(3), 5).unwrap();
        let once = read_checkpoint(&write_checkpoint(&m).unwrap()).unwrap();
        let bytes = write_checkpoint(&once).unwrap();
        let twice = read_checkpoint(&bytes).unwrap();
        assert_eq!(bits(&once), bits(&twice));
        assert_eq!(once.def, twice.def);
        assert_eq!(bytes, write_checkpoint(&twice).unwrap());
        assert!(twice.threshold.is_none());
    }

    #[test]
    fn wrong_magic() {
        let m = OpenSetModel::new(NetworkDef::toy(2), 5).unwrap();
        let mut b = write_checkpoint(&m).unwrap();
        b[0] = b'X';
        assert!(matches!(read_checkpoint(&b), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn wrong_version() {
        let m = OpenSetModel::new(NetworkDef::toy(2), 5).unwrap();
        let mut b = write_checkpoint(&m).unwrap();
        b[4] = 9;
        assert!(matches!(read_checkpoint(&b), Err(Error::Format { offset: 4, .. })));
    }

    #[test]
    fn truncation_is_detected() {
        let m = OpenSetModel::new(NetworkDef::toy(2), 5).unwrap();
        let b = write_checkpoint(&m).unwrap();
        for cut in [3, 10, 40, b.len() - 1] {
            assert!(matches!(read_checkpoint(&b[..cut]), Err(Error::Format { .. })), "cut {cut}");
        }
    }
}
