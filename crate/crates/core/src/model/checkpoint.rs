//! Checkpoint files.
//!
//! Layout: the 8 bytes `XANECKPT`, a little-endian u64 header length, a
//! UTF-8 JSON header, then every tensor as little-endian f32 in header
//! order. The header carries `schema_version`, the model config, the
//! normalization constants and, per tensor, name, shape, byte offset into
//! the payload and a CRC32 of its bytes. Parameters are held as f64 in
//! memory and rounded to f32 when written.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelError, ModelParams, Network, Norm, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"XANECKPT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub crc32: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub schema_version: u32,
    pub config: ModelConfig,
    pub target_norm: [Norm; 11],
    pub feature_norm: Norm,
    pub tensors: Vec<TensorEntry>,
    /// Free-form provenance (seed, epoch, ...).
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

fn tensor_bytes(values: &[f64]) -> Vec<u8> {
    values
        .iter()
        .flat_map(|v| (*v as f32).to_le_bytes())
        .collect()
}

pub fn save_checkpoint(
    params: &ModelParams,
    metadata: BTreeMap<String, serde_json::Value>,
    path: &Path,
) -> Result<()> {
    let mut tensors = Vec::new();
    let mut payload = Vec::new();
    params.net.visit(&mut |name, shape, values| {
        let bytes = tensor_bytes(values);
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: shape.to_vec(),
            offset: payload.len() as u64,
            crc32: crc32fast::hash(&bytes),
        });
        payload.extend_from_slice(&bytes);
    });
    let header = CheckpointHeader {
        schema_version: CHECKPOINT_VERSION,
        config: params.config,
        target_norm: params.target_norm,
        feature_norm: params.feature_norm,
        tensors,
        metadata,
    };
    let json = serde_json::to_vec(&header).map_err(|e| ModelError::Format(e.to_string()))?;
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        f.write_all(MAGIC)?;
        f.write_all(&(json.len() as u64).to_le_bytes())?;
        f.write_all(&json)?;
        f.write_all(&payload)?;
        f.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_header(bytes: &[u8]) -> Result<(CheckpointHeader, usize)> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(ModelError::Format("not a checkpoint file".into()));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let end = 16usize
        .checked_add(len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| ModelError::ChecksumMismatch("file truncated inside the header".into()))?;
    let value: serde_json::Value = serde_json::from_slice(&bytes[16..end])
        .map_err(|e| ModelError::Format(format!("header: {e}")))?;
    let found = value
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| ModelError::Format("header lacks schema_version".into()))?;
    if found != CHECKPOINT_VERSION as u64 {
        return Err(ModelError::VersionMismatch {
            found: found as u32,
            expected: CHECKPOINT_VERSION,
        });
    }
    let header: CheckpointHeader =
        serde_json::from_value(value).map_err(|e| ModelError::Format(format!("header: {e}")))?;
    Ok((header, end))
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, CheckpointHeader)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let (header, start) = read_header(&bytes)?;
    let payload = &bytes[start..];
    header.config.validate()?;
    let mut net = Network::zeros(&header.config);
    let expected = net.tensor_shapes();
    if expected.len() != header.tensors.len() {
        return Err(ModelError::Format(format!(
            "{} tensors in file, config implies {}",
            header.tensors.len(),
            expected.len()
        )));
    }
    let mut decoded = Vec::with_capacity(expected.len());
    for ((name, shape), entry) in expected.iter().zip(&header.tensors) {
        if *name != entry.name || *shape != entry.shape {
            return Err(ModelError::Format(format!(
                "tensor {} {:?} where {} {:?} was expected",
                entry.name, entry.shape, name, shape
            )));
        }
        let n: usize = shape.iter().product::<usize>() * 4;
        let lo = entry.offset as usize;
        let chunk = payload
            .get(lo..lo + n)
            .ok_or_else(|| ModelError::ChecksumMismatch(format!("{name}: payload truncated")))?;
        if crc32fast::hash(chunk) != entry.crc32 {
            return Err(ModelError::ChecksumMismatch(format!("{name}: CRC differs")));
        }
        let vals: Vec<f64> = chunk
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::Format(format!("{name}: non-finite values")));
        }
        decoded.push(vals);
    }
    let mut it = decoded.into_iter();
    net.visit_mut(&mut |_, t| t.copy_from_slice(&it.next().expect("counted")));
    let params = ModelParams {
        config: header.config,
        net,
        target_norm: header.target_norm,
        feature_norm: header.feature_norm,
    };
    Ok((params, header))
}
