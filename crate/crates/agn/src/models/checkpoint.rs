//! Self-describing checkpoint archive: a JSON header (architecture spec,
//! labels, hyperparameters) followed by raw little-endian parameter arrays.
//! Save/load round-trips bit-exactly.

use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

use crate::error::{AgnError, Result};
use crate::nn::{Init, LayerSpec, Net};
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"AGNCKPT1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub kind: String,
    pub dtype: String,
    pub meta: serde_json::Value,
    pub arrays: Vec<ArrayEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub shape: Vec<usize>,
}

/// Serialize a network's persistent arrays plus caller metadata.
///
/// `meta` must contain a `specs` field holding the network's `LayerSpec`
/// list; `read_checkpoint` rebuilds the net from it.
pub fn write_checkpoint<F: Scalar>(
    path: impl AsRef<Path>,
    kind: &str,
    meta: &serde_json::Value,
    net: &mut Net<F>,
) -> Result<()> {
    let arrays = net.state_arrays_mut();
    let header = CheckpointHeader {
        kind: kind.to_string(),
        dtype: F::DTYPE_NAME.to_string(),
        meta: meta.clone(),
        arrays: arrays
            .iter()
            .map(|a| ArrayEntry {
                shape: a.shape().to_vec(),
            })
            .collect(),
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(header_bytes.len() + 64);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    for arr in arrays {
        for &v in arr.as_slice().expect("standard layout") {
            v.write_le(&mut out);
        }
    }
    if let Some(parent) = path.as_ref().parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Read a checkpoint of the expected `kind`, rebuilding the network from the
/// `specs` entry in its metadata and loading the stored arrays.
pub fn read_checkpoint<F: Scalar>(
    path: impl AsRef<Path>,
    expect_kind: &str,
) -> Result<(CheckpointHeader, Net<F>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| {
        AgnError::MissingArtifact(format!("checkpoint {}: {e}", path.display()))
    })?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(AgnError::Checkpoint(format!(
            "{} is not a checkpoint file",
            path.display()
        )));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if bytes.len() < 16 + header_len {
        return Err(AgnError::Checkpoint("truncated header".into()));
    }
    let header: CheckpointHeader = serde_json::from_slice(&bytes[16..16 + header_len])?;
    if header.kind != expect_kind {
        return Err(AgnError::Checkpoint(format!(
            "expected a {expect_kind} checkpoint, found {}",
            header.kind
        )));
    }
    if header.dtype != F::DTYPE_NAME {
        return Err(AgnError::Checkpoint(format!(
            "checkpoint dtype {} does not match requested {}",
            header.dtype,
            F::DTYPE_NAME
        )));
    }
    let specs: Vec<LayerSpec> = serde_json::from_value(header.meta["specs"].clone())?;
    // Init scheme is irrelevant; every array is overwritten below.
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let mut net = Net::<F>::build(specs, Init::He, &mut rng);
    let mut offset = 16 + header_len;
    {
        let arrays = net.state_arrays_mut();
        if arrays.len() != header.arrays.len() {
            return Err(AgnError::Checkpoint(format!(
                "{} arrays in file, architecture has {}",
                header.arrays.len(),
                arrays.len()
            )));
        }
        for (arr, entry) in arrays.into_iter().zip(&header.arrays) {
            if arr.shape() != entry.shape.as_slice() {
                return Err(AgnError::Checkpoint(format!(
                    "array shape {:?} does not match stored {:?}",
                    arr.shape(),
                    entry.shape
                )));
            }
            let n = arr.len() * F::BYTE_WIDTH;
            if bytes.len() < offset + n {
                return Err(AgnError::Checkpoint("truncated array data".into()));
            }
            for (v, chunk) in arr
                .as_slice_mut()
                .expect("standard layout")
                .iter_mut()
                .zip(bytes[offset..offset + n].chunks_exact(F::BYTE_WIDTH))
            {
                *v = F::read_le(chunk);
            }
            offset += n;
        }
    }
    Ok((header, net))
}

/// Peek at a checkpoint's kind without loading arrays.
pub fn checkpoint_kind(path: impl AsRef<Path>) -> Result<String> {
    let bytes = fs::read(path.as_ref())?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(AgnError::Checkpoint("not a checkpoint file".into()));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[16..16 + header_len])?;
    Ok(header.kind)
}
