//! Checkpoint format: one line of JSON header, then a little-endian float32 blob.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{Model, Params};
use super::{ArchConfig, EmbeddingError};
use crate::Scalar;

const MAGIC: &str = "segbed-model";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    arch: ArchConfig,
    tensors: Vec<TensorEntry>,
    /// Blob length in bytes.
    blob_len: usize,
    crc32: u32,
}

fn tensor_table<T: Scalar>(params: &Params<T>) -> Vec<TensorEntry> {
    let mut offset = 0;
    let mut out = Vec::new();
    let kinds = params
        .conv
        .iter()
        .enumerate()
        .map(|(i, l)| (format!("conv{i}"), l))
        .chain(params.dense.iter().enumerate().map(|(i, l)| (format!("dense{i}"), l)));
    for (prefix, layer) in kinds {
        for (suffix, shape) in [("weight", layer.weight.shape().to_vec()), ("bias", layer.bias.shape().to_vec())] {
            out.push(TensorEntry {
                name: format!("{prefix}.{suffix}"),
                offset,
                shape: shape.clone(),
            });
            offset += shape.iter().product::<usize>() * 4;
        }
    }
    out
}

/// Serialized checkpoint bytes. Weights are stored as f32 regardless of `T`.
pub fn to_bytes<T: Scalar>(model: &Model<T>) -> Vec<u8> {
    let mut blob = Vec::with_capacity(model.params.len() * 4);
    for t in model.params.tensors() {
        for &v in t {
            blob.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    let header = Header {
        format: MAGIC.into(),
        version: VERSION,
        arch: model.arch().clone(),
        tensors: tensor_table(&model.params),
        blob_len: blob.len(),
        crc32: crc32fast::hash(&blob),
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    out.extend_from_slice(&blob);
    out
}

pub fn from_bytes<T: Scalar>(bytes: &[u8]) -> Result<Model<T>, EmbeddingError> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| EmbeddingError::CorruptCheckpoint("no header line".into()))?;
    let header: Header = serde_json::from_slice(&bytes[..nl])
        .map_err(|e| EmbeddingError::CorruptCheckpoint(format!("header: {e}")))?;
    if header.format != MAGIC || header.version != VERSION {
        return Err(EmbeddingError::CorruptCheckpoint(format!(
            "format {} v{}",
            header.format, header.version
        )));
    }
    let blob = &bytes[nl + 1..];
    let mut params = Params::<T>::zeros(&header.arch)?;
    let expected = tensor_table(&params);
    if expected != header.tensors {
        return Err(EmbeddingError::ArchMismatch("tensor table does not match header architecture".into()));
    }
    if params.len() * 4 != header.blob_len {
        return Err(EmbeddingError::ArchMismatch(format!(
            "architecture needs {} bytes, header declares {}",
            params.len() * 4,
            header.blob_len
        )));
    }
    if blob.len() != header.blob_len {
        return Err(EmbeddingError::ChecksumMismatch(format!(
            "blob is {} bytes, header declares {}",
            blob.len(),
            header.blob_len
        )));
    }
    if crc32fast::hash(blob) != header.crc32 {
        return Err(EmbeddingError::ChecksumMismatch("crc32 differs".into()));
    }
    let mut values = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
    for t in params.tensors_mut() {
        for (slot, v) in t.iter_mut().zip(values.by_ref()) {
            *slot = T::lit(v as f64);
        }
    }
    if !params.all_finite() {
        return Err(EmbeddingError::CorruptCheckpoint("non-finite weight".into()));
    }
    Model::from_params(header.arch, params)
}

pub fn save_model<T: Scalar>(model: &Model<T>, path: impl AsRef<Path>) -> Result<(), EmbeddingError> {
    let mut f = fs::File::create(path)?;
    f.write_all(&to_bytes(model))?;
    Ok(())
}

pub fn load_model<T: Scalar>(path: impl AsRef<Path>) -> Result<Model<T>, EmbeddingError> {
    from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn model() -> Model<f32> {
        Model::init(ArchConfig::tiny(), 21).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model();
        let back: Model<f32> = from_bytes(&to_bytes(&m)).unwrap();
        assert_eq!(back, m);
        let x = Array2::from_shape_fn((8, 6), |(i, j)| (i as f32 - j as f32) * 0.1);
        assert_eq!(m.forward(x.view()).unwrap(), back.forward(x.view()).unwrap());
    }

    #[test]
    fn truncated_blob_is_checksum_mismatch() {
        let mut b = to_bytes(&model());
        b.truncate(b.len() - 3);
        assert!(matches!(from_bytes::<f32>(&b), Err(EmbeddingError::ChecksumMismatch(_))));
    }

    #[test]
    fn flipped_byte_is_checksum_mismatch() {
        let mut b = to_bytes(&model());
        let last = b.len() - 1;
        b[last] ^= 0x40;
        assert!(matches!(from_bytes::<f32>(&b), Err(EmbeddingError::ChecksumMismatch(_))));
    }

    #[test]
    fn edited_arch_is_arch_mismatch() {
        let b = to_bytes(&model());
        let nl = b.iter().position(|&c| c == b'\n').unwrap();
        let mut header: serde_json::Value = serde_json::from_slice(&b[..nl]).unwrap();
        header["arch"]["dim"] = 5.into();
        let mut edited = serde_json::to_vec(&header).unwrap();
        edited.push(b'\n');
        edited.extend_from_slice(&b[nl + 1..]);
        assert!(matches!(from_bytes::<f32>(&edited), Err(EmbeddingError::ArchMismatch(_))));
    }
}
