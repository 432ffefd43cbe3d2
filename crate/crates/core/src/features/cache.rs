use std::path::Path;

use super::FeatureKind;
use crate::autograd::Mat;
use crate::error::{Error, Result};
use crate::model::AcousticFeature;

pub const CACHE_MAGIC: &[u8; 4] = b"LSTF";
pub const CACHE_VERSION: u8 = 1;
const HEADER_LEN: usize = 4 + 1 + 1 + 4 + 4;

/// Serializes a feature: magic, version, kind, N, T, then `N*T` little-endian
/// `f32` values, row-major.
pub fn encode_feature(f: &AcousticFeature) -> Vec<u8> {
    let (n, t) = f.data.dim();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * n * t);
    out.extend_from_slice(CACHE_MAGIC);
    out.push(CACHE_VERSION);
    out.push(f.kind.code());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(t as u32).to_le_bytes());
    for row in f.data.rows() {
        for &v in row {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_feature(bytes: &[u8], origin: &str) -> Result<AcousticFeature> {
    let bad = |reason: String| Error::InvalidData {
        path: origin.to_string(),
        reason,
    };
    if bytes.len() < HEADER_LEN || &bytes[..4] != CACHE_MAGIC {
        return Err(bad("missing LSTF header".into()));
    }
    if bytes[4] != CACHE_VERSION {
        return Err(bad(format!("unsupported version {}", bytes[4])));
    }
    let kind = FeatureKind::from_code(bytes[5]).ok_or_else(|| bad(format!("unknown kind {}", bytes[5])))?;
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize;
    let (n, t) = (word(6), word(10));
    let expected = n
        .checked_mul(t)
        .and_then(|c| c.checked_mul(4))
        .ok_or_else(|| bad("dimensions overflow".into()))?;
    let body = &bytes[HEADER_LEN..];
    if body.len() != expected {
        return Err(bad(format!("expected {expected} data bytes for {n}x{t}, found {}", body.len())));
    }
    let values: Vec<f64> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    let data = Mat::from_shape_vec((n, t), values).map_err(|e| bad(e.to_string()))?;
    Ok(AcousticFeature::new(data, kind))
}

pub fn write_feature(path: impl AsRef<Path>, f: &AcousticFeature) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_feature(f)).map_err(|e| Error::io(path, e))
}

pub fn read_feature(path: impl AsRef<Path>) -> Result<AcousticFeature> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_feature(&bytes, &path.display().to_string())
}
