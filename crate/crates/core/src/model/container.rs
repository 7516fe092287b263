//! Binary model container.
//!
//! Layout (all integers little-endian):
//!
//! | bytes | content |
//! |-------|---------|
//! | 4     | magic `SFMB` |
//! | 4     | `u32` version (1) |
//! | 8     | `u64` JSON header length `L` |
//! | L     | UTF-8 JSON header |
//! | ...   | `f64` mean (`3n`), `f64` basis (`3n x d`, row-major), optional `u32` face triples |

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::SphereFaceModel;
use crate::error::{Result, SfmError};
use crate::mesh::Face;

pub const CONTAINER_MAGIC: &[u8; 4] = b"SFMB";
pub const CONTAINER_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    d: usize,
    vertex_count: usize,
    has_faces: bool,
    arrays: Vec<ArrayDesc>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct ArrayDesc {
    name: String,
    dtype: String,
    shape: Vec<usize>,
}

fn desc(name: &str, dtype: &str, shape: Vec<usize>) -> ArrayDesc {
    ArrayDesc {
        name: name.into(),
        dtype: dtype.into(),
        shape,
    }
}

/// Serializes the model into container bytes.
pub fn to_bytes(model: &SphereFaceModel) -> Vec<u8> {
    let dim = model.mean().len();
    let d = model.dim();
    let mut arrays = vec![desc("mean", "f64", vec![dim]), desc("basis", "f64", vec![dim, d])];
    if let Some(faces) = model.faces() {
        arrays.push(desc("faces", "u32", vec![faces.len(), 3]));
    }
    let header = Header {
        d,
        vertex_count: model.vertex_count(),
        has_faces: model.faces().is_some(),
        arrays,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");

    let mut out = Vec::with_capacity(16 + json.len() + 8 * dim * (d + 1));
    out.extend_from_slice(CONTAINER_MAGIC);
    out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for v in model.mean().iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    // nalgebra is column-major; the file is row-major.
    for r in 0..dim {
        for c in 0..d {
            out.extend_from_slice(&model.basis()[(r, c)].to_le_bytes());
        }
    }
    if let Some(faces) = model.faces() {
        for f in faces {
            for i in f {
                out.extend_from_slice(&i.to_le_bytes());
            }
        }
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<SphereFaceModel> {
    let bad = |m: &str| SfmError::Container(m.to_string());
    if bytes.len() < 16 || &bytes[..4] != CONTAINER_MAGIC {
        return Err(bad("missing SFMB magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CONTAINER_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body_start = 16usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("truncated header"))?;
    let header: Header =
        serde_json::from_slice(&bytes[16..body_start]).map_err(|e| bad(&format!("header JSON: {e}")))?;

    let dim = 3 * header.vertex_count;
    let d = header.d;
    let mut expected = vec![desc("mean", "f64", vec![dim]), desc("basis", "f64", vec![dim, d])];
    let n_faces = if header.has_faces {
        let n = header
            .arrays
            .get(2)
            .and_then(|a| a.shape.first().copied())
            .ok_or_else(|| bad("faces descriptor missing"))?;
        expected.push(desc("faces", "u32", vec![n, 3]));
        n
    } else {
        0
    };
    if header.arrays != expected {
        return Err(bad("array descriptors do not match header dimensions"));
    }

    let payload = 8 * dim + 8 * dim * d + 12 * n_faces;
    let body = &bytes[body_start..];
    if body.len() != payload {
        return Err(bad(&format!("payload is {} bytes, expected {payload}", body.len())));
    }
    let mut f64s = body[..8 * dim * (d + 1)]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mean = DVector::from_iterator(dim, f64s.by_ref().take(dim));
    let row_major: Vec<f64> = f64s.collect();
    let basis = DMatrix::from_row_slice(dim, d, &row_major);
    let faces = header.has_faces.then(|| {
        body[8 * dim * (d + 1)..]
            .chunks_exact(12)
            .map(|c| {
                let idx = |k: usize| u32::from_le_bytes(c[4 * k..4 * k + 4].try_into().unwrap());
                [idx(0), idx(1), idx(2)] as Face
            })
            .collect::<Vec<_>>()
    });
    SphereFaceModel::new(mean, basis, faces)
}

pub fn write_container(model: &SphereFaceModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(model)).map_err(|e| SfmError::io(path, e))
}

pub fn read_container(path: impl AsRef<Path>) -> Result<SphereFaceModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| SfmError::io(path, e))?;
    from_bytes(&bytes)
}
