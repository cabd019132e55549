//! Binary tensor files ("BEVT").
//!
//! Layout, all little-endian: magic `BEVT`, version `u16`, rank `u16`,
//! `rank` dimensions as `u32`, then the `f32` payload in row-major order
//! with the channel axis fastest (ndarray's standard layout).

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array3, Array4, ArrayD, IxDyn};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

pub const TENSOR_MAGIC: &[u8; 4] = b"BEVT";
pub const TENSOR_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum TensorIoError {
    #[error("failed to access {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: bad magic, not a tensor file")]
    BadMagic { path: String },
    #[error("{path}: unsupported tensor version {found}")]
    UnsupportedVersion { path: String, found: u16 },
    #[error("{path}: invalid tensor header ({reason})")]
    BadHeader { path: String, reason: String },
    #[error("expected a rank-{expected} tensor, file holds rank {found}")]
    RankMismatch { expected: usize, found: usize },
}

fn io_err(path: &Path, source: std::io::Error) -> TensorIoError {
    TensorIoError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes a tensor of any rank; dimensions must be nonzero.
pub fn write_tensor(path: &Path, tensor: &ArrayD<f32>) -> Result<(), TensorIoError> {
    let file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(TENSOR_MAGIC).map_err(|e| io_err(path, e))?;
    w.write_u16::<LittleEndian>(TENSOR_VERSION)
        .map_err(|e| io_err(path, e))?;
    w.write_u16::<LittleEndian>(tensor.ndim() as u16)
        .map_err(|e| io_err(path, e))?;
    for dim in tensor.shape() {
        w.write_u32::<LittleEndian>(*dim as u32)
            .map_err(|e| io_err(path, e))?;
    }
    // as_standard_layout is a no-op copy for tensors already in C order.
    for value in tensor.as_standard_layout().iter() {
        w.write_f32::<LittleEndian>(*value)
            .map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Reads a tensor of any rank written by [`write_tensor`].
pub fn read_tensor(path: &Path) -> Result<ArrayD<f32>, TensorIoError> {
    let file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| io_err(path, e))?;
    if &magic != TENSOR_MAGIC {
        return Err(TensorIoError::BadMagic {
            path: path.display().to_string(),
        });
    }
    let version = r.read_u16::<LittleEndian>().map_err(|e| io_err(path, e))?;
    if version != TENSOR_VERSION {
        return Err(TensorIoError::UnsupportedVersion {
            path: path.display().to_string(),
            found: version,
        });
    }
    let rank = r.read_u16::<LittleEndian>().map_err(|e| io_err(path, e))? as usize;
    if rank == 0 || rank > 8 {
        return Err(TensorIoError::BadHeader {
            path: path.display().to_string(),
            reason: format!("rank {rank} out of range"),
        });
    }
    let mut dims = Vec::with_capacity(rank);
    let mut len = 1usize;
    for _ in 0..rank {
        let d = r.read_u32::<LittleEndian>().map_err(|e| io_err(path, e))? as usize;
        if d == 0 {
            return Err(TensorIoError::BadHeader {
                path: path.display().to_string(),
                reason: "zero dimension".into(),
            });
        }
        len = len.checked_mul(d).ok_or_else(|| TensorIoError::BadHeader {
            path: path.display().to_string(),
            reason: "dimension overflow".into(),
        })?;
        dims.push(d);
    }
    let mut values = Vec::with_capacity(len);
    for _ in 0..len {
        values.push(r.read_f32::<LittleEndian>().map_err(|e| io_err(path, e))?);
    }
    Ok(ArrayD::from_shape_vec(IxDyn(&dims), values).expect("shape matches payload"))
}

pub fn write_array3(path: &Path, tensor: &Array3<f32>) -> Result<(), TensorIoError> {
    write_tensor(path, &tensor.clone().into_dyn())
}

pub fn read_array3(path: &Path) -> Result<Array3<f32>, TensorIoError> {
    let dynamic = read_tensor(path)?;
    let found = dynamic.ndim();
    dynamic
        .into_dimensionality()
        .map_err(|_| TensorIoError::RankMismatch { expected: 3, found })
}

pub fn write_array4(path: &Path, tensor: &Array4<f32>) -> Result<(), TensorIoError> {
    write_tensor(path, &tensor.clone().into_dyn())
}

pub fn read_array4(path: &Path) -> Result<Array4<f32>, TensorIoError> {
    let dynamic = read_tensor(path)?;
    let found = dynamic.ndim();
    dynamic
        .into_dimensionality()
        .map_err(|_| TensorIoError::RankMismatch { expected: 4, found })
}
