//! Reader for the big-endian IDX files MNIST-style datasets ship in.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// An IDX array of unsigned bytes.
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

pub fn read_idx(path: &Path) -> Result<IdxArray> {
    let bytes = fs::read(path).map_err(|e| Error::Ingestion {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    parse_idx(&bytes).map_err(|reason| Error::Ingestion { path: path.to_path_buf(), reason })
}

pub fn parse_idx(bytes: &[u8]) -> std::result::Result<IdxArray, String> {
    if bytes.len() < 4 {
        return Err("file shorter than the IDX magic".into());
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err("bad IDX magic".into());
    }
    if bytes[2] != 0x08 {
        return Err(format!("unsupported IDX element type 0x{:02x}; expected unsigned bytes", bytes[2]));
    }
    let ndim = bytes[3] as usize;
    let header = 4 + 4 * ndim;
    if bytes.len() < header {
        return Err("truncated IDX header".into());
    }
    let dims: Vec<usize> = (0..ndim)
        .map(|i| u32::from_be_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize)
        .collect();
    let n: usize = dims.iter().product();
    if bytes.len() != header + n {
        return Err(format!("IDX body has {} bytes, dims {:?} need {}", bytes.len() - header, dims, n));
    }
    Ok(IdxArray { dims, data: bytes[header..].to_vec() })
}
