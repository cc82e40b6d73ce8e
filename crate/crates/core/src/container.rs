//! Little-endian binary containers for tensors and archives of tensors.
//!
//! Tensor layout (`.vctn`):
//!
//! ```text
//! offset  size       field
//! 0       4          magic  b"VCTN"
//! 4       2          format version, u16 LE (currently 1)
//! 6       1          dtype: 0 = f32, 1 = f64, 2 = u8
//! 7       1          ndim
//! 8       8 * ndim   shape, u64 LE each
//! ...     numel * w  body, row-major, LE
//! ```
//!
//! Archive layout (`.vckp`, used for checkpoints and fitted statistics):
//!
//! ```text
//! 0       4          magic  b"VCKP"
//! 4       2          format version, u16 LE (currently 1)
//! 6       8          header length in bytes, u64 LE
//! 14      n          UTF-8 JSON header; `tensors` lists entry names in order
//! ...                one tensor record (layout above) per entry
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"VCTN";
pub const ARCHIVE_MAGIC: &[u8; 4] = b"VCKP";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DType {
    F32,
    F64,
    U8,
}

impl DType {
    fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
            DType::U8 => 2,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(DType::F32),
            1 => Ok(DType::F64),
            2 => Ok(DType::U8),
            other => Err(Error::Format(format!("unknown dtype code {other}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
}

/// A dense row-major tensor as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: TensorData,
}

impl Tensor {
    pub fn f32(shape: Vec<usize>, data: Vec<f32>) -> Self {
        Self { shape, data: TensorData::F32(data) }
    }

    pub fn f64(shape: Vec<usize>, data: Vec<f64>) -> Self {
        Self { shape, data: TensorData::F64(data) }
    }

    pub fn dtype(&self) -> DType {
        match self.data {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
            TensorData::U8(_) => DType::U8,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    fn len(&self) -> usize {
        match &self.data {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::U8(v) => v.len(),
        }
    }

    /// Values widened to `f64`, whatever the stored dtype.
    pub fn to_f64_vec(&self) -> Vec<f64> {
        match &self.data {
            TensorData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            TensorData::F64(v) => v.clone(),
            TensorData::U8(v) => v.iter().map(|&x| x as f64).collect(),
        }
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        if self.len() != self.numel() {
            return Err(Error::Format(format!(
                "tensor body has {} elements but shape {:?} needs {}",
                self.len(),
                self.shape,
                self.numel()
            )));
        }
        let ndim = u8::try_from(self.shape.len())
            .map_err(|_| Error::Format("tensor rank exceeds 255".into()))?;
        w.write_all(TENSOR_MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&[self.dtype().code(), ndim])?;
        for &d in &self.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        match &self.data {
            TensorData::F32(v) => {
                for x in v {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
            TensorData::F64(v) => {
                for x in v {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
            TensorData::U8(v) => w.write_all(v)?,
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != TENSOR_MAGIC {
            return Err(Error::Format(format!("bad tensor magic {magic:?}")));
        }
        let version = read_u16(r)?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported tensor version {version}")));
        }
        let mut b = [0u8; 2];
        r.read_exact(&mut b)?;
        let dtype = DType::from_code(b[0])?;
        let ndim = b[1] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u64(r)? as usize);
        }
        let numel: usize = shape.iter().product();
        let data = match dtype {
            DType::F32 => {
                let mut bytes = vec![0u8; numel * 4];
                r.read_exact(&mut bytes)?;
                TensorData::F32(
                    bytes
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                )
            }
            DType::F64 => {
                let mut bytes = vec![0u8; numel * 8];
                r.read_exact(&mut bytes)?;
                TensorData::F64(
                    bytes
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                )
            }
            DType::U8 => {
                let mut bytes = vec![0u8; numel];
                r.read_exact(&mut bytes)?;
                TensorData::U8(bytes)
            }
        };
        Ok(Self { shape, data })
    }
}

fn read_u16<R: Read>(r: &mut R) -> Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn save_tensor(path: &Path, tensor: &Tensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    tensor.write_to(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_tensor(path: &Path) -> Result<Tensor> {
    let mut r = BufReader::new(File::open(path)?);
    Tensor::read_from(&mut r)
}

/// Writes an archive whose JSON header gains a `tensors` array naming each
/// entry in order.
pub fn save_archive(
    path: &Path,
    header: serde_json::Value,
    tensors: &[(String, Tensor)],
) -> Result<()> {
    let mut header = header;
    let names: Vec<&str> = tensors.iter().map(|(n, _)| n.as_str()).collect();
    match header.as_object_mut() {
        Some(obj) => {
            obj.insert("tensors".into(), serde_json::json!(names));
        }
        None => return Err(Error::Format("archive header must be a JSON object".into())),
    }
    let bytes = serde_json::to_vec(&header)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(ARCHIVE_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(bytes.len() as u64).to_le_bytes())?;
    w.write_all(&bytes)?;
    for (_, t) in tensors {
        t.write_to(&mut w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_archive(path: &Path) -> Result<(serde_json::Value, Vec<(String, Tensor)>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != ARCHIVE_MAGIC {
        return Err(Error::Format(format!("bad archive magic {magic:?}")));
    }
    let version = read_u16(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported archive version {version}")));
    }
    let len = read_u64(&mut r)? as usize;
    let mut bytes = vec![0u8; len];
    r.read_exact(&mut bytes)?;
    let header: serde_json::Value = serde_json::from_slice(&bytes)?;
    let names: Vec<String> = header
        .get("tensors")
        .and_then(|v| serde_json::from_value(v.clone()).ok())
        .ok_or_else(|| Error::Format("archive header lacks a `tensors` list".into()))?;
    let mut out = Vec::with_capacity(names.len());
    for name in names {
        let t = Tensor::read_from(&mut r)?;
        out.push((name, t));
    }
    Ok((header, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_bytes_are_little_endian() {
        let t = Tensor::f32(vec![2, 1], vec![1.0, -2.0]);
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        assert_eq!(&buf[0..4], b"VCTN");
        assert_eq!(&buf[4..6], &[1, 0]);
        assert_eq!(buf[6], 0);
        assert_eq!(buf[7], 2);
        assert_eq!(&buf[8..16], &2u64.to_le_bytes());
        assert_eq!(&buf[16..24], &1u64.to_le_bytes());
        assert_eq!(&buf[24..28], &1.0f32.to_le_bytes());
        assert_eq!(buf.len(), 32);
        let back = Tensor::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn rejects_wrong_magic_and_short_body() {
        let mut bad = b"XXXX".to_vec();
        bad.extend_from_slice(&[1, 0, 0, 0]);
        assert!(Tensor::read_from(&mut bad.as_slice()).is_err());

        let t = Tensor::f32(vec![3], vec![1.0, 2.0]);
        assert!(t.write_to(&mut Vec::new()).is_err());
    }

    #[test]
    fn archive_keeps_entry_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.vckp");
        let tensors = vec![
            ("b".to_string(), Tensor::f64(vec![1], vec![3.5])),
            ("a".to_string(), Tensor::f32(vec![2], vec![1.0, 2.0])),
        ];
        save_archive(&path, serde_json::json!({"kind": "test"}), &tensors).unwrap();
        let (header, back) = load_archive(&path).unwrap();
        assert_eq!(header["kind"], "test");
        assert_eq!(back, tensors);
    }
}
