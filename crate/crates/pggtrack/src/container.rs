//! Little-endian tensor container.
//!
//! Layout: `PGGT`, version (u32), entry count (u32), then per entry the name
//! length (u16), UTF-8 name, dtype code (u8), rank (u8), dims (u32 each) and
//! the row-major payload.

use std::collections::HashSet;
use std::path::Path;

use crate::atomic::write_atomic;
use crate::error::{CliError, FormatError};

pub const MAGIC: [u8; 4] = *b"PGGT";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32 = 0,
    U8 = 1,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::U8 => 1,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::U8),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub enum TensorData {
    F32(Vec<f32>),
    U8(Vec<u8>),
}

impl TensorData {
    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::U8(_) => DType::U8,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Bitwise equality, so NaN payloads compare equal to themselves.
impl PartialEq for TensorData {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (TensorData::F32(a), TensorData::F32(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            (TensorData::U8(a), TensorData::U8(b)) => a == b,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub dims: Vec<u32>,
    pub data: TensorData,
}

impl Tensor {
    pub fn f32(name: impl Into<String>, dims: Vec<u32>, values: Vec<f32>) -> Self {
        Tensor {
            name: name.into(),
            dims,
            data: TensorData::F32(values),
        }
    }

    pub fn u8(name: impl Into<String>, dims: Vec<u32>, values: Vec<u8>) -> Self {
        Tensor {
            name: name.into(),
            dims,
            data: TensorData::U8(values),
        }
    }

    pub fn element_count(&self) -> Option<usize> {
        self.dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.data {
            TensorData::F32(v) => Some(v),
            TensorData::U8(_) => None,
        }
    }
}

/// Serializes `tensors`, checking the invariants the reader relies on.
pub fn encode(tensors: &[Tensor]) -> Result<Vec<u8>, CliError> {
    let mut names = HashSet::new();
    let mut out = Vec::with_capacity(HEADER_LEN);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let count = u32::try_from(tensors.len()).map_err(|_| CliError::invalid("too many tensors"))?;
    out.extend_from_slice(&count.to_le_bytes());
    for t in tensors {
        if !names.insert(t.name.as_str()) {
            return Err(CliError::invalid(format!("duplicate tensor name {:?}", t.name)));
        }
        let name_len = u16::try_from(t.name.len()).map_err(|_| CliError::invalid("tensor name too long"))?;
        let rank = u8::try_from(t.dims.len()).map_err(|_| CliError::invalid("tensor rank above 255"))?;
        if t.element_count() != Some(t.data.len()) {
            return Err(CliError::invalid(format!("tensor {:?}: payload does not match its dims", t.name)));
        }
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.push(t.data.dtype() as u8);
        out.push(rank);
        for d in &t.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        match &t.data {
            TensorData::F32(v) => {
                out.reserve(4 * v.len());
                for x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
            TensorData::U8(v) => out.extend_from_slice(v),
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(FormatError::new(self.pos, format!("truncated {what}"))),
        }
    }

    fn u8(&mut self, what: &str) -> Result<u8, FormatError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Parses a container. Errors carry the byte offset where parsing failed.
pub fn decode(buf: &[u8]) -> Result<Vec<Tensor>, FormatError> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(FormatError::new(0, "bad magic"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(FormatError::new(4, format!("unsupported version {version}")));
    }
    let count = r.u32("entry count")?;
    let mut names = HashSet::new();
    let mut tensors = Vec::new();
    for _ in 0..count {
        let name_at = r.pos;
        let len = r.u16("name length")? as usize;
        let name_bytes = r.take(len, "name")?;
        let name = std::str::from_utf8(name_bytes)
            .map_err(|_| FormatError::new(name_at + 2, "name is not UTF-8"))?
            .to_string();
        if !names.insert(name.clone()) {
            return Err(FormatError::new(name_at, format!("duplicate tensor name {name:?}")));
        }
        let dtype_at = r.pos;
        let dtype = DType::from_code(r.u8("dtype")?)
            .ok_or_else(|| FormatError::new(dtype_at, "unknown dtype code"))?;
        let rank = r.u8("rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32("dims")?);
        }
        let payload_at = r.pos;
        let bytes = dims
            .iter()
            .try_fold(dtype.size(), |acc, &d| acc.checked_mul(d as usize))
            .ok_or_else(|| FormatError::new(payload_at, "payload size overflows"))?;
        let payload = r.take(bytes, "payload")?;
        let data = match dtype {
            DType::F32 => TensorData::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::U8 => TensorData::U8(payload.to_vec()),
        };
        tensors.push(Tensor { name, dims, data });
    }
    if r.pos != buf.len() {
        return Err(FormatError::new(r.pos, "trailing bytes after the last entry"));
    }
    Ok(tensors)
}

pub fn write_container(path: &Path, tensors: &[Tensor]) -> Result<(), CliError> {
    write_atomic(path, &encode(tensors)?)
}

pub fn read_container(path: &Path) -> Result<Vec<Tensor>, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode(&bytes).map_err(|e| CliError::Format {
        path: Some(path.to_path_buf()),
        source: e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_container_is_header_only() {
        let bytes = encode(&[]).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN);
        assert_eq!(&bytes[..4], b"PGGT");
        assert_eq!(decode(&bytes).unwrap(), vec![]);
    }

    #[test]
    fn small_tensor_round_trips() {
        let t = vec![
            Tensor::f32("w", vec![2, 2], vec![1.0, -0.0, f32::NAN, f32::MIN_POSITIVE]),
            Tensor::u8("m", vec![3], vec![0, 1, 255]),
        ];
        let bytes = encode(&t).unwrap();
        // header + (2 + 1 + 2 + 8 + 16) + (2 + 1 + 2 + 4 + 3)
        assert_eq!(bytes.len(), 12 + 29 + 12);
        assert_eq!(decode(&bytes).unwrap(), t);
    }

    #[test]
    fn header_errors_name_the_offset() {
        let mut bytes = encode(&[Tensor::u8("a", vec![1], vec![7])]).unwrap();
        assert_eq!(decode(&bytes[..3]).unwrap_err().offset, 0);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert_eq!(decode(&bad).unwrap_err().offset, 0);
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert_eq!(decode(&bad).unwrap_err().offset, 4);
        assert_eq!(decode(&bytes[..bytes.len() - 1]).unwrap_err().offset, bytes.len() - 1);
        // dtype byte sits after the 2-byte length and the 1-byte name
        bytes[12 + 3] = 7;
        assert_eq!(decode(&bytes).unwrap_err().offset, 15);
    }

    #[test]
    fn rejects_duplicates_and_bad_payloads() {
        let dup = [Tensor::u8("a", vec![1], vec![1]), Tensor::u8("a", vec![1], vec![2])];
        assert!(encode(&dup).is_err());
        assert!(encode(&[Tensor::u8("a", vec![2], vec![1])]).is_err());
        let mut bytes = encode(&[Tensor::u8("a", vec![1], vec![1])]).unwrap();
        bytes.push(0);
        assert_eq!(decode(&bytes).unwrap_err().offset, bytes.len() - 1);
    }
}
