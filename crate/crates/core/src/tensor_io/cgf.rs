//! CGF1 tensor container.
//!
//! Layout (little-endian):
//! - magic: `b"CGF1"`
//! - rank: u32
//! - dims: rank * u64
//! - payload: prod(dims) * f32, row-major

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CGF1";

/// A dense row-major f32 tensor as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl TensorFile {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::Shape("tensor rank must be at least 1".into()));
        }
        if dims.contains(&0) {
            return Err(Error::Shape(format!("zero-sized dimension in {dims:?}")));
        }
        let numel: usize = dims.iter().product();
        if numel != data.len() {
            return Err(Error::Shape(format!(
                "dims {dims:?} need {numel} values, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        let n = dims.iter().product();
        Self::new(dims, vec![0.0; n])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_parts(self) -> (Vec<usize>, Vec<f32>) {
        (self.dims, self.data)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 8 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_reader<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Format("file too short for CGF1 magic".into()))?;
        if &magic != MAGIC {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected CGF1",
                String::from_utf8_lossy(&magic)
            )));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)
            .map_err(|_| Error::Corruption("truncated rank".into()))?;
        let rank = u32::from_le_bytes(b4) as usize;
        if rank == 0 {
            return Err(Error::Format("rank 0 tensor".into()));
        }
        let mut dims = Vec::with_capacity(rank);
        let mut b8 = [0u8; 8];
        for _ in 0..rank {
            r.read_exact(&mut b8)
                .map_err(|_| Error::Corruption("truncated dims".into()))?;
            let d = u64::from_le_bytes(b8);
            if d == 0 {
                return Err(Error::Format("zero-sized dimension".into()));
            }
            dims.push(usize::try_from(d).map_err(|_| Error::Format("dimension overflow".into()))?);
        }
        let numel = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format("element count overflow".into()))?;
        let nbytes = numel
            .checked_mul(4)
            .ok_or_else(|| Error::Format("payload size overflow".into()))?;
        let mut payload = Vec::new();
        r.take(nbytes as u64)
            .read_to_end(&mut payload)
            .map_err(|e| Error::Corruption(format!("payload read failed: {e}")))?;
        if payload.len() != nbytes {
            return Err(Error::Corruption(format!(
                "payload has {} bytes, expected {nbytes}",
                payload.len()
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Self { dims, data })
    }
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<TensorFile> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    TensorFile::from_reader(BufReader::new(f))
}

pub fn write_tensor(path: impl AsRef<Path>, tensor: &TensorFile) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    w.write_all(&tensor.to_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}
