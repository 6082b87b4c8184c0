//! Binary array-block format shared by parameter checkpoints and datasets.
//!
//! Layout: 8-byte magic, then for each array a u64 rank, the u64 dimensions,
//! and the f64 values, all little endian. Arrays run until end of input.

use super::DenseArray;
use crate::error::{Error, Result};

pub const PARAM_MAGIC: &[u8; 8] = b"METALNN1";

pub fn write_array_block(out: &mut Vec<u8>, magic: &[u8; 8], arrays: &[&DenseArray]) {
    out.extend_from_slice(magic);
    for a in arrays {
        out.extend_from_slice(&(a.rank() as u64).to_le_bytes());
        for &d in a.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in a.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

pub fn read_array_block(bytes: &[u8], magic: &[u8; 8]) -> Result<Vec<DenseArray>> {
    let mut cur = Cursor::new(bytes);
    let got = cur.take(8)?;
    if got != magic {
        return Err(Error::Format(format!(
            "bad magic: expected {:?}, got {:?}",
            String::from_utf8_lossy(magic),
            String::from_utf8_lossy(got)
        )));
    }
    let mut arrays = Vec::new();
    while !cur.done() {
        let rank = cur.u64()? as usize;
        if rank > 8 {
            return Err(Error::Format(format!("implausible array rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u64()? as usize);
        }
        let len: usize = shape.iter().product();
        if len > bytes.len() {
            return Err(Error::Format(format!(
                "array of shape {shape:?} larger than remaining input"
            )));
        }
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(cur.f64()?);
        }
        arrays.push(DenseArray::from_vec(&shape, data).expect("length matches shape"));
    }
    Ok(arrays)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn done(&self) -> bool {
        self.pos >= self.bytes.len()
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format(format!(
                "truncated input: needed {n} bytes at offset {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
