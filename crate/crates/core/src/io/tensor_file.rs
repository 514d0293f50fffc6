use std::path::Path;

use crate::error::{contract, Error, Result};
use crate::numerics::Tensor;

pub const TENSOR_MAGIC: [u8; 4] = *b"DDTF";
pub const TENSOR_VERSION: u32 = 1;

/// Little-endian cursor over a byte slice.
pub(crate) struct Reader<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
    pub what: &'static str,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8], what: &'static str) -> Self {
        Self { bytes, pos: 0, what }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| Error::Truncated {
            what: self.what,
            detail: format!("needed {n} bytes at offset {}, {} available", self.pos, self.bytes.len() - self.pos),
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn magic(&mut self, expected: [u8; 4]) -> Result<()> {
        let found: [u8; 4] = self.take(4)?.try_into().expect("4 bytes");
        if found != expected {
            return Err(Error::BadMagic {
                what: self.what,
                expected,
                found,
            });
        }
        Ok(())
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn version(&mut self, expected: u32) -> Result<()> {
        let found = self.u32()?;
        if found != expected {
            return Err(Error::VersionMismatch {
                what: self.what,
                expected,
                found,
            });
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<()> {
        contract!(
            self.pos == self.bytes.len(),
            "{} has {} trailing bytes",
            self.what,
            self.bytes.len() - self.pos
        );
        Ok(())
    }
}

/// Appends the DDTF encoding of `t`.
pub fn encode_tensor_into(t: &Tensor, out: &mut Vec<u8>) {
    out.extend_from_slice(&TENSOR_MAGIC);
    out.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * t.rank() + 4 * t.len());
    encode_tensor_into(t, &mut out);
    out
}

pub(crate) fn read_tensor_from(r: &mut Reader<'_>) -> Result<Tensor> {
    r.magic(TENSOR_MAGIC)?;
    r.version(TENSOR_VERSION)?;
    let rank = r.u32()? as usize;
    let mut shape = Vec::with_capacity(rank.min(16));
    for _ in 0..rank {
        shape.push(r.u32()? as usize);
    }
    let count = shape
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| Error::Contract(format!("tensor shape {shape:?} overflows")))?;
    let payload = r.take(count.checked_mul(4).ok_or_else(|| Error::Contract("tensor too large".into()))?)?;
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect();
    Tensor::new(&shape, data)
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    let mut r = Reader::new(bytes, "tensor file");
    let t = read_tensor_from(&mut r)?;
    r.finish()?;
    Ok(t)
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    write_bytes(path.as_ref(), &encode_tensor(t))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    decode_tensor(&read_bytes(path.as_ref())?)
}
