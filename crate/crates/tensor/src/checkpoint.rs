//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian `u32`):
//!
//! ```text
//! "AGFP" | version | record count
//! per record: name length | UTF-8 name | rank | dims… | f32 payload (LE)
//! ```

use std::io::Write;
use std::path::Path;

use byteorder::{LittleEndian, WriteBytesExt};

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"AGFP";
pub const VERSION: u32 = 1;
const MAX_RANK: usize = 8;

/// A named parameter or buffer tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor<f32>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, tensor: Tensor<f32>) -> Self {
        NamedTensor { name: name.into(), tensor }
    }
}

pub fn encode(records: &[NamedTensor]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.write_u32::<LittleEndian>(VERSION).expect("vec write");
    out.write_u32::<LittleEndian>(records.len() as u32).expect("vec write");
    for r in records {
        out.write_u32::<LittleEndian>(r.name.len() as u32).expect("vec write");
        out.extend_from_slice(r.name.as_bytes());
        out.write_u32::<LittleEndian>(r.tensor.rank() as u32).expect("vec write");
        for &d in r.tensor.shape() {
            out.write_u32::<LittleEndian>(d as u32).expect("vec write");
        }
        for &v in r.tensor.data() {
            out.write_f32::<LittleEndian>(v).expect("vec write");
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, detail: impl Into<String>) -> TensorError {
        TensorError::Format { offset: self.pos, detail: detail.into() }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.err(format!("truncated {what}: need {n} bytes, {} left", self.buf.len() - self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode(buf: &[u8]) -> Result<Vec<NamedTensor>> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(TensorError::Format { offset: 0, detail: "bad magic, expected \"AGFP\"".into() });
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(TensorError::Format { offset: 4, detail: format!("unsupported version {version}") });
    }
    let count = c.u32("record count")? as usize;
    let mut records = Vec::new();
    for _ in 0..count {
        let name_len = c.u32("name length")? as usize;
        let start = c.pos;
        let name = std::str::from_utf8(c.take(name_len, "name")?)
            .map_err(|_| TensorError::Format { offset: start, detail: "name is not UTF-8".into() })?
            .to_owned();
        let rank = c.u32("rank")? as usize;
        if rank == 0 || rank > MAX_RANK {
            return Err(c.err(format!("rank {rank} outside 1..={MAX_RANK}")));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut n: usize = 1;
        for _ in 0..rank {
            let d = c.u32("dimension")? as usize;
            if d == 0 {
                return Err(c.err("zero-sized dimension"));
            }
            n = n.checked_mul(d).ok_or_else(|| c.err("element count overflows"))?;
            shape.push(d);
        }
        let bytes = n.checked_mul(4).ok_or_else(|| c.err("payload size overflows"))?;
        let payload = c.take(bytes, "payload")?;
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        records.push(NamedTensor { name, tensor: Tensor::new(&shape, data)? });
    }
    if c.pos != buf.len() {
        return Err(c.err(format!("{} trailing bytes", buf.len() - c.pos)));
    }
    Ok(records)
}

pub fn write_file(path: &Path, records: &[NamedTensor]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode(records))?;
    Ok(())
}

pub fn read_file(path: &Path) -> Result<Vec<NamedTensor>> {
    decode(&std::fs::read(path)?)
}
