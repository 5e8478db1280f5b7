//! `AGRP` ROI pack: a flat little-endian container of 64×64 ROI records.
//!
//! ```text
//! "AGRP" | version u32 | count u32 | record*
//! record = id str | patient str | class u8 | diameter f32
//!        | tag u8 (0 real, 1 augmented, 2 synthetic)
//!        | [parent str] (tag 1) | [model str, seed u64] (tag 2)
//!        | 4096 × f32 pixels
//! str    = length u32 | UTF-8 bytes
//! ```

use std::path::Path;

use byteorder::{ByteOrder, LittleEndian, WriteBytesExt};

use super::{LesionClass, Provenance, RoiImage, ROI_PIXELS};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"AGRP";
pub const VERSION: u32 = 1;
const MAX_STR: usize = 4096;

pub fn encode(rois: &[RoiImage]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(12 + rois.len() * (ROI_PIXELS * 4 + 64));
    out.extend_from_slice(MAGIC);
    out.write_u32::<LittleEndian>(VERSION)?;
    out.write_u32::<LittleEndian>(rois.len() as u32)?;
    for r in rois {
        r.validate()?;
        put_str(&mut out, &r.id)?;
        put_str(&mut out, &r.patient_id)?;
        out.push(r.class.code());
        out.write_f32::<LittleEndian>(r.diameter_mm)?;
        match &r.provenance {
            Provenance::Real => out.push(0),
            Provenance::Augmented { parent } => {
                out.push(1);
                put_str(&mut out, parent)?;
            }
            Provenance::Synthetic { model, seed } => {
                out.push(2);
                put_str(&mut out, model)?;
                out.write_u64::<LittleEndian>(*seed)?;
            }
        }
        for &p in &r.pixels {
            out.write_f32::<LittleEndian>(p)?;
        }
    }
    Ok(out)
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    if s.len() > MAX_STR {
        return Err(crate::error::param(format!("string of {} bytes exceeds {MAX_STR}", s.len())));
    }
    out.write_u32::<LittleEndian>(s.len() as u32)?;
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, detail: impl Into<String>) -> Error {
        Error::Format { offset: self.pos, detail: detail.into() }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.err(format!("truncated {what}: need {n} bytes, {} left", self.buf.len() - self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(LittleEndian::read_u32(self.take(4, what)?))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let at = self.pos;
        let len = self.u32(what)? as usize;
        if len > MAX_STR {
            return Err(Error::Format { offset: at, detail: format!("{what} length {len} exceeds {MAX_STR}") });
        }
        let bytes = self.take(len, what)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| Error::Format { offset: at + 4, detail: format!("{what} is not UTF-8") })
    }
}

/// Parses a whole pack; any defect fails the entire read.
pub fn decode(buf: &[u8]) -> Result<Vec<RoiImage>> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Format { offset: 0, detail: "bad magic, expected AGRP".into() });
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Format { offset: 4, detail: format!("unsupported version {version}") });
    }
    let count = r.u32("record count")? as usize;
    let mut rois = Vec::new();
    for i in 0..count {
        let start = r.pos;
        let id = r.string("id")?;
        let patient_id = r.string("patient id")?;
        let code_at = r.pos;
        let class = LesionClass::from_code(r.u8("class")?)
            .ok_or_else(|| Error::Format { offset: code_at, detail: "class code out of range".into() })?;
        let diameter_mm = LittleEndian::read_f32(r.take(4, "diameter")?);
        let tag_at = r.pos;
        let provenance = match r.u8("provenance tag")? {
            0 => Provenance::Real,
            1 => Provenance::Augmented { parent: r.string("parent id")? },
            2 => {
                let model = r.string("model id")?;
                let seed = LittleEndian::read_u64(r.take(8, "seed")?);
                Provenance::Synthetic { model, seed }
            }
            t => return Err(Error::Format { offset: tag_at, detail: format!("unknown provenance tag {t}") }),
        };
        let raw = r.take(ROI_PIXELS * 4, "pixels")?;
        let mut pixels = vec![0f32; ROI_PIXELS];
        LittleEndian::read_f32_into(raw, &mut pixels);
        let roi = RoiImage { id, patient_id, class, diameter_mm, pixels, provenance };
        roi.validate()
            .map_err(|e| Error::Format { offset: start, detail: format!("record {i}: {e}") })?;
        rois.push(roi);
    }
    if r.pos != buf.len() {
        return Err(r.err(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    Ok(rois)
}

pub fn write_file(path: &Path, rois: &[RoiImage]) -> Result<()> {
    std::fs::write(path, encode(rois)?)?;
    Ok(())
}

pub fn read_file(path: &Path) -> Result<Vec<RoiImage>> {
    decode(&std::fs::read(path)?)
}
