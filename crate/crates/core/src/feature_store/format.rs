// SPDX-License-Identifier: MIT OR Apache-2.0

//! HSDS on-disk format (little-endian):
//!
//! ```text
//! "HSDS" | version u32 | header_len u32 | header JSON (header_len bytes)
//! record* : id_len u16 | id UTF-8 | label u8 | n_question u32 | n_answer u32
//!           | (n_question + n_answer) * hidden_dim f32, row-major
//! ```

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{DatasetHeader, HiddenStateRecord};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"HSDS";
pub const FORMAT_VERSION: u32 = 1;

/// Exact byte length `encode_dataset` produces.
pub fn encoded_len(header: &DatasetHeader, records: &[HiddenStateRecord]) -> Result<usize> {
    let header_json = serde_json::to_vec(header)?;
    let body: usize = records
        .iter()
        .map(|r| 2 + r.id.len() + 1 + 4 + 4 + 4 * r.states.len())
        .sum();
    Ok(4 + 4 + 4 + header_json.len() + body)
}

fn check_writable(header: &DatasetHeader, records: &[HiddenStateRecord]) -> Result<()> {
    if header.hidden_dim == 0 {
        return Err(Error::InvalidArgument("hidden_dim must be >= 1".into()));
    }
    if header.record_count != records.len() {
        return Err(Error::InvalidArgument(format!(
            "header record_count {} but {} records supplied",
            header.record_count,
            records.len()
        )));
    }
    for r in records {
        if r.hidden_dim != header.hidden_dim {
            return Err(Error::DimensionMismatch(format!(
                "record {} has hidden_dim {} but header says {}",
                r.id, r.hidden_dim, header.hidden_dim
            )));
        }
        if r.id.len() > u16::MAX as usize {
            return Err(Error::InvalidArgument(format!("record id too long: {}", r.id.len())));
        }
        if r.label > 1 {
            return Err(Error::InvalidArgument(format!("record {}: label {}", r.id, r.label)));
        }
        if r.states.len() != r.n_tokens() * r.hidden_dim {
            return Err(Error::ShapeMismatch(format!("record {}", r.id)));
        }
        if r.states.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("record {}", r.id)));
        }
    }
    Ok(())
}

fn write_to<W: Write>(
    out: &mut W,
    header: &DatasetHeader,
    records: &[HiddenStateRecord],
) -> std::io::Result<()> {
    let header_json = serde_json::to_vec(header).map_err(std::io::Error::other)?;
    out.write_all(&MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&(header_json.len() as u32).to_le_bytes())?;
    out.write_all(&header_json)?;
    for r in records {
        out.write_all(&(r.id.len() as u16).to_le_bytes())?;
        out.write_all(r.id.as_bytes())?;
        out.write_all(&[r.label])?;
        out.write_all(&(r.n_question as u32).to_le_bytes())?;
        out.write_all(&(r.n_answer as u32).to_le_bytes())?;
        for v in &r.states {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn encode_dataset(header: &DatasetHeader, records: &[HiddenStateRecord]) -> Result<Vec<u8>> {
    check_writable(header, records)?;
    let mut buf = Vec::with_capacity(encoded_len(header, records)?);
    write_to(&mut buf, header, records).map_err(|e| Error::io("<memory>", e))?;
    Ok(buf)
}

pub fn write_dataset(
    records: &[HiddenStateRecord],
    header: &DatasetHeader,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    check_writable(header, records)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_to(&mut out, header, records).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<(DatasetHeader, Vec<HiddenStateRecord>)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_dataset(&bytes)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let remaining = self.buf.len() - self.pos;
        if n > remaining {
            return Err(Error::Truncated {
                offset: self.pos,
                needed: n - remaining,
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode_dataset(bytes: &[u8]) -> Result<(DatasetHeader, Vec<HiddenStateRecord>)> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    let magic: [u8; 4] = cur.take(4)?.try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic {
            expected: MAGIC,
            found: magic,
        });
    }
    let version = cur.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let header_len = cur.u32()? as usize;
    let mut header: DatasetHeader = serde_json::from_slice(cur.take(header_len)?)
        .map_err(|e| Error::Corrupt(format!("header json: {e}")))?;
    header.format_version = version;
    if header.hidden_dim == 0 {
        return Err(Error::Corrupt("hidden_dim is 0".into()));
    }
    let d = header.hidden_dim;

    // record_count comes from the file; don't trust it for preallocation.
    let mut records = Vec::with_capacity(header.record_count.min(1 << 16));
    for _ in 0..header.record_count {
        let id_len = cur.u16()? as usize;
        let id = std::str::from_utf8(cur.take(id_len)?)
            .map_err(|_| Error::Corrupt(format!("record id at offset {} is not UTF-8", cur.pos)))?
            .to_owned();
        let label = cur.u8()?;
        if label > 1 {
            return Err(Error::Corrupt(format!("record {id}: label byte {label}")));
        }
        let n_question = cur.u32()? as usize;
        let n_answer = cur.u32()? as usize;
        let n_floats = (n_question + n_answer)
            .checked_mul(d)
            .ok_or_else(|| Error::Corrupt(format!("record {id}: size overflow")))?;
        let raw = cur.take(n_floats.checked_mul(4).ok_or_else(|| {
            Error::Corrupt(format!("record {id}: size overflow"))
        })?)?;
        let states: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if states.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("record {id}")));
        }
        records.push(HiddenStateRecord {
            id,
            label,
            n_question,
            n_answer,
            hidden_dim: d,
            states,
        });
    }
    if cur.pos != bytes.len() {
        return Err(Error::Corrupt(format!(
            "{} trailing bytes after {} records",
            bytes.len() - cur.pos,
            header.record_count
        )));
    }
    Ok((header, records))
}
