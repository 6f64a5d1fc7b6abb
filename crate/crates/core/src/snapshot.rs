//! Binary snapshot files.
//!
//! A field record is a 28-byte little-endian header
//! `{ magic "AFWL", version: u32, n: u32, dx: f64, t: f64 }` followed by `n^3`
//! little-endian `f64` values in row-major order. A state file holds two
//! records (`u` then `u_t`) and ends with a CRC-32 of every preceding byte.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{Grid3, ScalarField, StateSlice};

pub const MAGIC: &[u8; 4] = b"AFWL";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 8 + 8;

pub fn encode_field(f: &ScalarField, t: f64, out: &mut Vec<u8>) {
    let g = f.grid();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(g.n() as u32).to_le_bytes());
    out.extend_from_slice(&g.dx().to_le_bytes());
    out.extend_from_slice(&t.to_le_bytes());
    out.reserve(8 * f.values().len());
    for v in f.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Decode one field record starting at `bytes[0]`; returns the field, its
/// time stamp and the number of bytes consumed.
pub fn decode_field(bytes: &[u8]) -> Result<(ScalarField, f64, usize)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format("truncated header".into()));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let dx = f64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let t = f64::from_le_bytes(bytes[20..28].try_into().unwrap());
    let grid = Grid3::new(n, dx)?;
    let need = HEADER_LEN + 8 * grid.len();
    if bytes.len() < need {
        return Err(Error::Format("truncated payload".into()));
    }
    let values = bytes[HEADER_LEN..need]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((ScalarField::from_values(grid, values)?, t, need))
}

pub fn encode_state(s: &StateSlice) -> Vec<u8> {
    let mut out = Vec::with_capacity(2 * (HEADER_LEN + 8 * s.grid().len()) + 4);
    encode_field(&s.u, s.t, &mut out);
    encode_field(&s.ut, s.t, &mut out);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn decode_state(bytes: &[u8]) -> Result<StateSlice> {
    if bytes.len() < 4 {
        return Err(Error::Format("file too short".into()));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(Error::ChecksumMismatch {
            path: Default::default(),
        });
    }
    let (u, t, used) = decode_field(body)?;
    let (ut, t2, used2) = decode_field(&body[used..])?;
    if used + used2 != body.len() {
        return Err(Error::Format("trailing bytes after state records".into()));
    }
    if t.to_bits() != t2.to_bits() {
        return Err(Error::Format("u and u_t records carry different times".into()));
    }
    StateSlice::new(u, ut, t)
}

pub fn write_state(path: &Path, s: &StateSlice) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_state(s))?;
    Ok(())
}

pub fn read_state(path: &Path) -> Result<StateSlice> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_state(&bytes).map_err(|e| match e {
        Error::ChecksumMismatch { .. } => Error::ChecksumMismatch {
            path: path.to_path_buf(),
        },
        other => other,
    })
}
