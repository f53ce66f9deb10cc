//! NCG binary sequence format.
//!
//! Little-endian layout:
//!
//! ```text
//! bytes 0-3   magic "NCG1"
//! u32         version = 1
//! u32         T (frame count)
//! u32         H (rows)
//! u32         W (columns)
//! u32         dt_seconds
//! T*H*W f32   values, time-major, row-major within a frame
//! ```
//!
//! The header is exactly 24 bytes. The format carries cadence but no absolute
//! epoch, so `read_sequence` assigns timestamps 0, dt, 2*dt, ...

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{GridFrame, Sequence};
use crate::error::{Error, Result};

pub const NCG_HEADER_BYTES: usize = 24;
const MAGIC: &[u8; 4] = b"NCG1";
const VERSION: u32 = 1;

/// Reads an NCG file. Frames are validated on ingest: NaN or negative values
/// are rejected with the offending frame index.
pub fn read_sequence(path: &Path) -> Result<Sequence> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}

/// Writes a validated sequence as NCG bytes. Values are stored as f32; the
/// in-memory f64 values must already be exactly representable when they came
/// from an NCG file, so read-write round trips are byte identical.
pub fn write_sequence(seq: &Sequence, path: &Path) -> Result<()> {
    let bytes = encode(seq)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub(crate) fn decode(bytes: &[u8]) -> Result<Sequence> {
    if bytes.len() < NCG_HEADER_BYTES {
        return Err(Error::Length(format!(
            "file is {} bytes, shorter than the {}-byte header",
            bytes.len(),
            NCG_HEADER_BYTES
        )));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            &bytes[0..4],
            MAGIC
        )));
    }
    let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {}", version)));
    }
    let t = u32_at(8) as usize;
    let h = u32_at(12) as usize;
    let w = u32_at(16) as usize;
    let dt = u32_at(20);
    if t == 0 || h == 0 || w == 0 {
        return Err(Error::Format(format!(
            "degenerate dimensions T={} H={} W={}",
            t, h, w
        )));
    }
    if dt == 0 {
        return Err(Error::Format("dt_seconds must be positive".into()));
    }
    let payload = t
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| {
            Error::Format(format!("dimensions T={} H={} W={} overflow", t, h, w))
        })?;
    let want = NCG_HEADER_BYTES + payload;
    if bytes.len() != want {
        return Err(Error::Length(format!(
            "header promises {} payload bytes ({} frames), file has {}",
            want - NCG_HEADER_BYTES,
            t,
            bytes.len() - NCG_HEADER_BYTES
        )));
    }
    let mut frames = Vec::with_capacity(t);
    let mut off = NCG_HEADER_BYTES;
    for fi in 0..t {
        let mut values = Vec::with_capacity(h * w);
        for _ in 0..h * w {
            let v = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
            off += 4;
            values.push(v as f64);
        }
        let frame = GridFrame::new(values, h, w, fi as i64 * dt as i64)
            .map_err(|e| Error::Data(format!("frame {}: {}", fi, e)))?;
        frames.push(frame);
    }
    Sequence::new(frames, dt)
}

pub(crate) fn encode(seq: &Sequence) -> Result<Vec<u8>> {
    // Sequence invariants (shared grid, dt-spaced timestamps, valid rates)
    // hold by construction, so no byte can be produced for an invalid run.
    let (t, h, w) = (seq.len(), seq.height(), seq.width());
    let mut out = Vec::with_capacity(NCG_HEADER_BYTES + t * h * w * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(t as u32).to_le_bytes());
    out.extend_from_slice(&(h as u32).to_le_bytes());
    out.extend_from_slice(&(w as u32).to_le_bytes());
    out.extend_from_slice(&seq.dt_seconds.to_le_bytes());
    for frame in seq.frames() {
        for &v in frame.values() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}
