//! PTAG binary and CSV encodings of [`TimeTagStream`].
//!
//! PTAG layout, little-endian:
//!
//! ```text
//! 0   "PTAG"
//! 4   version      u16 = 1
//! 6   reserved     u16 = 0
//! 8   tick (fs)    u64
//! 16  records      [channel u8, ticks u64] × n
//! ```

use std::io::{BufRead, Read, Write};

use super::{Channel, TimeTagRecord, TimeTagStream};
use crate::{Error, Result};

pub const PTAG_MAGIC: &[u8; 4] = b"PTAG";
pub const PTAG_VERSION: u16 = 1;
pub const PTAG_HEADER_LEN: usize = 16;
pub const PTAG_RECORD_LEN: usize = 9;

const FS: f64 = 1e-15;

fn tick_fs(tick: f64) -> Result<u64> {
    let fs = (tick / FS).round();
    if !(fs >= 1.0) || fs >= u64::MAX as f64 {
        return Err(Error::argument(format!("tick duration {tick:e} s not representable in femtoseconds")));
    }
    Ok(fs as u64)
}

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format { offset: offset as u64, message: message.into() }
}

pub fn write_ptag<W: Write>(stream: &TimeTagStream, mut w: W) -> Result<()> {
    let mut buf = Vec::with_capacity(PTAG_HEADER_LEN + PTAG_RECORD_LEN * stream.records.len());
    buf.extend_from_slice(PTAG_MAGIC);
    buf.extend_from_slice(&PTAG_VERSION.to_le_bytes());
    buf.extend_from_slice(&0u16.to_le_bytes());
    buf.extend_from_slice(&tick_fs(stream.tick_duration)?.to_le_bytes());
    for r in &stream.records {
        buf.push(r.channel as u8);
        buf.extend_from_slice(&r.ticks.to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

/// Per-channel tick order tracker shared by both readers.
#[derive(Default)]
struct Monotone([u64; 2]);

impl Monotone {
    fn check(&mut self, r: &TimeTagRecord, offset: usize) -> Result<()> {
        let last = &mut self.0[r.channel as usize];
        if r.ticks < *last {
            return Err(format_err(
                offset,
                format!("channel {} tick {} decreases from {}", r.channel as u8, r.ticks, last),
            ));
        }
        *last = r.ticks;
        Ok(())
    }
}

pub fn read_ptag<R: Read>(mut r: R) -> Result<TimeTagStream> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < PTAG_HEADER_LEN {
        return Err(format_err(bytes.len(), "truncated header"));
    }
    if &bytes[0..4] != PTAG_MAGIC {
        return Err(format_err(0, "bad magic, expected \"PTAG\""));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != PTAG_VERSION {
        return Err(format_err(4, format!("unsupported version {version}")));
    }
    if bytes[6] != 0 || bytes[7] != 0 {
        return Err(format_err(6, "reserved header bytes must be zero"));
    }
    let fs = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    if fs == 0 {
        return Err(format_err(8, "tick duration is zero"));
    }
    let body = &bytes[PTAG_HEADER_LEN..];
    let n = body.len() / PTAG_RECORD_LEN;
    if body.len() % PTAG_RECORD_LEN != 0 {
        return Err(format_err(PTAG_HEADER_LEN + n * PTAG_RECORD_LEN, "truncated record"));
    }
    let mut order = Monotone::default();
    let mut records = Vec::with_capacity(n);
    for (k, chunk) in body.chunks_exact(PTAG_RECORD_LEN).enumerate() {
        let offset = PTAG_HEADER_LEN + k * PTAG_RECORD_LEN;
        let channel = Channel::from_u8(chunk[0])
            .ok_or_else(|| format_err(offset, format!("invalid channel {}", chunk[0])))?;
        let ticks = u64::from_le_bytes(chunk[1..].try_into().expect("8 bytes"));
        let rec = TimeTagRecord { channel, ticks };
        order.check(&rec, offset)?;
        records.push(rec);
    }
    Ok(TimeTagStream { tick_duration: fs as f64 * FS, records })
}

pub fn write_csv<W: Write>(stream: &TimeTagStream, mut w: W) -> Result<()> {
    writeln!(w, "channel,ticks")?;
    for r in &stream.records {
        writeln!(w, "{},{}", r.channel as u8, r.ticks)?;
    }
    w.flush()?;
    Ok(())
}

/// CSV carries no tick duration; the caller supplies it.
pub fn read_csv<R: BufRead>(mut r: R, tick_duration: f64) -> Result<TimeTagStream> {
    let mut records = Vec::new();
    let mut order = Monotone::default();
    let mut offset = 0usize;
    let mut line = String::new();
    let mut first = true;
    loop {
        line.clear();
        let read = r.read_line(&mut line)?;
        if read == 0 {
            break;
        }
        let text = line.trim();
        let at = offset;
        offset += read;
        if text.is_empty() {
            continue;
        }
        if first {
            first = false;
            if text.replace(' ', "") == "channel,ticks" {
                continue;
            }
        }
        let (c, t) = text.split_once(',').ok_or_else(|| format_err(at, "expected \"channel,ticks\""))?;
        let channel = c
            .trim()
            .parse::<u8>()
            .ok()
            .and_then(Channel::from_u8)
            .ok_or_else(|| format_err(at, format!("invalid channel {:?}", c.trim())))?;
        let ticks = t.trim().parse::<u64>().map_err(|e| format_err(at, format!("invalid ticks: {e}")))?;
        let rec = TimeTagRecord { channel, ticks };
        order.check(&rec, at)?;
        records.push(rec);
    }
    TimeTagStream::new(tick_duration, records)
}
