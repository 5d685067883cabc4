//! Little-endian polarity-event file format.
//!
//! ```text
//! #!AER-LITE/1 <width> <height>\n        ASCII header line
//! repeated 8-byte records:
//!   u32 LE  data       bit 0      valid flag (0 = record skipped)
//!                      bit 1      polarity (1 = on)
//!                      bits 2-16  y
//!                      bits 17-31 x
//!   u32 LE  timestamp  microseconds
//! ```
//!
//! The packing follows the AEDAT 3.1 polarity-event layout without its
//! packet headers.

use thiserror::Error;

use super::{Event, EventStream, Polarity};

pub const MAGIC: &str = "#!AER-LITE/";
pub const VERSION: u32 = 1;
pub const RECORD_BYTES: usize = 8;
const MAX_HEADER: usize = 256;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("malformed header: {0}")]
    BadHeader(String),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(String),
    #[error("truncated record at byte offset {offset}")]
    Truncated { offset: usize },
    #[error("event at byte offset {offset} lies outside the {width}x{height} sensor: ({x}, {y})")]
    OutOfBounds {
        offset: usize,
        x: u16,
        y: u16,
        width: u16,
        height: u16,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedStream {
    pub stream: EventStream,
    /// Records with the valid flag cleared.
    pub skipped: usize,
}

fn parse_header(bytes: &[u8]) -> Result<(u16, u16, usize), FormatError> {
    let end = bytes
        .iter()
        .take(MAX_HEADER)
        .position(|&b| b == b'\n')
        .ok_or_else(|| FormatError::BadHeader("no header line".into()))?;
    let line = std::str::from_utf8(&bytes[..end])
        .map_err(|_| FormatError::BadHeader("header is not ASCII".into()))?
        .trim_end_matches('\r');
    let rest = line
        .strip_prefix(MAGIC)
        .ok_or_else(|| FormatError::BadHeader(format!("expected {MAGIC:?} prefix")))?;
    let mut parts = rest.split_ascii_whitespace();
    let version = parts.next().unwrap_or("");
    if version != VERSION.to_string() {
        return Err(FormatError::UnsupportedVersion(version.to_string()));
    }
    let mut dim = |name: &str| -> Result<u16, FormatError> {
        parts
            .next()
            .and_then(|s| s.parse::<u16>().ok())
            .filter(|&d| d > 0)
            .ok_or_else(|| FormatError::BadHeader(format!("missing or invalid {name}")))
    };
    let width = dim("width")?;
    let height = dim("height")?;
    if parts.next().is_some() {
        return Err(FormatError::BadHeader("trailing header fields".into()));
    }
    Ok((width, height, end + 1))
}

/// Decodes a file. Out-of-order timestamps are stably re-sorted.
pub fn parse_event_file(bytes: &[u8]) -> Result<ParsedStream, FormatError> {
    let (width, height, body) = parse_header(bytes)?;
    let payload = &bytes[body..];
    let mut events = Vec::with_capacity(payload.len() / RECORD_BYTES);
    let mut skipped = 0;
    let mut sorted = true;
    let mut last_t = 0u32;
    for (i, rec) in payload.chunks(RECORD_BYTES).enumerate() {
        let offset = body + i * RECORD_BYTES;
        if rec.len() < RECORD_BYTES {
            return Err(FormatError::Truncated { offset });
        }
        let data = u32::from_le_bytes(rec[0..4].try_into().unwrap());
        let t = u32::from_le_bytes(rec[4..8].try_into().unwrap());
        if data & 1 == 0 {
            skipped += 1;
            continue;
        }
        let polarity = if data & 2 != 0 { Polarity::On } else { Polarity::Off };
        let y = ((data >> 2) & 0x7fff) as u16;
        let x = (data >> 17) as u16;
        if x >= width || y >= height {
            return Err(FormatError::OutOfBounds {
                offset,
                x,
                y,
                width,
                height,
            });
        }
        sorted &= t >= last_t;
        last_t = t;
        events.push(Event { t, x, y, polarity });
    }
    if !sorted {
        events.sort_by_key(|e| e.t);
    }
    Ok(ParsedStream {
        stream: EventStream { width, height, events },
        skipped,
    })
}

/// Encodes a stream; `parse_event_file(&write_event_file(s))` returns `s`.
pub fn write_event_file(stream: &EventStream) -> Vec<u8> {
    let header = format!("{MAGIC}{VERSION} {} {}\n", stream.width, stream.height);
    let mut out = Vec::with_capacity(header.len() + stream.events.len() * RECORD_BYTES);
    out.extend_from_slice(header.as_bytes());
    for e in &stream.events {
        let pol = matches!(e.polarity, Polarity::On) as u32;
        let data = 1 | (pol << 1) | ((e.y as u32 & 0x7fff) << 2) | ((e.x as u32 & 0x7fff) << 17);
        out.extend_from_slice(&data.to_le_bytes());
        out.extend_from_slice(&e.t.to_le_bytes());
    }
    out
}
