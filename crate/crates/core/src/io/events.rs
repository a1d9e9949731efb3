use std::fs;
use std::path::Path;

use super::bytes::Reader;
use crate::error::Result;
use crate::events::{Event, EventStream};

pub const EVENT_MAGIC: &[u8; 4] = b"EVT1";
pub const EVENT_VERSION: u16 = 1;
/// Magic, version, width, height, count.
pub const EVENT_HEADER_LEN: usize = 18;
pub const EVENT_RECORD_LEN: usize = 13;

pub fn encode_events(stream: &EventStream) -> Vec<u8> {
    let mut out = Vec::with_capacity(EVENT_HEADER_LEN + EVENT_RECORD_LEN * stream.len());
    out.extend_from_slice(EVENT_MAGIC);
    out.extend_from_slice(&EVENT_VERSION.to_le_bytes());
    out.extend_from_slice(&stream.width().to_le_bytes());
    out.extend_from_slice(&stream.height().to_le_bytes());
    out.extend_from_slice(&(stream.len() as u64).to_le_bytes());
    for e in stream.events() {
        out.extend_from_slice(&e.x.to_le_bytes());
        out.extend_from_slice(&e.y.to_le_bytes());
        out.extend_from_slice(&e.t.to_le_bytes());
        out.extend_from_slice(&e.p.to_le_bytes());
    }
    out
}

pub fn decode_events(bytes: &[u8]) -> Result<EventStream> {
    let mut r = Reader::new(bytes);
    r.expect_magic(EVENT_MAGIC)?;
    let at = r.offset();
    let version = r.u16("version")?;
    if version != EVENT_VERSION {
        return Err(Reader::error_at(at, format!("unsupported version {version}")));
    }
    let width = r.u16("width")?;
    let height = r.u16("height")?;
    let at = r.offset();
    let count = r.u64("event count")?;
    let expected = (count as u128) * EVENT_RECORD_LEN as u128;
    if expected > r.remaining() as u128 {
        return Err(Reader::error_at(
            at,
            format!("header declares {count} events but only {} bytes follow", r.remaining()),
        ));
    }
    let mut events = Vec::with_capacity(count as usize);
    let mut last_t = 0;
    for i in 0..count {
        let at = r.offset();
        let x = r.u16("event x")?;
        let y = r.u16("event y")?;
        let t = r.u64("event t")?;
        let p = r.i8("event polarity")?;
        if x >= width || y >= height {
            return Err(Reader::error_at(at, format!("event {i} at ({x}, {y}) outside {width}×{height}")));
        }
        if p != 1 && p != -1 {
            return Err(Reader::error_at(at, format!("event {i} has polarity {p}")));
        }
        if i > 0 && t < last_t {
            return Err(Reader::error_at(at, format!("event {i} timestamp {t} precedes {last_t}")));
        }
        last_t = t;
        events.push(Event::new(x, y, t, p));
    }
    r.finish()?;
    EventStream::new(width, height, events)
}

pub fn write_events(path: impl AsRef<Path>, stream: &EventStream) -> Result<()> {
    fs::write(path, encode_events(stream))?;
    Ok(())
}

pub fn read_events(path: impl AsRef<Path>) -> Result<EventStream> {
    decode_events(&fs::read(path)?)
}
