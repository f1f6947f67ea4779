//! `EVT1` event files (little-endian):
//! `"EVT1" | u16 H | u16 W | u64 count | count x (u64 t_us, u16 x, u16 y, i8 p)`.

use std::io::{Read, Write};

use super::{Event, EventStream, Geometry, Polarity};
use crate::error::{Error, Result};

pub const EVENT_MAGIC: &[u8; 4] = b"EVT1";
pub const EVENT_HEADER_BYTES: usize = 16;
pub const EVENT_RECORD_BYTES: usize = 13;

pub fn write_events<W: Write>(stream: &EventStream, mut w: W) -> Result<()> {
    let g = stream.geometry();
    let (h, wd) = (dim_u16(g.height)?, dim_u16(g.width)?);
    w.write_all(EVENT_MAGIC)?;
    w.write_all(&h.to_le_bytes())?;
    w.write_all(&wd.to_le_bytes())?;
    w.write_all(&(stream.len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(stream.len() * EVENT_RECORD_BYTES);
    for e in stream.events() {
        buf.extend_from_slice(&e.t.to_le_bytes());
        buf.extend_from_slice(&e.x.to_le_bytes());
        buf.extend_from_slice(&e.y.to_le_bytes());
        buf.push(e.p.as_i8() as u8);
    }
    w.write_all(&buf)?;
    Ok(())
}

fn dim_u16(v: usize) -> Result<u16> {
    u16::try_from(v).map_err(|_| Error::Geometry(format!("dimension {v} exceeds u16")))
}

fn parse_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        offset: offset as u64,
        message: message.into(),
    }
}

pub fn read_events<R: Read>(mut r: R) -> Result<EventStream> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < EVENT_HEADER_BYTES {
        return Err(parse_err(bytes.len(), "truncated header"));
    }
    if &bytes[..4] != EVENT_MAGIC {
        return Err(parse_err(0, format!("bad magic {:?}", String::from_utf8_lossy(&bytes[..4]))));
    }
    let h = u16::from_le_bytes([bytes[4], bytes[5]]) as usize;
    let w = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let geometry = Geometry::new(h, w);
    let body = &bytes[EVENT_HEADER_BYTES..];
    let needed = count
        .checked_mul(EVENT_RECORD_BYTES as u64)
        .ok_or_else(|| parse_err(8, "event count overflows"))?;
    if (body.len() as u64) < needed {
        let complete = body.len() / EVENT_RECORD_BYTES;
        return Err(parse_err(
            EVENT_HEADER_BYTES + complete * EVENT_RECORD_BYTES,
            format!("truncated record {complete} of {count}"),
        ));
    }
    if body.len() as u64 > needed {
        return Err(parse_err(EVENT_HEADER_BYTES + needed as usize, "trailing bytes after last record"));
    }
    let mut events = Vec::with_capacity(count as usize);
    let mut last_t = 0u64;
    for (i, rec) in body.chunks_exact(EVENT_RECORD_BYTES).enumerate() {
        let off = EVENT_HEADER_BYTES + i * EVENT_RECORD_BYTES;
        let t = u64::from_le_bytes(rec[0..8].try_into().unwrap());
        let x = u16::from_le_bytes([rec[8], rec[9]]);
        let y = u16::from_le_bytes([rec[10], rec[11]]);
        let p = Polarity::from_i8(rec[12] as i8)
            .ok_or_else(|| parse_err(off + 12, format!("polarity {} not in {{-1, +1}}", rec[12] as i8)))?;
        if t < last_t {
            return Err(parse_err(off, format!("timestamp {t} precedes {last_t}")));
        }
        if !geometry.contains(x as usize, y as usize) {
            return Err(parse_err(off + 8, format!("coordinate ({x}, {y}) outside {h}x{w}")));
        }
        last_t = t;
        events.push(Event { t, x, y, p });
    }
    EventStream::new(geometry, events)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_stream_is_header_only() {
        let s = EventStream::empty(Geometry::new(64, 32));
        let mut buf = Vec::new();
        write_events(&s, &mut buf).unwrap();
        assert_eq!(buf.len(), EVENT_HEADER_BYTES);
        assert_eq!(read_events(buf.as_slice()).unwrap(), s);
    }

    #[test]
    fn single_event_record() {
        let s = EventStream::new(
            Geometry::new(8, 8),
            vec![Event::new(1, 2, 3, Polarity::Negative)],
        )
        .unwrap();
        let mut buf = Vec::new();
        write_events(&s, &mut buf).unwrap();
        assert_eq!(buf.len() - EVENT_HEADER_BYTES, 13);
        assert_eq!(
            &buf[EVENT_HEADER_BYTES..],
            &[1, 0, 0, 0, 0, 0, 0, 0, 2, 0, 3, 0, 0xff]
        );
        assert_eq!(read_events(buf.as_slice()).unwrap(), s);
    }

    fn two_events() -> Vec<u8> {
        let s = EventStream::new(
            Geometry::new(8, 8),
            vec![
                Event::new(5, 1, 1, Polarity::Positive),
                Event::new(9, 2, 2, Polarity::Negative),
            ],
        )
        .unwrap();
        let mut buf = Vec::new();
        write_events(&s, &mut buf).unwrap();
        buf
    }

    #[test]
    fn rejects_bad_magic() {
        let mut buf = two_events();
        buf[3] = b'2';
        assert!(matches!(read_events(buf.as_slice()), Err(Error::Parse { offset: 0, .. })));
    }

    #[test]
    fn rejects_truncation_with_offset() {
        let buf = two_events();
        let cut = &buf[..buf.len() - 1];
        match read_events(cut) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 16 + 13),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_zero_polarity() {
        let mut buf = two_events();
        buf[16 + 12] = 0;
        match read_events(buf.as_slice()) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 28),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_non_monotone_time() {
        let mut buf = two_events();
        // second record's timestamp 9 -> 1
        buf[16 + 13] = 1;
        match read_events(buf.as_slice()) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 29),
            other => panic!("unexpected {other:?}"),
        }
    }
}
