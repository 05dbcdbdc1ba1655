//! On-disk layout. All integers little-endian.
//!
//! ```text
//! header   "CMBAG1\n" | created stamp (12) | total messages u64 | stream count u32
//!          | per stream: u32 len + ADVERTISE body
//! chunk    "CHNK" | first stamp (12) | last stamp (12) | messages u32 | compressed u8
//!          | data len u32 | crc32 of data u32 | data
//! record   kind u8 | len u32 | body      (1 = ADVERTISE body, 2 = PUBLISH body)
//! index    "IDX1" | stream count u32 | per stream: u16 id len + id | has descriptor u8
//!          | [u32 len + ADVERTISE body] | entry count u32 | entries: chunk offset u64, count u32
//! footer   "CMBAGIDX" | index offset u64
//! ```
//!
//! The total in the header is written as zero and patched when the bag is
//! closed, so a bag left behind by a crash is recognizable by its missing
//! footer even if its tail happens to look valid.

use crate::bus::codec::{Frame, FrameKind};
use crate::bus::proto::{decode_publish_body, encode_publish_body, Message};
use crate::model::{StampedMessage, StreamDescriptor, Timestamp};

use super::BagError;

pub const MAGIC: &[u8; 7] = b"CMBAG1\n";
pub const CHUNK_MAGIC: &[u8; 4] = b"CHNK";
pub const INDEX_MAGIC: &[u8; 4] = b"IDX1";
pub const FOOTER_MAGIC: &[u8; 8] = b"CMBAGIDX";
pub const EXTENSION: &str = "cmbag";

/// Offset of the u64 message total inside the header.
pub const TOTAL_OFFSET: u64 = 7 + 12;
pub const CHUNK_HEADER_LEN: usize = 4 + 12 + 12 + 4 + 1 + 4 + 4;
pub const FOOTER_LEN: usize = 16;

pub const RECORD_STREAM: u8 = 1;
pub const RECORD_MESSAGE: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkHeader {
    pub first: Timestamp,
    pub last: Timestamp,
    pub count: u32,
    pub compressed: bool,
    pub data_len: u32,
    pub crc: u32,
}

impl ChunkHeader {
    pub fn encode(&self) -> [u8; CHUNK_HEADER_LEN] {
        let mut b = [0u8; CHUNK_HEADER_LEN];
        b[0..4].copy_from_slice(CHUNK_MAGIC);
        b[4..16].copy_from_slice(&self.first.to_le_bytes());
        b[16..28].copy_from_slice(&self.last.to_le_bytes());
        b[28..32].copy_from_slice(&self.count.to_le_bytes());
        b[32] = self.compressed as u8;
        b[33..37].copy_from_slice(&self.data_len.to_le_bytes());
        b[37..41].copy_from_slice(&self.crc.to_le_bytes());
        b
    }

    /// `None` when the bytes do not start with the chunk magic.
    pub fn decode(b: &[u8; CHUNK_HEADER_LEN]) -> Option<ChunkHeader> {
        if &b[0..4] != CHUNK_MAGIC {
            return None;
        }
        Some(ChunkHeader {
            first: Timestamp::from_le_bytes(b[4..16].try_into().ok()?).ok()?,
            last: Timestamp::from_le_bytes(b[16..28].try_into().ok()?).ok()?,
            count: u32::from_le_bytes(b[28..32].try_into().ok()?),
            compressed: match b[32] {
                0 => false,
                1 => true,
                _ => return None,
            },
            data_len: u32::from_le_bytes(b[33..37].try_into().ok()?),
            crc: u32::from_le_bytes(b[37..41].try_into().ok()?),
        })
    }
}

pub fn descriptor_body(d: &StreamDescriptor) -> Vec<u8> {
    Message::Advertise(d.clone()).to_frame().body
}

pub fn parse_descriptor(body: &[u8]) -> Result<StreamDescriptor, BagError> {
    match Message::from_frame(&Frame::new(FrameKind::Advertise, body.to_vec()))? {
        Message::Advertise(d) => Ok(d),
        _ => unreachable!("advertise frames decode to advertisements"),
    }
}

pub fn put_record(out: &mut Vec<u8>, kind: u8, body: &[u8]) {
    out.push(kind);
    out.extend_from_slice(&(body.len() as u32).to_le_bytes());
    out.extend_from_slice(body);
}

pub fn put_message(out: &mut Vec<u8>, m: &StampedMessage) {
    let mut body = Vec::with_capacity(m.stream.as_str().len() + m.payload.len() + 27);
    encode_publish_body(m, &mut body);
    put_record(out, RECORD_MESSAGE, &body);
}

pub enum Record {
    Stream(StreamDescriptor),
    Message(StampedMessage),
}

/// Decodes the records of one chunk's data section.
pub fn parse_records(mut data: &[u8]) -> Result<Vec<Record>, &'static str> {
    let mut out = Vec::new();
    while !data.is_empty() {
        if data.len() < 5 {
            return Err("record header cut short");
        }
        let kind = data[0];
        let len = u32::from_le_bytes(data[1..5].try_into().expect("4 bytes")) as usize;
        let body = data.get(5..5 + len).ok_or("record body cut short")?;
        out.push(match kind {
            RECORD_STREAM => Record::Stream(parse_descriptor(body).map_err(|_| "bad stream record")?),
            RECORD_MESSAGE => Record::Message(decode_publish_body(body).map_err(|_| "bad message record")?),
            _ => return Err("unknown record kind"),
        });
        data = &data[5 + len..];
    }
    Ok(out)
}

/// Little cursor over a byte slice used for the header and index.
pub struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Cursor { buf, pos: 0 }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.buf.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(s)
    }

    pub fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|b| b[0])
    }

    pub fn u16(&mut self) -> Option<u16> {
        self.take(2).map(|b| u16::from_le_bytes(b.try_into().expect("2 bytes")))
    }

    pub fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    pub fn stamp(&mut self) -> Option<Timestamp> {
        Timestamp::from_le_bytes(self.take(12)?.try_into().ok()?).ok()
    }

    pub fn is_empty(&self) -> bool {
        self.pos == self.buf.len()
    }
}
