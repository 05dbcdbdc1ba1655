//! Frame layer of the wire protocol.
//!
//! Every frame is `C0 4D | version | kind | length (u32 LE) | body`.

use super::BusError;

pub const MAGIC: [u8; 2] = [0xC0, 0x4D];
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 8;
/// Largest body the incremental decoder will buffer.
pub const DEFAULT_MAX_BODY: usize = 64 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum FrameKind {
    Advertise = 1,
    Subscribe = 2,
    Publish = 3,
    Unsubscribe = 4,
    Ping = 5,
    Pong = 6,
}

impl FrameKind {
    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            1 => FrameKind::Advertise,
            2 => FrameKind::Subscribe,
            3 => FrameKind::Publish,
            4 => FrameKind::Unsubscribe,
            5 => FrameKind::Ping,
            6 => FrameKind::Pong,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub kind: FrameKind,
    pub body: Vec<u8>,
}

impl Frame {
    pub fn new(kind: FrameKind, body: Vec<u8>) -> Self {
        Frame { kind, body }
    }

    pub fn encode(&self) -> Result<Vec<u8>, BusError> {
        encode_frame(self.kind, &self.body)
    }
}

pub fn encode_frame(kind: FrameKind, body: &[u8]) -> Result<Vec<u8>, BusError> {
    let len = u32::try_from(body.len()).map_err(|_| BusError::BodyTooLarge(body.len()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + body.len());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(kind as u8);
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(body);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decoded {
    /// A complete frame and the number of bytes it occupied.
    Frame(Frame, usize),
    NeedMore,
}

/// Decodes one frame from the front of `buf` without consuming anything.
/// Header errors are reported as soon as the offending byte is visible.
pub fn decode_frame(buf: &[u8]) -> Result<Decoded, BusError> {
    decode_frame_limited(buf, u32::MAX as usize)
}

fn decode_frame_limited(buf: &[u8], max_body: usize) -> Result<Decoded, BusError> {
    for (i, &m) in MAGIC.iter().enumerate() {
        match buf.get(i) {
            Some(&b) if b != m => return Err(BusError::BadMagic),
            None => return Ok(Decoded::NeedMore),
            _ => {}
        }
    }
    match buf.get(2) {
        None => return Ok(Decoded::NeedMore),
        Some(&v) if v != VERSION => return Err(BusError::UnsupportedVersion(v)),
        _ => {}
    }
    let kind = match buf.get(3) {
        None => return Ok(Decoded::NeedMore),
        Some(&k) => FrameKind::from_u8(k).ok_or(BusError::UnknownFrameKind(k))?,
    };
    if buf.len() < HEADER_LEN {
        return Ok(Decoded::NeedMore);
    }
    let len = u32::from_le_bytes(buf[4..8].try_into().expect("4 bytes")) as usize;
    if len > max_body {
        return Err(BusError::BodyTooLarge(len));
    }
    if buf.len() < HEADER_LEN + len {
        return Ok(Decoded::NeedMore);
    }
    let body = buf[HEADER_LEN..HEADER_LEN + len].to_vec();
    Ok(Decoded::Frame(Frame { kind, body }, HEADER_LEN + len))
}

/// Incremental decoder over a byte stream.
#[derive(Debug)]
pub struct FrameDecoder {
    buf: Vec<u8>,
    max_body: usize,
}

impl Default for FrameDecoder {
    fn default() -> Self {
        FrameDecoder::new(DEFAULT_MAX_BODY)
    }
}

impl FrameDecoder {
    pub fn new(max_body: usize) -> Self {
        FrameDecoder {
            buf: Vec::new(),
            max_body,
        }
    }

    pub fn extend(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    /// Next complete frame, or `None` if more bytes are needed.
    pub fn next_frame(&mut self) -> Result<Option<Frame>, BusError> {
        match decode_frame_limited(&self.buf, self.max_body)? {
            Decoded::Frame(frame, used) => {
                self.buf.drain(..used);
                Ok(Some(frame))
            }
            Decoded::NeedMore => Ok(None),
        }
    }

    /// Call at end of stream; leftover bytes mean the last frame was cut off.
    pub fn finish(&self) -> Result<(), BusError> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(BusError::TruncatedBody(self.buf.len()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn golden_ping() {
        assert_eq!(
            encode_frame(FrameKind::Ping, &[]).unwrap(),
            vec![0xC0, 0x4D, 0x01, 0x05, 0x00, 0x00, 0x00, 0x00]
        );
    }

    #[test]
    fn golden_publish_abc() {
        assert_eq!(
            encode_frame(FrameKind::Publish, b"abc").unwrap(),
            vec![0xC0, 0x4D, 0x01, 0x03, 0x03, 0x00, 0x00, 0x00, 0x61, 0x62, 0x63]
        );
    }

    #[test]
    fn decode_ping() {
        let bytes = [0xC0, 0x4D, 0x01, 0x05, 0x00, 0x00, 0x00, 0x00];
        assert_eq!(
            decode_frame(&bytes).unwrap(),
            Decoded::Frame(Frame::new(FrameKind::Ping, vec![]), 8)
        );
    }

    #[test]
    fn partial_header_needs_more() {
        let bytes = encode_frame(FrameKind::Publish, b"abc").unwrap();
        assert_eq!(decode_frame(&bytes[..5]).unwrap(), Decoded::NeedMore);
        assert_eq!(decode_frame(&bytes[..10]).unwrap(), Decoded::NeedMore);
        assert_eq!(decode_frame(&[]).unwrap(), Decoded::NeedMore);
    }

    #[test]
    fn bad_magic_and_version() {
        assert_eq!(decode_frame(&[0xFF, 0xFF, 0x01]), Err(BusError::BadMagic));
        assert_eq!(decode_frame(&[0xC0, 0x00]), Err(BusError::BadMagic));
        assert_eq!(
            decode_frame(&[0xC0, 0x4D, 0x02, 0x05, 0, 0, 0, 0]),
            Err(BusError::UnsupportedVersion(2))
        );
        assert_eq!(
            decode_frame(&[0xC0, 0x4D, 0x01, 0x09, 0, 0, 0, 0]),
            Err(BusError::UnknownFrameKind(9))
        );
    }

    #[test]
    fn decoder_leaves_remainder() {
        let mut bytes = encode_frame(FrameKind::Publish, b"abc").unwrap();
        bytes.extend(encode_frame(FrameKind::Ping, &[]).unwrap());
        bytes.extend_from_slice(&[0xC0, 0x4D, 0x01]);
        let mut dec = FrameDecoder::default();
        dec.extend(&bytes);
        assert_eq!(dec.next_frame().unwrap().unwrap().body, b"abc");
        assert_eq!(dec.next_frame().unwrap().unwrap().kind, FrameKind::Ping);
        assert_eq!(dec.next_frame().unwrap(), None);
        assert_eq!(dec.buffered(), 3);
        assert_eq!(dec.finish(), Err(BusError::TruncatedBody(3)));
    }

    #[test]
    fn decoder_rejects_oversized_length() {
        let mut dec = FrameDecoder::new(16);
        dec.extend(&[0xC0, 0x4D, 0x01, 0x03, 0xFF, 0x00, 0x00, 0x00]);
        assert_eq!(dec.next_frame(), Err(BusError::BodyTooLarge(255)));
    }

    fn any_kind() -> impl Strategy<Value = FrameKind> {
        (1u8..=6).prop_map(|k| FrameKind::from_u8(k).unwrap())
    }

    proptest! {
        #[test]
        fn round_trip_with_arbitrary_split(
            kind in any_kind(),
            body in proptest::collection::vec(any::<u8>(), 0..512),
            split in any::<prop::sample::Index>(),
        ) {
            let bytes = encode_frame(kind, &body).unwrap();
            let cut = split.index(bytes.len() + 1);
            let mut dec = FrameDecoder::default();
            dec.extend(&bytes[..cut]);
            let early = dec.next_frame().unwrap();
            if cut < bytes.len() {
                prop_assert!(early.is_none());
                dec.extend(&bytes[cut..]);
                let frame = dec.next_frame().unwrap().unwrap();
                prop_assert_eq!(frame, Frame::new(kind, body));
            } else {
                prop_assert_eq!(early.unwrap(), Frame::new(kind, body));
            }
            prop_assert!(dec.finish().is_ok());
        }
    }
}
