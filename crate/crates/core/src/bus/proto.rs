//! Typed bodies carried inside frames.
//!
//! Strings are UTF-8 prefixed by a u16 LE byte count. Layouts:
//!
//! * ADVERTISE: topic, kind u8, nominal rate f64, schema tag u8, schema length u32
//! * SUBSCRIBE: pattern, queue capacity u32
//! * UNSUBSCRIBE: pattern
//! * PUBLISH: topic, stamp seconds u64, stamp nanos u32, seq u64, flags u8, payload (rest of body)
//! * PING / PONG: empty

use super::codec::{Frame, FrameKind};
use super::topic::TopicPattern;
use super::BusError;
use crate::model::{Payload, PayloadSchema, StampedMessage, StreamDescriptor, StreamId, StreamKind, Timestamp};

pub const FLAG_REPLAYED: u8 = 0x01;

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Advertise(StreamDescriptor),
    Subscribe { pattern: TopicPattern, queue_capacity: u32 },
    Unsubscribe { pattern: TopicPattern },
    Publish(StampedMessage),
    Ping,
    Pong,
}

impl Message {
    pub fn to_frame(&self) -> Frame {
        let mut body = Vec::new();
        let kind = match self {
            Message::Advertise(d) => {
                put_str(&mut body, d.id.as_str());
                body.push(d.kind.to_u8());
                body.extend_from_slice(&d.nominal_rate_hz.to_le_bytes());
                let (tag, n) = match d.schema {
                    PayloadSchema::Scalar => (0u8, 1u32),
                    PayloadSchema::Vector(n) => (1, n),
                    PayloadSchema::Blob => (2, 0),
                };
                body.push(tag);
                body.extend_from_slice(&n.to_le_bytes());
                FrameKind::Advertise
            }
            Message::Subscribe {
                pattern,
                queue_capacity,
            } => {
                put_str(&mut body, pattern.as_str());
                body.extend_from_slice(&queue_capacity.to_le_bytes());
                FrameKind::Subscribe
            }
            Message::Unsubscribe { pattern } => {
                put_str(&mut body, pattern.as_str());
                FrameKind::Unsubscribe
            }
            Message::Publish(m) => {
                encode_publish_body(m, &mut body);
                FrameKind::Publish
            }
            Message::Ping => FrameKind::Ping,
            Message::Pong => FrameKind::Pong,
        };
        Frame::new(kind, body)
    }

    pub fn from_frame(frame: &Frame) -> Result<Self, BusError> {
        let mut r = Reader::new(&frame.body);
        let msg = match frame.kind {
            FrameKind::Advertise => {
                let topic = r.string()?;
                let kind = StreamKind::from_u8(r.u8()?).ok_or(BusError::MalformedBody("stream kind"))?;
                let rate = f64::from_le_bytes(r.array()?);
                let tag = r.u8()?;
                let n = r.u32()?;
                let schema = match tag {
                    0 => PayloadSchema::Scalar,
                    1 => PayloadSchema::Vector(n),
                    2 => PayloadSchema::Blob,
                    _ => return Err(BusError::MalformedBody("payload schema")),
                };
                Message::Advertise(StreamDescriptor::new(topic, kind, rate, schema)?)
            }
            FrameKind::Subscribe => {
                let pattern = TopicPattern::parse(&r.string()?)?;
                let queue_capacity = r.u32()?;
                if queue_capacity == 0 {
                    return Err(BusError::ZeroCapacity);
                }
                Message::Subscribe {
                    pattern,
                    queue_capacity,
                }
            }
            FrameKind::Unsubscribe => Message::Unsubscribe {
                pattern: TopicPattern::parse(&r.string()?)?,
            },
            FrameKind::Publish => return decode_publish_body(&frame.body).map(Message::Publish),
            FrameKind::Ping => Message::Ping,
            FrameKind::Pong => Message::Pong,
        };
        r.finish()?;
        Ok(msg)
    }
}

pub fn encode_publish_body(m: &StampedMessage, out: &mut Vec<u8>) {
    put_str(out, m.stream.as_str());
    out.extend_from_slice(&m.stamp.to_le_bytes());
    out.extend_from_slice(&m.seq.to_le_bytes());
    out.push(if m.replayed { FLAG_REPLAYED } else { 0 });
    out.extend_from_slice(m.payload.as_bytes());
}

pub fn decode_publish_body(body: &[u8]) -> Result<StampedMessage, BusError> {
    let mut r = Reader::new(body);
    let stream = StreamId::new(r.string()?)?;
    let stamp = Timestamp::from_le_bytes(r.array()?)?;
    let seq = r.u64()?;
    let flags = r.u8()?;
    let payload = Payload::from_bytes(r.rest());
    Ok(StampedMessage {
        stream,
        stamp,
        seq,
        payload,
        replayed: flags & FLAG_REPLAYED != 0,
    })
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    let len = u16::try_from(s.len()).expect("topic length validated to fit u16");
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], BusError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or(BusError::MalformedBody("body shorter than its fields"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], BusError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8, BusError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, BusError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64, BusError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn string(&mut self) -> Result<String, BusError> {
        let len = u16::from_le_bytes(self.array()?) as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| BusError::MalformedBody("topic is not UTF-8"))
    }

    fn rest(&mut self) -> Vec<u8> {
        let s = self.buf[self.pos..].to_vec();
        self.pos = self.buf.len();
        s
    }

    fn finish(&self) -> Result<(), BusError> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(BusError::MalformedBody("trailing bytes"))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn publish_body_layout() {
        let m = StampedMessage::new(
            StreamId::new("a/b").unwrap(),
            Timestamp::new(1, 2).unwrap(),
            3,
            Payload::from_bytes(vec![9u8]),
        );
        let f = Message::Publish(m.clone()).to_frame();
        assert_eq!(f.kind, FrameKind::Publish);
        assert_eq!(
            f.body,
            vec![
                3, 0, b'a', b'/', b'b', // topic
                1, 0, 0, 0, 0, 0, 0, 0, 2, 0, 0, 0, // stamp
                3, 0, 0, 0, 0, 0, 0, 0, // seq
                0, // flags
                9, // payload
            ]
        );
        assert_eq!(Message::from_frame(&f).unwrap(), Message::Publish(m));
    }

    #[test]
    fn rejects_short_and_trailing_bodies() {
        let f = Frame::new(FrameKind::Subscribe, vec![1, 0, b'a']);
        assert!(matches!(Message::from_frame(&f), Err(BusError::MalformedBody(_))));
        let mut body = Message::Unsubscribe {
            pattern: TopicPattern::parse("a").unwrap(),
        }
        .to_frame()
        .body;
        body.push(0);
        let f = Frame::new(FrameKind::Unsubscribe, body);
        assert!(matches!(Message::from_frame(&f), Err(BusError::MalformedBody(_))));
    }

    #[test]
    fn zero_capacity_rejected() {
        let mut body = vec![1, 0, b'a'];
        body.extend_from_slice(&0u32.to_le_bytes());
        let f = Frame::new(FrameKind::Subscribe, body);
        assert_eq!(Message::from_frame(&f), Err(BusError::ZeroCapacity));
    }

    fn any_message() -> impl Strategy<Value = Message> {
        let topic = "[a-z][a-z0-9]{0,6}(/[a-z0-9_]{1,6}){0,3}";
        let publish = (
            topic,
            any::<u64>(),
            0u32..1_000_000_000,
            any::<u64>(),
            any::<bool>(),
            proptest::collection::vec(any::<u8>(), 0..64),
        )
            .prop_map(|(t, s, n, seq, replayed, p)| {
                Message::Publish(StampedMessage {
                    stream: StreamId::new(t).unwrap(),
                    stamp: Timestamp::new(s, n).unwrap(),
                    seq,
                    payload: Payload::from_bytes(p),
                    replayed,
                })
            });
        let advertise = (topic, 0u8..3, 0.001f64..1e4, 0u8..3, 1u32..32).prop_map(|(t, k, r, tag, n)| {
            let schema = match tag {
                0 => PayloadSchema::Scalar,
                1 => PayloadSchema::Vector(n),
                _ => PayloadSchema::Blob,
            };
            Message::Advertise(StreamDescriptor::new(t, StreamKind::from_u8(k).unwrap(), r, schema).unwrap())
        });
        let subscribe =
            ("[a-z*]{1,4}(/[a-z*]{1,4}){0,2}(/\\*\\*)?", 1u32..1000).prop_filter_map("well-formed glob", |(p, c)| {
                TopicPattern::parse(&p).ok().map(|pattern| Message::Subscribe {
                    pattern,
                    queue_capacity: c,
                })
            });
        prop_oneof![publish, advertise, subscribe, Just(Message::Ping), Just(Message::Pong)]
    }

    proptest! {
        #[test]
        fn message_round_trip(msg in any_message()) {
            let frame = msg.to_frame();
            let bytes = frame.encode().unwrap();
            let decoded = match crate::bus::codec::decode_frame(&bytes).unwrap() {
                crate::bus::codec::Decoded::Frame(f, n) => { prop_assert_eq!(n, bytes.len()); f }
                _ => panic!("complete frame expected"),
            };
            prop_assert_eq!(Message::from_frame(&decoded).unwrap(), msg);
        }
    }
}
