//! Minimal pub/sub transport: a framed binary protocol over TCP, a single
//! broker routing stamped messages by topic glob, and a blocking client.

pub mod broker;
pub mod client;
pub mod codec;
pub mod proto;
pub mod router;
pub mod topic;

use thiserror::Error;

use crate::model::ModelError;

pub use broker::{Broker, BrokerConfig};
pub use client::{Client, ClientConfig, Incoming};
pub use codec::{decode_frame, encode_frame, Decoded, Frame, FrameDecoder, FrameKind};
pub use proto::Message;
pub use router::{Router, SubscriptionId};
pub use topic::{match_topic, TopicPattern};

pub const DEFAULT_BROKER_ADDR: &str = "127.0.0.1:7447";
pub const BROKER_ENV: &str = "CONDMON_BROKER";
/// Queue depth used by recorders, large enough to make drops unlikely.
pub const RECORDER_QUEUE_CAPACITY: u32 = 1 << 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BusError {
    #[error("frame body of {0} bytes is too large")]
    BodyTooLarge(usize),
    #[error("bad frame magic")]
    BadMagic,
    #[error("unsupported protocol version {0}")]
    UnsupportedVersion(u8),
    #[error("unknown frame kind {0}")]
    UnknownFrameKind(u8),
    #[error("stream ended inside a frame ({0} bytes left over)")]
    TruncatedBody(usize),
    #[error("malformed frame body: {0}")]
    MalformedBody(&'static str),
    #[error("bad topic pattern {0:?}: {1}")]
    BadPattern(String, &'static str),
    #[error("queue capacity must be at least 1")]
    ZeroCapacity,
    #[error("stream {0} was never advertised")]
    UnknownStream(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("broker disconnected")]
    Disconnected,
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for BusError {
    fn from(e: std::io::Error) -> Self {
        use std::io::ErrorKind::*;
        match e.kind() {
            BrokenPipe | ConnectionReset | ConnectionAborted | UnexpectedEof | NotConnected => BusError::Disconnected,
            _ => BusError::Io(e.to_string()),
        }
    }
}

/// Broker address from an explicit flag, else `CONDMON_BROKER`, else the default.
pub fn resolve_broker_addr(explicit: Option<&str>) -> String {
    explicit
        .map(str::to_string)
        .or_else(|| std::env::var(BROKER_ENV).ok().filter(|s| !s.is_empty()))
        .unwrap_or_else(|| DEFAULT_BROKER_ADDR.to_string())
}
