//! Core domain types shared by every other module: timestamps, stream
//! descriptors and stamped messages.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use thiserror::Error;

pub const NANOS_PER_SEC: u32 = 1_000_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("nanosecond field {0} out of range")]
    InvalidNanos(u32),
    #[error("timestamp difference overflows a signed 64-bit nanosecond count")]
    Overflow,
    #[error("malformed timestamp text {0:?}")]
    BadTimestampText(String),
    #[error("invalid stream id {0:?}: {1}")]
    InvalidStreamId(String, &'static str),
    #[error("nominal rate must be positive and finite, got {0}")]
    InvalidRate(f64),
    #[error("payload of {got} bytes does not match schema {schema:?}")]
    SchemaMismatch { schema: PayloadSchema, got: usize },
}

/// Wall or simulated time as whole seconds plus nanoseconds since the Unix
/// epoch. Field order gives the lexicographic total order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Timestamp {
    secs: u64,
    nanos: u32,
}

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp { secs: 0, nanos: 0 };
    pub const MAX: Timestamp = Timestamp {
        secs: u64::MAX,
        nanos: NANOS_PER_SEC - 1,
    };

    pub fn new(secs: u64, nanos: u32) -> Result<Self, ModelError> {
        if nanos >= NANOS_PER_SEC {
            return Err(ModelError::InvalidNanos(nanos));
        }
        Ok(Timestamp { secs, nanos })
    }

    pub const fn from_secs(secs: u64) -> Self {
        Timestamp { secs, nanos: 0 }
    }

    pub fn from_total_nanos(total: u128) -> Self {
        Timestamp {
            secs: (total / NANOS_PER_SEC as u128) as u64,
            nanos: (total % NANOS_PER_SEC as u128) as u32,
        }
    }

    pub fn secs(&self) -> u64 {
        self.secs
    }

    pub fn nanos(&self) -> u32 {
        self.nanos
    }

    pub fn total_nanos(&self) -> u128 {
        self.secs as u128 * NANOS_PER_SEC as u128 + self.nanos as u128
    }

    /// Exact signed difference `self - other` in nanoseconds.
    pub fn diff(&self, other: &Timestamp) -> Result<i64, ModelError> {
        timestamp_diff(*self, *other)
    }

    /// Shifts by a signed nanosecond offset, saturating at the ends of the
    /// representable range.
    pub fn offset_nanos(&self, delta: i64) -> Timestamp {
        let t = self.total_nanos() as i128 + delta as i128;
        if t <= 0 {
            Timestamp::ZERO
        } else if t as u128 >= Timestamp::MAX.total_nanos() {
            Timestamp::MAX
        } else {
            Timestamp::from_total_nanos(t as u128)
        }
    }

    pub fn offset_secs_f64(&self, secs: f64) -> Timestamp {
        self.offset_nanos((secs * 1e9).round() as i64)
    }

    /// Seconds since the epoch as a float. Lossy; for plotting and fitting only.
    pub fn as_secs_f64(&self) -> f64 {
        self.secs as f64 + self.nanos as f64 * 1e-9
    }

    pub fn to_le_bytes(&self) -> [u8; 12] {
        let mut out = [0u8; 12];
        out[..8].copy_from_slice(&self.secs.to_le_bytes());
        out[8..].copy_from_slice(&self.nanos.to_le_bytes());
        out
    }

    pub fn from_le_bytes(bytes: [u8; 12]) -> Result<Self, ModelError> {
        let secs = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"));
        let nanos = u32::from_le_bytes(bytes[8..].try_into().expect("4 bytes"));
        Timestamp::new(secs, nanos)
    }
}

/// Canonical text form: `<seconds>.<nanos zero-padded to 9 digits>`.
impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:09}", self.secs, self.nanos)
    }
}

impl FromStr for Timestamp {
    type Err = ModelError;

    /// Accepts the canonical form and also shorter fractional parts
    /// (`"12.5"` is 12 s 500 ms) or a bare integer second count.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ModelError::BadTimestampText(s.to_string());
        let (int, frac) = match s.split_once('.') {
            Some((i, f)) => (i, f),
            None => (s, ""),
        };
        if int.is_empty() || !int.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        if frac.len() > 9 || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let secs: u64 = int.parse().map_err(|_| bad())?;
        let nanos = if frac.is_empty() {
            0
        } else {
            let digits: u32 = frac.parse().map_err(|_| bad())?;
            digits * 10u32.pow(9 - frac.len() as u32)
        };
        Timestamp::new(secs, nanos)
    }
}

/// Exact signed difference `a - b` in nanoseconds.
pub fn timestamp_diff(a: Timestamp, b: Timestamp) -> Result<i64, ModelError> {
    let d = a.total_nanos() as i128 - b.total_nanos() as i128;
    i64::try_from(d).map_err(|_| ModelError::Overflow)
}

/// Source of timestamps.
pub trait Clock {
    fn now(&self) -> Timestamp;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Timestamp {
        let d = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
        Timestamp {
            secs: d.as_secs(),
            nanos: d.subsec_nanos(),
        }
    }
}

/// Manually advanced clock for simulation and tests.
#[derive(Debug, Default)]
pub struct ManualClock {
    nanos: AtomicU64,
}

impl ManualClock {
    pub fn new(start: Timestamp) -> Self {
        ManualClock {
            nanos: AtomicU64::new(start.total_nanos() as u64),
        }
    }

    pub fn set(&self, t: Timestamp) {
        self.nanos.store(t.total_nanos() as u64, Ordering::SeqCst);
    }

    pub fn advance_nanos(&self, delta: u64) {
        self.nanos.fetch_add(delta, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Timestamp {
        Timestamp::from_total_nanos(self.nanos.load(Ordering::SeqCst) as u128)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum StreamKind {
    PhysiologicalSensor,
    BehavioralDevice,
    Robot,
}

impl StreamKind {
    pub fn to_u8(self) -> u8 {
        match self {
            StreamKind::PhysiologicalSensor => 0,
            StreamKind::BehavioralDevice => 1,
            StreamKind::Robot => 2,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(StreamKind::PhysiologicalSensor),
            1 => Some(StreamKind::BehavioralDevice),
            2 => Some(StreamKind::Robot),
            _ => None,
        }
    }
}

/// Expected payload shape. Real-valued payloads are little-endian `f64`s.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PayloadSchema {
    Scalar,
    Vector(u32),
    Blob,
}

impl PayloadSchema {
    pub fn accepts(&self, payload: &Payload) -> bool {
        match *self {
            PayloadSchema::Scalar => payload.len() == 8,
            PayloadSchema::Vector(n) => payload.len() == 8 * n as usize,
            PayloadSchema::Blob => true,
        }
    }
}

/// A '/'-separated topic path whose first segment is the namespace.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StreamId(String);

impl StreamId {
    pub fn new(id: impl Into<String>) -> Result<Self, ModelError> {
        let id = id.into();
        if id.is_empty() {
            return Err(ModelError::InvalidStreamId(id, "empty"));
        }
        if id.split('/').any(str::is_empty) {
            return Err(ModelError::InvalidStreamId(id, "empty segment"));
        }
        if id.split('/').any(|s| s == "*" || s == "**") {
            return Err(ModelError::InvalidStreamId(id, "wildcard in concrete topic"));
        }
        if id.len() > u16::MAX as usize {
            return Err(ModelError::InvalidStreamId(id, "longer than 65535 bytes"));
        }
        Ok(StreamId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn namespace(&self) -> &str {
        self.0.split('/').next().unwrap_or_default()
    }

    pub fn segments(&self) -> impl Iterator<Item = &str> {
        self.0.split('/')
    }
}

impl fmt::Display for StreamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for StreamId {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StreamId::new(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamDescriptor {
    pub id: StreamId,
    pub kind: StreamKind,
    pub nominal_rate_hz: f64,
    pub schema: PayloadSchema,
}

impl StreamDescriptor {
    pub fn new(
        id: impl Into<String>,
        kind: StreamKind,
        nominal_rate_hz: f64,
        schema: PayloadSchema,
    ) -> Result<Self, ModelError> {
        if !(nominal_rate_hz.is_finite() && nominal_rate_hz > 0.0) {
            return Err(ModelError::InvalidRate(nominal_rate_hz));
        }
        Ok(StreamDescriptor {
            id: StreamId::new(id)?,
            kind,
            nominal_rate_hz,
            schema,
        })
    }

    /// Nominal period in nanoseconds, rounded.
    pub fn period_nanos(&self) -> i64 {
        (1e9 / self.nominal_rate_hz).round() as i64
    }
}

/// Raw payload bytes. Real-valued payloads are packed little-endian `f64`s.
#[derive(Debug, Clone, PartialEq, Eq, Default, Hash)]
pub struct Payload(Vec<u8>);

impl Payload {
    pub fn from_bytes(bytes: impl Into<Vec<u8>>) -> Self {
        Payload(bytes.into())
    }

    pub fn scalar(v: f64) -> Self {
        Payload(v.to_le_bytes().to_vec())
    }

    pub fn reals(values: &[f64]) -> Self {
        Payload(values.iter().flat_map(|v| v.to_le_bytes()).collect())
    }

    pub fn text(s: &str) -> Self {
        Payload(s.as_bytes().to_vec())
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Decodes as packed `f64`s; `None` if the length is not a multiple of 8.
    pub fn to_reals(&self) -> Option<Vec<f64>> {
        if !self.0.len().is_multiple_of(8) {
            return None;
        }
        Some(
            self.0
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
        )
    }

    /// First real value, for scalar streams.
    pub fn first_real(&self) -> Option<f64> {
        self.0
            .get(..8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
    }

    pub fn as_text(&self) -> Option<&str> {
        std::str::from_utf8(&self.0).ok()
    }
}

impl From<Vec<u8>> for Payload {
    fn from(v: Vec<u8>) -> Self {
        Payload(v)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StampedMessage {
    pub stream: StreamId,
    pub stamp: Timestamp,
    pub seq: u64,
    pub payload: Payload,
    /// Set on messages republished from a recording.
    pub replayed: bool,
}

impl StampedMessage {
    pub fn new(stream: StreamId, stamp: Timestamp, seq: u64, payload: Payload) -> Self {
        StampedMessage {
            stream,
            stamp,
            seq,
            payload,
            replayed: false,
        }
    }

    /// Ordering used by recordings: stamp, then stream id, then seq.
    pub fn replay_order(&self, other: &StampedMessage) -> std::cmp::Ordering {
        self.stamp
            .cmp(&other.stamp)
            .then_with(|| self.stream.cmp(&other.stream))
            .then_with(|| self.seq.cmp(&other.seq))
    }
}

/// Stamps outgoing messages for one stream and owns its sequence counter.
#[derive(Debug, Clone)]
pub struct Stamper {
    descriptor: StreamDescriptor,
    next_seq: u64,
    last_stamp: Option<Timestamp>,
}

impl Stamper {
    pub fn new(descriptor: StreamDescriptor) -> Self {
        Stamper {
            descriptor,
            next_seq: 0,
            last_stamp: None,
        }
    }

    pub fn descriptor(&self) -> &StreamDescriptor {
        &self.descriptor
    }

    /// Stamps `payload` with the current clock reading. Stamps never go
    /// backwards for one stream even if the clock does.
    pub fn stamp_now(&mut self, clock: &dyn Clock, payload: Payload) -> Result<StampedMessage, ModelError> {
        let stamp = clock.now();
        self.stamp_at(stamp, payload)
    }

    pub fn stamp_at(&mut self, stamp: Timestamp, payload: Payload) -> Result<StampedMessage, ModelError> {
        if !self.descriptor.schema.accepts(&payload) {
            return Err(ModelError::SchemaMismatch {
                schema: self.descriptor.schema,
                got: payload.len(),
            });
        }
        let stamp = match self.last_stamp {
            Some(last) if stamp < last => last,
            _ => stamp,
        };
        self.last_stamp = Some(stamp);
        let seq = self.next_seq;
        self.next_seq += 1;
        Ok(StampedMessage::new(self.descriptor.id.clone(), stamp, seq, payload))
    }
}

/// Failure reported by a [`MessageSink`].
#[derive(Debug, Error)]
pub enum SinkError {
    #[error("sink disconnected")]
    Disconnected,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Other(String),
}

/// Anything that accepts published streams: a bus client, a bag writer or
/// an in-memory collector.
pub trait MessageSink {
    fn advertise(&mut self, descriptor: &StreamDescriptor) -> Result<(), SinkError>;
    fn publish(&mut self, message: &StampedMessage) -> Result<(), SinkError>;
}

/// Collects everything in memory.
#[derive(Debug, Default, Clone)]
pub struct MemorySink {
    pub descriptors: Vec<StreamDescriptor>,
    pub messages: Vec<StampedMessage>,
}

impl MessageSink for MemorySink {
    fn advertise(&mut self, descriptor: &StreamDescriptor) -> Result<(), SinkError> {
        if !self.descriptors.iter().any(|d| d.id == descriptor.id) {
            self.descriptors.push(descriptor.clone());
        }
        Ok(())
    }

    fn publish(&mut self, message: &StampedMessage) -> Result<(), SinkError> {
        self.messages.push(message.clone());
        Ok(())
    }
}

impl<S: MessageSink + ?Sized> MessageSink for &mut S {
    fn advertise(&mut self, descriptor: &StreamDescriptor) -> Result<(), SinkError> {
        (**self).advertise(descriptor)
    }

    fn publish(&mut self, message: &StampedMessage) -> Result<(), SinkError> {
        (**self).publish(message)
    }
}
