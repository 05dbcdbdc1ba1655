//! Session recording: a chunked, indexed file of every message seen on the
//! bus, plus playback with the original timing.

pub mod format;
mod play;
mod reader;
mod record;
mod writer;

use std::fmt;
use std::path::Path;

use thiserror::Error;

use crate::bus::BusError;
use crate::model::{SinkError, StreamDescriptor, StreamId, Timestamp};

pub use play::{PlayControl, PlayStats, PlaybackHandle};
pub use reader::{read, Bag, ChunkInfo, IndexSource, StreamEntry};
pub use record::{record, RecordOptions, RecordSummary, StopReason};
pub use writer::{BagWriter, WriteSummary, WriterConfig};

#[derive(Debug, Error)]
pub enum BagError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a bag file (bad magic)")]
    BadMagic,
    #[error("bag header is cut short")]
    TruncatedHeader,
    #[error("bag header is corrupt: {0}")]
    CorruptHeader(&'static str),
    #[error("bag index is corrupt: {0}")]
    CorruptIndex(String),
    #[error("chunk at offset {offset} is cut short")]
    TruncatedChunk { offset: u64 },
    #[error("chunk at offset {offset} is corrupt: {reason}")]
    CorruptChunk { offset: u64, reason: &'static str },
    #[error("chunk at offset {offset} is compressed, which this version cannot read")]
    UnsupportedCompression { offset: u64 },
    #[error("chunk of {0} bytes is too large")]
    ChunkTooLarge(usize),
    #[error("playback rate must be a positive number, got {0}")]
    InvalidRate(f64),
    #[error("broker disconnected after {recorded} messages were recorded")]
    BrokerDisconnected { recorded: u64 },
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error(transparent)]
    Sink(#[from] SinkError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamInfo {
    pub id: StreamId,
    pub descriptor: Option<StreamDescriptor>,
    pub count: u64,
    /// Messages per second between the stream's first and last stamp.
    pub observed_rate_hz: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BagInfo {
    pub size_bytes: u64,
    pub created: Timestamp,
    pub first: Option<Timestamp>,
    pub last: Option<Timestamp>,
    pub duration_ns: u64,
    pub message_count: u64,
    pub chunk_count: usize,
    pub streams: Vec<StreamInfo>,
    pub source: IndexSource,
}

/// Summary of a bag. Counts come from the index (or the recovery scan).
pub fn bag_info(path: impl AsRef<Path>) -> Result<BagInfo, BagError> {
    let mut bag = Bag::open(path)?;
    let messages = bag.messages()?;
    let mut streams = Vec::new();
    for (id, entry) in bag.streams() {
        let mut stamps = messages.iter().filter(|m| &m.stream == id).map(|m| m.stamp);
        let first = stamps.next();
        let last = stamps.next_back().or(first);
        let observed_rate_hz = match (first, last) {
            (Some(f), Some(l)) if l > f => {
                let span = (l.total_nanos() - f.total_nanos()) as f64 / 1e9;
                Some((entry.count() - 1) as f64 / span)
            }
            _ => None,
        };
        streams.push(StreamInfo {
            id: id.clone(),
            descriptor: entry.descriptor.clone(),
            count: entry.count(),
            observed_rate_hz,
        });
    }
    let first = messages.first().map(|m| m.stamp);
    let last = messages.last().map(|m| m.stamp);
    let duration_ns = match (first, last) {
        (Some(f), Some(l)) => (l.total_nanos() - f.total_nanos()) as u64,
        _ => 0,
    };
    Ok(BagInfo {
        size_bytes: bag.size_bytes(),
        created: bag.created(),
        first,
        last,
        duration_ns,
        message_count: bag.message_count(),
        chunk_count: bag.chunks().len(),
        streams,
        source: bag.source().clone(),
    })
}

impl fmt::Display for BagInfo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "size:      {} bytes", self.size_bytes)?;
        writeln!(f, "created:   {}", self.created)?;
        if let (Some(a), Some(b)) = (self.first, self.last) {
            writeln!(f, "start:     {a}")?;
            writeln!(f, "end:       {b}")?;
        }
        writeln!(f, "duration:  {:.3} s", self.duration_ns as f64 / 1e9)?;
        writeln!(f, "messages:  {} in {} chunks", self.message_count, self.chunk_count)?;
        if let IndexSource::Recovered { reason, truncated } = &self.source {
            let tail = if *truncated { ", damaged tail skipped" } else { "" };
            writeln!(f, "index:     rebuilt by scan ({reason}{tail})")?;
        }
        writeln!(f, "streams:   {}", self.streams.len())?;
        let width = self.streams.iter().map(|s| s.id.as_str().len()).max().unwrap_or(0);
        for s in &self.streams {
            let kind = s
                .descriptor
                .as_ref()
                .map_or("-".to_string(), |d| format!("{:?}", d.kind));
            let nominal = s
                .descriptor
                .as_ref()
                .map_or("-".to_string(), |d| format!("{:.2} Hz", d.nominal_rate_hz));
            let observed = s.observed_rate_hz.map_or("-".to_string(), |r| format!("{r:.3} Hz"));
            writeln!(
                f,
                "  {:<width$}  {:>8} msgs  {:<20}  nominal {:>10}  observed {:>12}",
                s.id.as_str(),
                s.count,
                kind,
                nominal,
                observed,
            )?;
        }
        Ok(())
    }
}
