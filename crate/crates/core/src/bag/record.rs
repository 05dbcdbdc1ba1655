use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use log::info;

use crate::bus::{BusError, Client, Incoming, RECORDER_QUEUE_CAPACITY};
use crate::model::{Clock, SystemClock};

use super::writer::{BagWriter, WriteSummary, WriterConfig};
use super::BagError;

#[derive(Debug, Clone)]
pub struct RecordOptions {
    pub pattern: String,
    pub writer: WriterConfig,
    /// Stop after this much wall time.
    pub duration: Option<Duration>,
    /// Stop after this many messages.
    pub max_messages: Option<u64>,
    /// Stop once nothing has arrived for this long.
    pub idle: Option<Duration>,
}

impl RecordOptions {
    pub fn new(pattern: impl Into<String>) -> Self {
        RecordOptions {
            pattern: pattern.into(),
            writer: WriterConfig::default(),
            duration: None,
            max_messages: None,
            idle: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Requested,
    Duration,
    MaxMessages,
    Idle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordSummary {
    pub written: WriteSummary,
    pub reason: StopReason,
}

/// Subscribes `client` to `options.pattern` and appends everything received
/// to a new bag at `path` until `stop` is raised or a limit is hit. If the
/// broker goes away the bag is still closed properly before
/// [`BagError::BrokerDisconnected`] is returned.
pub fn record(
    client: &mut Client,
    path: impl AsRef<Path>,
    options: &RecordOptions,
    stop: &AtomicBool,
) -> Result<RecordSummary, BagError> {
    let mut writer = BagWriter::create_with(path, SystemClock.now(), &[], options.writer.clone())?;
    client.subscribe(&options.pattern, RECORDER_QUEUE_CAPACITY)?;
    info!("recording {} to {}", options.pattern, writer.path().display());
    let started = Instant::now();
    let mut last_activity = Instant::now();
    let reason = loop {
        if stop.load(Ordering::SeqCst) {
            break StopReason::Requested;
        }
        if options.duration.is_some_and(|d| started.elapsed() >= d) {
            break StopReason::Duration;
        }
        if options.max_messages.is_some_and(|n| writer.message_count() >= n) {
            break StopReason::MaxMessages;
        }
        if options.idle.is_some_and(|d| last_activity.elapsed() >= d) {
            break StopReason::Idle;
        }
        match client.recv_timeout(Duration::from_millis(50)) {
            Ok(Some(Incoming::Advertise(d))) => writer.add_stream(&d)?,
            Ok(Some(Incoming::Message(m))) => {
                writer.write(&m)?;
                last_activity = Instant::now();
            }
            Ok(None) => writer.tick()?,
            Err(BusError::Disconnected) => {
                let written = writer.finish()?;
                return Err(BagError::BrokerDisconnected {
                    recorded: written.messages,
                });
            }
            Err(e) => return Err(e.into()),
        }
    };
    let written = writer.finish()?;
    info!("recorded {} messages ({reason:?})", written.messages);
    Ok(RecordSummary { written, reason })
}
