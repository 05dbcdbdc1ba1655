use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufWriter, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use crate::model::{Clock, StampedMessage, StreamDescriptor, StreamId, SystemClock, Timestamp};

use super::format::*;
use super::BagError;

#[derive(Debug, Clone)]
pub struct WriterConfig {
    /// A chunk is flushed once its data reaches this many bytes.
    pub chunk_bytes: usize,
    /// ... or once it has been open this long.
    pub chunk_interval: Duration,
}

impl Default for WriterConfig {
    fn default() -> Self {
        WriterConfig {
            chunk_bytes: 4 << 20,
            chunk_interval: Duration::from_secs(5),
        }
    }
}

#[derive(Debug, Clone, Default)]
struct StreamIndex {
    descriptor: Option<StreamDescriptor>,
    entries: Vec<(u64, u32)>,
}

#[derive(Default)]
struct OpenChunk {
    data: Vec<u8>,
    first: Option<Timestamp>,
    last: Option<Timestamp>,
    count: u32,
    opened: Option<Instant>,
    per_stream: HashMap<StreamId, (Timestamp, u32)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WriteSummary {
    pub path: PathBuf,
    pub messages: u64,
    pub chunks: u64,
    pub streams: usize,
    pub bytes: u64,
}

/// Append-only bag writer. Dropping it without calling [`BagWriter::finish`]
/// leaves a bag without an index, readable through the recovery scan up to
/// the last flushed chunk.
pub struct BagWriter {
    file: BufWriter<File>,
    path: PathBuf,
    pos: u64,
    config: WriterConfig,
    chunk: OpenChunk,
    streams: BTreeMap<StreamId, StreamIndex>,
    total: u64,
    chunks: u64,
}

impl BagWriter {
    pub fn create(path: impl AsRef<Path>) -> Result<BagWriter, BagError> {
        BagWriter::create_with(path, SystemClock.now(), &[], WriterConfig::default())
    }

    pub fn create_with(
        path: impl AsRef<Path>,
        created: Timestamp,
        streams: &[StreamDescriptor],
        config: WriterConfig,
    ) -> Result<BagWriter, BagError> {
        let path = path.as_ref().to_path_buf();
        let mut file = BufWriter::new(File::create(&path)?);
        let mut header = Vec::new();
        header.extend_from_slice(MAGIC);
        header.extend_from_slice(&created.to_le_bytes());
        header.extend_from_slice(&0u64.to_le_bytes());
        header.extend_from_slice(&(streams.len() as u32).to_le_bytes());
        let mut index = BTreeMap::new();
        for d in streams {
            let body = descriptor_body(d);
            header.extend_from_slice(&(body.len() as u32).to_le_bytes());
            header.extend_from_slice(&body);
            index.insert(
                d.id.clone(),
                StreamIndex {
                    descriptor: Some(d.clone()),
                    entries: Vec::new(),
                },
            );
        }
        file.write_all(&header)?;
        Ok(BagWriter {
            file,
            path,
            pos: header.len() as u64,
            config,
            chunk: OpenChunk::default(),
            streams: index,
            total: 0,
            chunks: 0,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn message_count(&self) -> u64 {
        self.total
    }

    /// Registers or updates a stream description. The description is also
    /// written into the data so that a recovery scan can find it.
    pub fn add_stream(&mut self, descriptor: &StreamDescriptor) -> Result<(), BagError> {
        let entry = self.streams.entry(descriptor.id.clone()).or_default();
        if entry.descriptor.as_ref() == Some(descriptor) {
            return Ok(());
        }
        entry.descriptor = Some(descriptor.clone());
        self.chunk.opened.get_or_insert_with(Instant::now);
        put_record(&mut self.chunk.data, RECORD_STREAM, &descriptor_body(descriptor));
        self.maybe_flush()
    }

    pub fn write(&mut self, msg: &StampedMessage) -> Result<(), BagError> {
        if let Some((last, _)) = self.chunk.per_stream.get(&msg.stream) {
            if msg.stamp < *last {
                // keep chunks stamp-nondecreasing per stream
                self.flush_chunk()?;
            }
        }
        let c = &mut self.chunk;
        c.opened.get_or_insert_with(Instant::now);
        put_message(&mut c.data, msg);
        c.first = Some(c.first.map_or(msg.stamp, |f| f.min(msg.stamp)));
        c.last = Some(c.last.map_or(msg.stamp, |l| l.max(msg.stamp)));
        c.count += 1;
        let e = c.per_stream.entry(msg.stream.clone()).or_insert((msg.stamp, 0));
        e.0 = msg.stamp;
        e.1 += 1;
        self.streams.entry(msg.stream.clone()).or_default();
        self.total += 1;
        self.maybe_flush()
    }

    /// Flushes the open chunk if it has been open longer than the configured
    /// interval. Call periodically when messages may stop arriving.
    pub fn tick(&mut self) -> Result<(), BagError> {
        if self
            .chunk
            .opened
            .is_some_and(|t| t.elapsed() >= self.config.chunk_interval)
        {
            self.flush_chunk()?;
        }
        Ok(())
    }

    fn maybe_flush(&mut self) -> Result<(), BagError> {
        if self.chunk.data.len() >= self.config.chunk_bytes {
            self.flush_chunk()
        } else {
            self.tick()
        }
    }

    /// Writes the open chunk, if any, and pushes it to the operating system.
    pub fn flush_chunk(&mut self) -> Result<(), BagError> {
        if self.chunk.data.is_empty() {
            return Ok(());
        }
        let c = std::mem::take(&mut self.chunk);
        let header = ChunkHeader {
            first: c.first.unwrap_or(Timestamp::ZERO),
            last: c.last.unwrap_or(Timestamp::ZERO),
            count: c.count,
            compressed: false,
            data_len: u32::try_from(c.data.len()).map_err(|_| BagError::ChunkTooLarge(c.data.len()))?,
            crc: crc32fast::hash(&c.data),
        };
        let offset = self.pos;
        self.file.write_all(&header.encode())?;
        self.file.write_all(&c.data)?;
        self.file.flush()?;
        self.pos += (CHUNK_HEADER_LEN + c.data.len()) as u64;
        self.chunks += 1;
        for (id, (_, n)) in c.per_stream {
            self.streams.entry(id).or_default().entries.push((offset, n));
        }
        Ok(())
    }

    /// Flushes the last chunk and writes the index, footer and header total.
    pub fn finish(mut self) -> Result<WriteSummary, BagError> {
        self.flush_chunk()?;
        let index_offset = self.pos;
        let mut index = Vec::new();
        index.extend_from_slice(INDEX_MAGIC);
        index.extend_from_slice(&(self.streams.len() as u32).to_le_bytes());
        for (id, s) in &self.streams {
            index.extend_from_slice(&(id.as_str().len() as u16).to_le_bytes());
            index.extend_from_slice(id.as_str().as_bytes());
            match &s.descriptor {
                Some(d) => {
                    let body = descriptor_body(d);
                    index.push(1);
                    index.extend_from_slice(&(body.len() as u32).to_le_bytes());
                    index.extend_from_slice(&body);
                }
                None => index.push(0),
            }
            index.extend_from_slice(&(s.entries.len() as u32).to_le_bytes());
            for (off, n) in &s.entries {
                index.extend_from_slice(&off.to_le_bytes());
                index.extend_from_slice(&n.to_le_bytes());
            }
        }
        index.extend_from_slice(FOOTER_MAGIC);
        index.extend_from_slice(&index_offset.to_le_bytes());
        self.file.write_all(&index)?;
        self.pos += index.len() as u64;
        self.file.flush()?;
        let file = self.file.get_mut();
        file.seek(SeekFrom::Start(TOTAL_OFFSET))?;
        file.write_all(&self.total.to_le_bytes())?;
        file.sync_all()?;
        Ok(WriteSummary {
            path: self.path.clone(),
            messages: self.total,
            chunks: self.chunks,
            streams: self.streams.len(),
            bytes: self.pos,
        })
    }
}

impl crate::model::MessageSink for BagWriter {
    fn advertise(&mut self, descriptor: &StreamDescriptor) -> Result<(), crate::model::SinkError> {
        self.add_stream(descriptor).map_err(sink_error)
    }

    fn publish(&mut self, message: &StampedMessage) -> Result<(), crate::model::SinkError> {
        self.write(message).map_err(sink_error)
    }
}

fn sink_error(e: BagError) -> crate::model::SinkError {
    match e {
        BagError::Io(io) => crate::model::SinkError::Io(io),
        other => crate::model::SinkError::Other(other.to_string()),
    }
}
