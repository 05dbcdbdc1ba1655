use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufReader, Read, Seek, SeekFrom};
use std::path::{Path, PathBuf};

use log::warn;

use crate::model::{StampedMessage, StreamDescriptor, StreamId, Timestamp};

use super::format::*;
use super::BagError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkInfo {
    pub offset: u64,
    pub header: ChunkHeader,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StreamEntry {
    pub descriptor: Option<StreamDescriptor>,
    /// (chunk offset, messages of this stream in that chunk)
    pub chunks: Vec<(u64, u32)>,
}

impl StreamEntry {
    pub fn count(&self) -> u64 {
        self.chunks.iter().map(|&(_, n)| n as u64).sum()
    }
}

/// How the chunk list was obtained.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IndexSource {
    Index,
    /// The index was missing or inconsistent and the chunks were scanned.
    /// `truncated` is set when the scan stopped at an incomplete or damaged
    /// chunk rather than at the end of the data.
    Recovered {
        reason: String,
        truncated: bool,
    },
}

/// An opened bag: header, stream table and chunk list. Messages are read on
/// demand.
#[derive(Debug)]
pub struct Bag {
    path: PathBuf,
    file: BufReader<File>,
    size: u64,
    created: Timestamp,
    header_total: u64,
    streams: BTreeMap<StreamId, StreamEntry>,
    chunks: Vec<ChunkInfo>,
    source: IndexSource,
}

impl Bag {
    /// Opens a bag, falling back to a recovery scan if the index is missing
    /// or does not match the data.
    pub fn open(path: impl AsRef<Path>) -> Result<Bag, BagError> {
        Bag::open_inner(path.as_ref(), false)
    }

    /// Opens a bag and fails instead of recovering.
    pub fn open_strict(path: impl AsRef<Path>) -> Result<Bag, BagError> {
        Bag::open_inner(path.as_ref(), true)
    }

    fn open_inner(path: &Path, strict: bool) -> Result<Bag, BagError> {
        let mut file = BufReader::new(File::open(path)?);
        let size = file.get_ref().metadata()?.len();
        let (created, header_total, header_streams, data_start) = read_header(&mut file)?;
        let mut bag = Bag {
            path: path.to_path_buf(),
            file,
            size,
            created,
            header_total,
            streams: BTreeMap::new(),
            chunks: Vec::new(),
            source: IndexSource::Index,
        };
        match bag.load_index(data_start) {
            Ok(()) => {}
            Err(reason) if strict => return Err(BagError::CorruptIndex(reason)),
            Err(reason) => {
                warn!("{}: {reason}; scanning chunks", path.display());
                let truncated = bag.recover(data_start);
                bag.source = IndexSource::Recovered { reason, truncated };
            }
        }
        for d in header_streams {
            bag.streams.entry(d.id.clone()).or_default().descriptor.get_or_insert(d);
        }
        Ok(bag)
    }

    fn load_index(&mut self, data_start: u64) -> Result<(), String> {
        if self.size < data_start + FOOTER_LEN as u64 {
            return Err("no index footer".into());
        }
        let footer = read_at(&mut self.file, self.size - FOOTER_LEN as u64, FOOTER_LEN).map_err(|e| e.to_string())?;
        if &footer[..8] != FOOTER_MAGIC {
            return Err("no index footer".into());
        }
        let index_offset = u64::from_le_bytes(footer[8..].try_into().expect("8 bytes"));
        if index_offset < data_start || index_offset > self.size - FOOTER_LEN as u64 {
            return Err(format!("index offset {index_offset} outside the file"));
        }
        let len = (self.size - FOOTER_LEN as u64 - index_offset) as usize;
        let raw = read_at(&mut self.file, index_offset, len).map_err(|e| e.to_string())?;
        let streams = parse_index(&raw).ok_or("index is malformed")?;
        let total: u64 = streams.values().map(StreamEntry::count).sum();
        if total != self.header_total {
            return Err(format!(
                "index lists {total} messages but the header says {}",
                self.header_total
            ));
        }
        let mut offsets: Vec<u64> = streams
            .values()
            .flat_map(|s| s.chunks.iter().map(|&(o, _)| o))
            .collect();
        offsets.sort_unstable();
        offsets.dedup();
        let mut chunks = Vec::with_capacity(offsets.len());
        for offset in offsets {
            if offset < data_start || offset + CHUNK_HEADER_LEN as u64 > index_offset {
                return Err(format!("chunk offset {offset} outside the data section"));
            }
            let raw = read_at(&mut self.file, offset, CHUNK_HEADER_LEN).map_err(|e| e.to_string())?;
            let header = ChunkHeader::decode(raw.as_slice().try_into().expect("header length"))
                .ok_or_else(|| format!("no chunk at offset {offset}"))?;
            if offset + (CHUNK_HEADER_LEN as u64) + header.data_len as u64 > index_offset {
                return Err(format!("chunk at offset {offset} overruns the index"));
            }
            chunks.push(ChunkInfo { offset, header });
        }
        for s in streams.values() {
            for &(o, n) in &s.chunks {
                let c = chunks.iter().find(|c| c.offset == o).expect("collected above");
                if n > c.header.count {
                    return Err(format!("chunk at offset {o} holds fewer messages than indexed"));
                }
            }
        }
        self.streams = streams;
        self.chunks = chunks;
        Ok(())
    }

    /// Walks chunks from the start of the data until the first one that is
    /// incomplete or fails its checksum. Returns whether it stopped early.
    fn recover(&mut self, data_start: u64) -> bool {
        self.streams.clear();
        self.chunks.clear();
        let mut offset = data_start;
        let truncated = loop {
            if offset == self.size {
                break false;
            }
            let raw = match read_at(&mut self.file, offset, CHUNK_HEADER_LEN) {
                Ok(r) => r,
                Err(_) => break true,
            };
            let Some(header) = ChunkHeader::decode(raw.as_slice().try_into().expect("header length")) else {
                // an index (possibly damaged) or garbage ends the chunk data
                break &raw[..4] != INDEX_MAGIC;
            };
            let data = match read_at(
                &mut self.file,
                offset + CHUNK_HEADER_LEN as u64,
                header.data_len as usize,
            ) {
                Ok(d) => d,
                Err(_) => break true,
            };
            if crc32fast::hash(&data) != header.crc || header.compressed {
                break true;
            }
            let Ok(records) = parse_records(&data) else { break true };
            let mut counts: BTreeMap<StreamId, u32> = BTreeMap::new();
            for r in records {
                match r {
                    Record::Stream(d) => {
                        let id = d.id.clone();
                        self.streams.entry(id).or_default().descriptor = Some(d);
                    }
                    Record::Message(m) => *counts.entry(m.stream).or_default() += 1,
                }
            }
            for (id, n) in counts {
                self.streams.entry(id).or_default().chunks.push((offset, n));
            }
            self.chunks.push(ChunkInfo { offset, header });
            offset += (CHUNK_HEADER_LEN + header.data_len as usize) as u64;
        };
        truncated
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn size_bytes(&self) -> u64 {
        self.size
    }

    pub fn created(&self) -> Timestamp {
        self.created
    }

    pub fn source(&self) -> &IndexSource {
        &self.source
    }

    pub fn is_recovered(&self) -> bool {
        matches!(self.source, IndexSource::Recovered { .. })
    }

    pub fn streams(&self) -> &BTreeMap<StreamId, StreamEntry> {
        &self.streams
    }

    pub fn descriptors(&self) -> Vec<StreamDescriptor> {
        self.streams.values().filter_map(|s| s.descriptor.clone()).collect()
    }

    pub fn chunks(&self) -> &[ChunkInfo] {
        &self.chunks
    }

    pub fn message_count(&self) -> u64 {
        self.streams.values().map(StreamEntry::count).sum()
    }

    /// Messages of one chunk in file order.
    pub fn read_chunk(&mut self, chunk: &ChunkInfo) -> Result<Vec<StampedMessage>, BagError> {
        let offset = chunk.offset;
        if chunk.header.compressed {
            return Err(BagError::UnsupportedCompression { offset });
        }
        let data = read_at(
            &mut self.file,
            offset + CHUNK_HEADER_LEN as u64,
            chunk.header.data_len as usize,
        )
        .map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => BagError::TruncatedChunk { offset },
            _ => BagError::Io(e),
        })?;
        if crc32fast::hash(&data) != chunk.header.crc {
            return Err(BagError::CorruptChunk {
                offset,
                reason: "checksum mismatch",
            });
        }
        let records = parse_records(&data).map_err(|reason| BagError::CorruptChunk { offset, reason })?;
        Ok(records
            .into_iter()
            .filter_map(|r| match r {
                Record::Message(m) => Some(m),
                Record::Stream(_) => None,
            })
            .collect())
    }

    /// Every message, sorted by stamp, then stream id, then seq.
    pub fn messages(&mut self) -> Result<Vec<StampedMessage>, BagError> {
        let chunks = self.chunks.clone();
        let mut out = Vec::new();
        for c in &chunks {
            out.extend(self.read_chunk(c)?);
        }
        out.sort_by(StampedMessage::replay_order);
        Ok(out)
    }

    /// Stamp of the first and last message according to the chunk headers.
    pub fn time_range(&self) -> Option<(Timestamp, Timestamp)> {
        let with_messages = self.chunks.iter().filter(|c| c.header.count > 0);
        let first = with_messages.clone().map(|c| c.header.first).min()?;
        let last = with_messages.map(|c| c.header.last).max()?;
        Some((first, last))
    }
}

/// Reads every message of a bag in replay order.
pub fn read(path: impl AsRef<Path>) -> Result<std::vec::IntoIter<StampedMessage>, BagError> {
    Ok(Bag::open(path)?.messages()?.into_iter())
}

fn read_at<R: Read + Seek>(r: &mut R, offset: u64, len: usize) -> io::Result<Vec<u8>> {
    r.seek(SeekFrom::Start(offset))?;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

type Header = (Timestamp, u64, Vec<StreamDescriptor>, u64);

fn read_header<R: Read>(r: &mut R) -> Result<Header, BagError> {
    let mut magic = Vec::with_capacity(MAGIC.len());
    r.by_ref().take(MAGIC.len() as u64).read_to_end(&mut magic)?;
    if magic.as_slice() != &MAGIC[..magic.len()] {
        return Err(BagError::BadMagic);
    }
    if magic.len() < MAGIC.len() {
        return Err(BagError::TruncatedHeader);
    }
    let eof = |e: io::Error| match e.kind() {
        io::ErrorKind::UnexpectedEof => BagError::TruncatedHeader,
        _ => BagError::Io(e),
    };
    let mut fixed = [0u8; 12 + 8 + 4];
    r.read_exact(&mut fixed).map_err(eof)?;
    let created = Timestamp::from_le_bytes(fixed[..12].try_into().expect("12 bytes"))
        .map_err(|_| BagError::CorruptHeader("creation stamp"))?;
    let total = u64::from_le_bytes(fixed[12..20].try_into().expect("8 bytes"));
    let n = u32::from_le_bytes(fixed[20..24].try_into().expect("4 bytes"));
    let mut pos = (MAGIC.len() + fixed.len()) as u64;
    let mut streams = Vec::new();
    for _ in 0..n {
        let mut len = [0u8; 4];
        r.read_exact(&mut len).map_err(eof)?;
        let len = u32::from_le_bytes(len) as usize;
        let mut body = Vec::new();
        r.by_ref().take(len as u64).read_to_end(&mut body)?;
        if body.len() < len {
            return Err(BagError::TruncatedHeader);
        }
        streams.push(parse_descriptor(&body).map_err(|_| BagError::CorruptHeader("stream table"))?);
        pos += 4 + len as u64;
    }
    Ok((created, total, streams, pos))
}

fn parse_index(raw: &[u8]) -> Option<BTreeMap<StreamId, StreamEntry>> {
    let mut c = Cursor::new(raw);
    if c.take(4)? != INDEX_MAGIC {
        return None;
    }
    let n = c.u32()?;
    let mut out = BTreeMap::new();
    for _ in 0..n {
        let len = c.u16()? as usize;
        let id = StreamId::new(std::str::from_utf8(c.take(len)?).ok()?).ok()?;
        let descriptor = match c.u8()? {
            0 => None,
            1 => {
                let len = c.u32()? as usize;
                Some(parse_descriptor(c.take(len)?).ok()?)
            }
            _ => return None,
        };
        let entries = c.u32()?;
        let mut chunks = Vec::new();
        for _ in 0..entries {
            chunks.push((c.u64()?, c.u32()?));
        }
        out.insert(id, StreamEntry { descriptor, chunks });
    }
    c.is_empty().then_some(out)
}
