//! Time filter aligning several message streams into tuples holding one
//! message per stream.
//!
//! Two policies are supported. `ExactTime` only matches identical stamps.
//! `ApproximateTime` matches messages whose stamps lie within `slop` of each
//! other using the latest queue head as pivot: heads more than `slop` older
//! than the pivot are dropped, then every stream contributes the message
//! closest to the pivot (the earlier one on ties). Consecutive tuples never
//! overlap in time: every member of a tuple is stamped after the previous
//! tuple's pivot. Since the pivot is always the earliest one any tuple could
//! still have, the filter emits as many tuples as an exhaustive search.
//!
//! Later arrivals can never produce an earlier pivot, so a tuple is emitted
//! as soon as every queue is non-empty. A later arrival could still have
//! been a closer member; the filter trades that spread for latency.

pub mod oracle;

use std::collections::{HashMap, VecDeque};

use thiserror::Error;

use crate::model::{Payload, StampedMessage, StreamDescriptor, StreamId, Timestamp};

pub use oracle::{brute_force_match, OracleTuple};

pub const DEFAULT_QUEUE_BOUND: usize = 64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SyncError {
    #[error("stream {0} does not participate in this filter")]
    UnknownStream(String),
    #[error("message on {stream} stamped {stamp} arrived after {last}")]
    OutOfOrder {
        stream: String,
        stamp: Timestamp,
        last: Timestamp,
    },
    #[error("a filter needs at least one stream")]
    NoStreams,
    #[error("stream {0} listed twice")]
    DuplicateStream(String),
    #[error("queue bound must be at least 1")]
    ZeroBound,
    #[error("{0} messages exceed the exhaustive search limit of {1}")]
    TooLarge(usize, usize),
    #[error("malformed synced tuple body")]
    MalformedTuple,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyncPolicy {
    ExactTime,
    ApproximateTime { slop_ns: u64 },
}

impl SyncPolicy {
    pub fn approximate_ms(ms: u64) -> Self {
        SyncPolicy::ApproximateTime {
            slop_ns: ms * 1_000_000,
        }
    }

    /// Approximate matching with a slop of half the slowest stream's period.
    pub fn default_for(streams: &[StreamDescriptor]) -> Self {
        let slowest = streams.iter().map(|d| d.nominal_rate_hz).fold(f64::INFINITY, f64::min);
        let slop_ns = if slowest.is_finite() {
            (0.5e9 / slowest).round() as u64
        } else {
            0
        };
        SyncPolicy::ApproximateTime { slop_ns }
    }

    pub fn slop_ns(&self) -> u64 {
        match *self {
            SyncPolicy::ExactTime => 0,
            SyncPolicy::ApproximateTime { slop_ns } => slop_ns,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyncedTuple {
    /// One message per participating stream, in the filter's stream order.
    pub messages: Vec<StampedMessage>,
    pub pivot_stamp: Timestamp,
    pub spread_ns: u64,
}

impl SyncedTuple {
    fn from_members(messages: Vec<StampedMessage>) -> Self {
        let pivot = messages.iter().map(|m| m.stamp).max().expect("non-empty tuple");
        let first = messages.iter().map(|m| m.stamp).min().expect("non-empty tuple");
        let spread_ns = (pivot.total_nanos() - first.total_nanos()) as u64;
        SyncedTuple {
            messages,
            pivot_stamp: pivot,
            spread_ns,
        }
    }

    pub fn topic(filter_name: &str) -> String {
        format!("synced/{filter_name}")
    }

    /// Republishable form: stamped with the pivot, body is the concatenation
    /// of `u16 id length | id | u32 payload length | payload` per member.
    pub fn to_message(&self, filter_name: &str, seq: u64) -> Result<StampedMessage, crate::model::ModelError> {
        let mut body = Vec::new();
        for m in &self.messages {
            let id = m.stream.as_str().as_bytes();
            body.extend_from_slice(&(id.len() as u16).to_le_bytes());
            body.extend_from_slice(id);
            body.extend_from_slice(&(m.payload.len() as u32).to_le_bytes());
            body.extend_from_slice(m.payload.as_bytes());
        }
        Ok(StampedMessage::new(
            StreamId::new(Self::topic(filter_name))?,
            self.pivot_stamp,
            seq,
            Payload::from_bytes(body),
        ))
    }

    pub fn decode_body(payload: &Payload) -> Result<Vec<(StreamId, Payload)>, SyncError> {
        let mut rest = payload.as_bytes();
        let mut out = Vec::new();
        let take = |rest: &mut &[u8], n: usize| -> Result<Vec<u8>, SyncError> {
            if rest.len() < n {
                return Err(SyncError::MalformedTuple);
            }
            let (head, tail) = rest.split_at(n);
            *rest = tail;
            Ok(head.to_vec())
        };
        while !rest.is_empty() {
            let n = u16::from_le_bytes(take(&mut rest, 2)?.try_into().expect("2")) as usize;
            let id = String::from_utf8(take(&mut rest, n)?).map_err(|_| SyncError::MalformedTuple)?;
            let id = StreamId::new(id).map_err(|_| SyncError::MalformedTuple)?;
            let len = u32::from_le_bytes(take(&mut rest, 4)?.try_into().expect("4")) as usize;
            out.push((id, Payload::from_bytes(take(&mut rest, len)?)));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SyncStats {
    pub emitted: u64,
    pub out_of_order: u64,
    pub overflow_dropped: u64,
    pub discarded: u64,
}

#[derive(Debug, Clone)]
pub struct SyncFilter {
    streams: Vec<StreamId>,
    index: HashMap<StreamId, usize>,
    queues: Vec<VecDeque<StampedMessage>>,
    last_accepted: Vec<Option<Timestamp>>,
    bound: usize,
    policy: SyncPolicy,
    last_pivot: Option<Timestamp>,
    stats: SyncStats,
}

impl SyncFilter {
    pub fn new(streams: Vec<StreamId>, policy: SyncPolicy) -> Result<Self, SyncError> {
        if streams.is_empty() {
            return Err(SyncError::NoStreams);
        }
        let mut index = HashMap::new();
        for (i, s) in streams.iter().enumerate() {
            if index.insert(s.clone(), i).is_some() {
                return Err(SyncError::DuplicateStream(s.to_string()));
            }
        }
        let n = streams.len();
        Ok(SyncFilter {
            streams,
            index,
            queues: vec![VecDeque::new(); n],
            last_accepted: vec![None; n],
            bound: DEFAULT_QUEUE_BOUND,
            policy,
            last_pivot: None,
            stats: SyncStats::default(),
        })
    }

    pub fn with_queue_bound(mut self, bound: usize) -> Result<Self, SyncError> {
        if bound == 0 {
            return Err(SyncError::ZeroBound);
        }
        self.bound = bound;
        Ok(self)
    }

    pub fn streams(&self) -> &[StreamId] {
        &self.streams
    }

    pub fn policy(&self) -> SyncPolicy {
        self.policy
    }

    pub fn stats(&self) -> &SyncStats {
        &self.stats
    }

    pub fn queued(&self) -> usize {
        self.queues.iter().map(VecDeque::len).sum()
    }

    pub fn push(&mut self, msg: StampedMessage) -> Result<Vec<SyncedTuple>, SyncError> {
        let i = *self
            .index
            .get(&msg.stream)
            .ok_or_else(|| SyncError::UnknownStream(msg.stream.to_string()))?;
        if let Some(last) = self.last_accepted[i] {
            let rejected = match self.policy {
                SyncPolicy::ExactTime => msg.stamp <= last,
                SyncPolicy::ApproximateTime { .. } => msg.stamp < last,
            };
            if rejected {
                self.stats.out_of_order += 1;
                return Err(SyncError::OutOfOrder {
                    stream: msg.stream.to_string(),
                    stamp: msg.stamp,
                    last,
                });
            }
        }
        self.last_accepted[i] = Some(msg.stamp);
        let q = &mut self.queues[i];
        if q.len() == self.bound {
            q.pop_front();
            self.stats.overflow_dropped += 1;
        }
        q.push_back(msg);
        Ok(match self.policy {
            SyncPolicy::ExactTime => self.exact_match(),
            SyncPolicy::ApproximateTime { .. } => self.approx_match(),
        })
    }

    /// Declares the input complete and emits every tuple still obtainable.
    /// Both policies match eagerly, so this currently never yields anything
    /// that `push` did not already return.
    pub fn finish(&mut self) -> Vec<SyncedTuple> {
        match self.policy {
            SyncPolicy::ExactTime => self.exact_match(),
            SyncPolicy::ApproximateTime { .. } => self.approx_match(),
        }
    }

    fn discard_through(&mut self, limit: Timestamp) {
        for q in self.queues.iter_mut() {
            while q.front().is_some_and(|m| m.stamp <= limit) {
                q.pop_front();
                self.stats.discarded += 1;
            }
        }
    }

    fn emit(&mut self, members: Vec<StampedMessage>, out: &mut Vec<SyncedTuple>) {
        let tuple = SyncedTuple::from_members(members);
        debug_assert!(tuple.spread_ns <= self.policy.slop_ns());
        debug_assert!(self.last_pivot.is_none_or(|p| tuple.pivot_stamp > p));
        self.last_pivot = Some(tuple.pivot_stamp);
        self.stats.emitted += 1;
        out.push(tuple);
    }

    /// Emits whenever every queue holds the same stamp.
    fn exact_match(&mut self) -> Vec<SyncedTuple> {
        let mut out = Vec::new();
        loop {
            if let Some(p) = self.last_pivot {
                self.discard_through(p);
            }
            if self.queues.iter().any(VecDeque::is_empty) {
                break;
            }
            let target = self
                .queues
                .iter()
                .map(|q| q.front().expect("non-empty").stamp)
                .max()
                .expect("at least one stream");
            for q in self.queues.iter_mut() {
                while q.front().is_some_and(|m| m.stamp < target) {
                    q.pop_front();
                    self.stats.discarded += 1;
                }
            }
            if self.queues.iter().any(VecDeque::is_empty) {
                break;
            }
            if self
                .queues
                .iter()
                .all(|q| q.front().expect("non-empty").stamp == target)
            {
                let members = self
                    .queues
                    .iter_mut()
                    .map(|q| q.pop_front().expect("non-empty"))
                    .collect();
                self.emit(members, &mut out);
            }
        }
        out
    }

    fn approx_match(&mut self) -> Vec<SyncedTuple> {
        let slop = self.policy.slop_ns() as i128;
        let mut out = Vec::new();
        loop {
            if let Some(p) = self.last_pivot {
                self.discard_through(p);
            }
            // Every future pivot is at least the latest head; heads further
            // than `slop` behind it can never be matched. Pruning can expose a
            // later head, so repeat until stable.
            loop {
                let horizon = self
                    .queues
                    .iter()
                    .zip(&self.last_accepted)
                    .filter_map(|(q, last)| q.front().map(|m| m.stamp).or(*last))
                    .max();
                let Some(h) = horizon else { break };
                let h = h.total_nanos() as i128;
                let mut pruned = false;
                for q in self.queues.iter_mut() {
                    while q.front().is_some_and(|m| (m.stamp.total_nanos() as i128) + slop < h) {
                        q.pop_front();
                        self.stats.discarded += 1;
                        pruned = true;
                    }
                }
                if !pruned {
                    break;
                }
            }
            if self.queues.iter().any(VecDeque::is_empty) {
                break;
            }
            // After pruning every head lies within `slop` of the latest head,
            // so the latest head is the earliest feasible pivot.
            let pivot = self
                .queues
                .iter()
                .map(|q| q.front().expect("non-empty").stamp)
                .max()
                .expect("at least one stream");
            let members = self
                .queues
                .iter()
                .map(|q| closest_at_or_before(q, pivot).clone())
                .collect();
            for q in self.queues.iter_mut() {
                let through = q.partition_point(|m| m.stamp <= pivot);
                q.drain(..through);
                self.stats.discarded += through as u64 - 1;
            }
            self.emit(members, &mut out);
        }
        out
    }
}

/// Message with the largest stamp not after `pivot`; the earliest of equals.
fn closest_at_or_before(q: &VecDeque<StampedMessage>, pivot: Timestamp) -> &StampedMessage {
    let upto = q.partition_point(|m| m.stamp <= pivot);
    let best = q[upto - 1].stamp;
    &q[q.partition_point(|m| m.stamp < best)]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(s: &str) -> StreamId {
        StreamId::new(s).unwrap()
    }

    fn at(stream: &str, ms: u64, seq: u64) -> StampedMessage {
        StampedMessage::new(
            id(stream),
            Timestamp::from_total_nanos(ms as u128 * 1_000_000),
            seq,
            Payload::scalar(ms as f64),
        )
    }

    fn ms(t: Timestamp) -> u64 {
        (t.total_nanos() / 1_000_000) as u64
    }

    fn pairs(tuples: &[SyncedTuple]) -> Vec<Vec<u64>> {
        tuples
            .iter()
            .map(|t| t.messages.iter().map(|m| ms(m.stamp)).collect())
            .collect()
    }

    #[test]
    fn exact_identical_stamps() {
        let mut f = SyncFilter::new(vec![id("a/x"), id("b/x")], SyncPolicy::ExactTime).unwrap();
        assert!(f.push(at("a/x", 5000, 0)).unwrap().is_empty());
        let out = f.push(at("b/x", 5000, 0)).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].spread_ns, 0);
        assert_eq!(ms(out[0].pivot_stamp), 5000);
    }

    #[test]
    fn exact_unmatched_head_dropped_later() {
        let mut f = SyncFilter::new(vec![id("a/x"), id("b/x")], SyncPolicy::ExactTime).unwrap();
        f.push(at("a/x", 7, 0)).unwrap();
        assert!(f.push(at("b/x", 8, 0)).unwrap().is_empty());
        assert!(f.push(at("a/x", 8, 1)).unwrap().len() == 1);
        assert_eq!(f.queued(), 0);
        assert_eq!(f.stats().discarded, 1);
    }

    #[test]
    fn exact_three_streams() {
        let mut f = SyncFilter::new(vec![id("a/x"), id("b/x"), id("c/x")], SyncPolicy::ExactTime).unwrap();
        f.push(at("a/x", 7, 0)).unwrap();
        f.push(at("b/x", 7, 0)).unwrap();
        let out = f.push(at("c/x", 7, 0)).unwrap();
        assert_eq!(pairs(&out), vec![vec![7, 7, 7]]);
    }

    #[test]
    fn exact_rejects_duplicate_stamp() {
        let mut f = SyncFilter::new(vec![id("a/x"), id("b/x")], SyncPolicy::ExactTime).unwrap();
        f.push(at("a/x", 7, 0)).unwrap();
        assert!(matches!(f.push(at("a/x", 7, 1)), Err(SyncError::OutOfOrder { .. })));
        assert_eq!(f.stats().out_of_order, 1);
    }

    #[test]
    fn approx_rejects_backwards_but_allows_equal() {
        let mut f = SyncFilter::new(vec![id("a/x"), id("b/x")], SyncPolicy::approximate_ms(10)).unwrap();
        f.push(at("a/x", 7, 0)).unwrap();
        assert!(f.push(at("a/x", 7, 1)).is_ok());
        assert!(f.push(at("a/x", 6, 2)).is_err());
    }

    #[test]
    fn unknown_stream() {
        let mut f = SyncFilter::new(vec![id("a/x")], SyncPolicy::ExactTime).unwrap();
        assert!(matches!(f.push(at("b/x", 1, 0)), Err(SyncError::UnknownStream(_))));
    }

    #[test]
    fn approx_two_stream_example() {
        let mut f = SyncFilter::new(vec![id("a/x"), id("b/x")], SyncPolicy::approximate_ms(60)).unwrap();
        let mut out = Vec::new();
        for m in [
            at("a/x", 0, 0),
            at("b/x", 50, 0),
            at("a/x", 100, 1),
            at("a/x", 200, 2),
            at("b/x", 260, 1),
        ] {
            out.extend(f.push(m).unwrap());
        }
        out.extend(f.finish());
        assert_eq!(pairs(&out), vec![vec![0, 50], vec![200, 260]]);
        assert_eq!(out[0].spread_ns, 50_000_000);
        assert_eq!(out[1].spread_ns, 60_000_000);
    }

    #[test]
    fn approx_single_candidate() {
        let mut f = SyncFilter::new(vec![id("a/x"), id("b/x")], SyncPolicy::approximate_ms(50)).unwrap();
        f.push(at("a/x", 10_000, 0)).unwrap();
        let out = f.push(at("b/x", 10_040, 0)).unwrap();
        // b is the pivot and every stream has reached it
        assert_eq!(pairs(&out), vec![vec![10_000, 10_040]]);
        assert_eq!(out[0].spread_ns, 40_000_000);
    }

    #[test]
    fn approx_emits_eagerly_with_closest_queued_member() {
        let mut f = SyncFilter::new(vec![id("a/x"), id("b/x")], SyncPolicy::approximate_ms(50)).unwrap();
        f.push(at("a/x", 0, 0)).unwrap();
        f.push(at("a/x", 30, 1)).unwrap();
        let out = f.push(at("b/x", 40, 0)).unwrap();
        assert_eq!(pairs(&out), vec![vec![30, 40]]);
        assert_eq!(f.stats().discarded, 1);
    }

    #[test]
    fn tuples_do_not_overlap_in_time() {
        // (0, 2) then (2, 4) would reuse instant 2; only one tuple fits.
        let mut f = SyncFilter::new(vec![id("a/x"), id("b/x")], SyncPolicy::approximate_ms(2)).unwrap();
        let mut out = Vec::new();
        for m in [at("a/x", 0, 0), at("a/x", 2, 1), at("b/x", 2, 0), at("b/x", 4, 1)] {
            out.extend(f.push(m).unwrap());
        }
        out.extend(f.finish());
        assert_eq!(pairs(&out), vec![vec![2, 2]]);
    }

    #[test]
    fn stale_heads_are_dropped_before_matching() {
        let mut f = SyncFilter::new(vec![id("a/x"), id("b/x")], SyncPolicy::approximate_ms(10)).unwrap();
        let mut out = Vec::new();
        for m in [
            at("a/x", 0, 0),
            at("a/x", 5, 1),
            at("a/x", 40, 2),
            at("b/x", 45, 0),
            at("a/x", 50, 3),
        ] {
            out.extend(f.push(m).unwrap());
        }
        assert_eq!(pairs(&out), vec![vec![40, 45]]);
        assert_eq!(f.stats().discarded, 2);
        assert_eq!(f.queued(), 1);
    }

    #[test]
    fn silent_stream_blocks_everything() {
        let mut f = SyncFilter::new(vec![id("a/x"), id("b/x"), id("c/x")], SyncPolicy::approximate_ms(1000)).unwrap();
        for k in 0..200 {
            assert!(f.push(at("a/x", k * 10, k)).unwrap().is_empty());
            assert!(f.push(at("b/x", k * 10, k)).unwrap().is_empty());
        }
        assert!(f.finish().is_empty());
        assert!(f.queued() <= 2 * DEFAULT_QUEUE_BOUND);
        assert!(f.stats().overflow_dropped > 0);
    }

    #[test]
    fn default_slop_is_half_slowest_period() {
        use crate::model::{PayloadSchema, StreamKind};
        let d = |id: &str, hz: f64| {
            StreamDescriptor::new(id, StreamKind::PhysiologicalSensor, hz, PayloadSchema::Scalar).unwrap()
        };
        let p = SyncPolicy::default_for(&[d("human/gsr", 4.0), d("human/ppg", 64.0)]);
        assert_eq!(p, SyncPolicy::ApproximateTime { slop_ns: 125_000_000 });
    }

    #[test]
    fn tuple_message_round_trip() {
        let t = SyncedTuple::from_members(vec![at("a/x", 1, 0), at("b/y", 3, 0)]);
        let m = t.to_message("pair", 9).unwrap();
        assert_eq!(m.stream.as_str(), "synced/pair");
        assert_eq!(m.stamp, t.pivot_stamp);
        let parts = SyncedTuple::decode_body(&m.payload).unwrap();
        assert_eq!(parts.len(), 2);
        assert_eq!(parts[1].0.as_str(), "b/y");
        assert_eq!(parts[1].1, Payload::scalar(3.0));
        assert!(SyncedTuple::decode_body(&Payload::from_bytes(vec![5, 0, b'a'])).is_err());
    }
}
