//! Transport-independent routing core of the broker.
//!
//! Subscriptions own bounded FIFO queues. When a queue is full the oldest
//! message is dropped, so publishing never blocks.

use std::collections::{BTreeMap, VecDeque};

use super::topic::TopicPattern;
use super::BusError;
use crate::model::{StampedMessage, StreamDescriptor, StreamId, Timestamp};

pub type ClientId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SubscriptionId(pub u64);

#[derive(Debug, Clone)]
pub struct StreamEntry {
    pub descriptor: StreamDescriptor,
    pub owner: ClientId,
    pub online: bool,
    pub last_stamp: Option<Timestamp>,
    pub published: u64,
}

#[derive(Debug)]
struct Subscription {
    owner: ClientId,
    pattern: TopicPattern,
    capacity: usize,
    queue: VecDeque<StampedMessage>,
    dropped: u64,
}

#[derive(Debug, Default)]
pub struct Router {
    streams: BTreeMap<StreamId, StreamEntry>,
    subs: BTreeMap<SubscriptionId, Subscription>,
    next_sub: u64,
}

impl Router {
    pub fn new() -> Self {
        Router::default()
    }

    /// Registers (or re-registers) a stream. The latest advertiser owns it.
    pub fn advertise(&mut self, owner: ClientId, descriptor: StreamDescriptor) {
        let entry = self
            .streams
            .entry(descriptor.id.clone())
            .or_insert_with(|| StreamEntry {
                descriptor: descriptor.clone(),
                owner,
                online: true,
                last_stamp: None,
                published: 0,
            });
        entry.descriptor = descriptor;
        entry.owner = owner;
        entry.online = true;
    }

    pub fn subscribe(
        &mut self,
        owner: ClientId,
        pattern: TopicPattern,
        capacity: usize,
    ) -> Result<SubscriptionId, BusError> {
        if capacity == 0 {
            return Err(BusError::ZeroCapacity);
        }
        let id = SubscriptionId(self.next_sub);
        self.next_sub += 1;
        self.subs.insert(
            id,
            Subscription {
                owner,
                pattern,
                capacity,
                queue: VecDeque::new(),
                dropped: 0,
            },
        );
        Ok(id)
    }

    pub fn unsubscribe(&mut self, id: SubscriptionId) -> bool {
        self.subs.remove(&id).is_some()
    }

    /// Removes every subscription of `owner` using exactly this pattern.
    pub fn unsubscribe_pattern(&mut self, owner: ClientId, pattern: &TopicPattern) -> usize {
        let before = self.subs.len();
        self.subs.retain(|_, s| !(s.owner == owner && &s.pattern == pattern));
        before - self.subs.len()
    }

    /// Enqueues `msg` on every matching subscription and returns their ids.
    pub fn route(&mut self, msg: &StampedMessage) -> Result<Vec<SubscriptionId>, BusError> {
        let entry = self
            .streams
            .get_mut(&msg.stream)
            .ok_or_else(|| BusError::UnknownStream(msg.stream.to_string()))?;
        entry.last_stamp = Some(msg.stamp);
        entry.published += 1;
        entry.online = true;
        let mut recipients = Vec::new();
        for (id, sub) in self.subs.iter_mut() {
            if !sub.pattern.matches(&msg.stream) {
                continue;
            }
            if sub.queue.len() == sub.capacity {
                sub.queue.pop_front();
                sub.dropped += 1;
            }
            sub.queue.push_back(msg.clone());
            recipients.push(*id);
        }
        Ok(recipients)
    }

    pub fn pop(&mut self, id: SubscriptionId) -> Option<StampedMessage> {
        self.subs.get_mut(&id)?.queue.pop_front()
    }

    pub fn queued(&self, id: SubscriptionId) -> usize {
        self.subs.get(&id).map_or(0, |s| s.queue.len())
    }

    pub fn dropped(&self, id: SubscriptionId) -> u64 {
        self.subs.get(&id).map_or(0, |s| s.dropped)
    }

    pub fn subscriptions_of(&self, owner: ClientId) -> Vec<SubscriptionId> {
        self.subs
            .iter()
            .filter(|(_, s)| s.owner == owner)
            .map(|(id, _)| *id)
            .collect()
    }

    pub fn owner_of(&self, id: SubscriptionId) -> Option<ClientId> {
        self.subs.get(&id).map(|s| s.owner)
    }

    pub fn pattern_of(&self, id: SubscriptionId) -> Option<&TopicPattern> {
        self.subs.get(&id).map(|s| &s.pattern)
    }

    pub fn stream(&self, id: &StreamId) -> Option<&StreamEntry> {
        self.streams.get(id)
    }

    pub fn streams(&self) -> impl Iterator<Item = &StreamEntry> {
        self.streams.values()
    }

    /// Drops the client's subscriptions and marks its streams offline.
    pub fn disconnect(&mut self, owner: ClientId) {
        self.subs.retain(|_, s| s.owner != owner);
        for entry in self.streams.values_mut() {
            if entry.owner == owner {
                entry.online = false;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Payload, PayloadSchema, StreamKind};
    use proptest::prelude::*;

    fn desc(id: &str) -> StreamDescriptor {
        StreamDescriptor::new(id, StreamKind::Robot, 1.0, PayloadSchema::Scalar).unwrap()
    }

    fn msg(id: &str, seq: u64) -> StampedMessage {
        StampedMessage::new(
            StreamId::new(id).unwrap(),
            Timestamp::from_secs(seq),
            seq,
            Payload::scalar(seq as f64),
        )
    }

    fn pat(p: &str) -> TopicPattern {
        TopicPattern::parse(p).unwrap()
    }

    #[test]
    fn universal_subscriber_receives_everything() {
        let mut r = Router::new();
        r.advertise(1, desc("robot1/battery"));
        let s = r.subscribe(2, pat("**"), 8).unwrap();
        assert_eq!(r.route(&msg("robot1/battery", 0)).unwrap(), vec![s]);
        assert_eq!(r.pop(s).unwrap().seq, 0);
    }

    #[test]
    fn drop_oldest_when_full() {
        let mut r = Router::new();
        r.advertise(1, desc("a/x"));
        let s = r.subscribe(2, pat("a/x"), 2).unwrap();
        for seq in 1..=3 {
            r.route(&msg("a/x", seq)).unwrap();
        }
        assert_eq!(r.dropped(s), 1);
        assert_eq!(r.pop(s).unwrap().seq, 2);
        assert_eq!(r.pop(s).unwrap().seq, 3);
        assert!(r.pop(s).is_none());
    }

    #[test]
    fn no_match_is_not_an_error() {
        let mut r = Router::new();
        r.advertise(1, desc("a/x"));
        r.subscribe(2, pat("b/**"), 2).unwrap();
        assert!(r.route(&msg("a/x", 0)).unwrap().is_empty());
    }

    #[test]
    fn unknown_stream_rejected() {
        let mut r = Router::new();
        assert!(matches!(r.route(&msg("a/x", 0)), Err(BusError::UnknownStream(_))));
    }

    #[test]
    fn disconnect_marks_offline() {
        let mut r = Router::new();
        r.advertise(1, desc("a/x"));
        let s = r.subscribe(1, pat("**"), 2).unwrap();
        r.disconnect(1);
        assert!(!r.stream(&StreamId::new("a/x").unwrap()).unwrap().online);
        assert_eq!(r.queued(s), 0);
        assert!(r.subscriptions_of(1).is_empty());
        r.advertise(1, desc("a/x"));
        assert!(r.stream(&StreamId::new("a/x").unwrap()).unwrap().online);
    }

    proptest! {
        // Delivered sequence is always a FIFO subsequence (the newest suffix)
        // of what was published, whatever the capacity.
        #[test]
        fn fifo_under_drops(capacity in 1usize..8, n in 0u64..40, consume_every in 1u64..6) {
            let mut r = Router::new();
            r.advertise(1, desc("a/x"));
            let s = r.subscribe(2, pat("a/*"), capacity).unwrap();
            let mut delivered = Vec::new();
            for seq in 0..n {
                r.route(&msg("a/x", seq)).unwrap();
                if seq % consume_every == 0 {
                    if let Some(m) = r.pop(s) { delivered.push(m.seq); }
                }
                prop_assert!(r.queued(s) <= capacity);
            }
            while let Some(m) = r.pop(s) { delivered.push(m.seq); }
            prop_assert!(delivered.windows(2).all(|w| w[0] < w[1]));
            prop_assert_eq!(delivered.len() as u64 + r.dropped(s), n);
        }
    }
}
