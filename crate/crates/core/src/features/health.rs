use std::collections::BTreeMap;

use crate::model::{StreamId, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SensorState {
    Alive,
    Stale,
    Dead,
}

/// Silence limits in nominal periods: alive up to `stale_after`, stale up to
/// `dead_after`, dead beyond.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HealthThresholds {
    pub stale_after: f64,
    pub dead_after: f64,
}

impl Default for HealthThresholds {
    fn default() -> Self {
        HealthThresholds {
            stale_after: 3.0,
            dead_after: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SensorHealth {
    pub id: StreamId,
    pub state: SensorState,
    pub last_seen: Timestamp,
}

fn periods_to_ns(periods: f64, rate_hz: f64) -> i128 {
    (periods / rate_hz * 1e9).round() as i128
}

/// State of a stream silent since `last_seen`. Limits are rounded to whole
/// nanoseconds, so a 10 Hz stream is alive for exactly 300 ms of silence.
pub fn classify(last_seen: Timestamp, now: Timestamp, rate_hz: f64, t: &HealthThresholds) -> SensorState {
    let silence = now.total_nanos() as i128 - last_seen.total_nanos() as i128;
    if silence <= periods_to_ns(t.stale_after, rate_hz) {
        SensorState::Alive
    } else if silence <= periods_to_ns(t.dead_after, rate_hz) {
        SensorState::Stale
    } else {
        SensorState::Dead
    }
}

#[derive(Debug, Clone)]
struct Entry {
    rate_hz: f64,
    last_seen: Timestamp,
    first_seen: Option<Timestamp>,
}

/// Live table of stream liveness. A registered stream that has not sent
/// anything yet counts its silence from registration.
#[derive(Debug, Clone, Default)]
pub struct HealthTable {
    thresholds: HealthThresholds,
    entries: BTreeMap<StreamId, Entry>,
}

impl HealthTable {
    pub fn new(thresholds: HealthThresholds) -> Self {
        HealthTable {
            thresholds,
            entries: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, id: StreamId, rate_hz: f64, since: Timestamp) {
        self.entries
            .entry(id)
            .and_modify(|e| e.rate_hz = rate_hz)
            .or_insert(Entry {
                rate_hz,
                last_seen: since,
                first_seen: None,
            });
    }

    /// Records a message. Unregistered streams are ignored and reported by
    /// returning false.
    pub fn observe(&mut self, id: &StreamId, stamp: Timestamp) -> bool {
        match self.entries.get_mut(id) {
            Some(e) => {
                e.last_seen = e.last_seen.max(stamp);
                e.first_seen.get_or_insert(stamp);
                true
            }
            None => false,
        }
    }

    pub fn first_seen(&self, id: &StreamId) -> Option<Timestamp> {
        self.entries.get(id)?.first_seen
    }

    pub fn status(&self, now: Timestamp) -> Vec<SensorHealth> {
        self.entries
            .iter()
            .map(|(id, e)| SensorHealth {
                id: id.clone(),
                state: classify(e.last_seen, now, e.rate_hz, &self.thresholds),
                last_seen: e.last_seen,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ms(v: u64) -> Timestamp {
        Timestamp::from_total_nanos(v as u128 * 1_000_000)
    }

    #[test]
    fn threshold_table() {
        let t = HealthThresholds::default();
        let cases = [
            (0, SensorState::Alive),
            (300, SensorState::Alive),
            (301, SensorState::Stale),
            (500, SensorState::Stale),
            (1000, SensorState::Stale),
            (1001, SensorState::Dead),
            (2000, SensorState::Dead),
        ];
        for (silence, want) in cases {
            assert_eq!(classify(ms(1000), ms(1000 + silence), 10.0, &t), want, "{silence} ms");
        }
        let ns = |n: u64| Timestamp::from_total_nanos(n as u128);
        assert_eq!(classify(ns(0), ns(300_000_000), 10.0, &t), SensorState::Alive);
        assert_eq!(classify(ns(0), ns(300_000_001), 10.0, &t), SensorState::Stale);
        assert_eq!(classify(ns(0), ns(1_000_000_000), 10.0, &t), SensorState::Stale);
        assert_eq!(classify(ns(0), ns(1_000_000_001), 10.0, &t), SensorState::Dead);
    }

    #[test]
    fn table_lifecycle() {
        let mut h = HealthTable::default();
        let id = StreamId::new("robot0/wifi").unwrap();
        h.register(id.clone(), 1.0, ms(0));
        assert_eq!(h.status(ms(2_000))[0].state, SensorState::Alive);
        assert_eq!(h.status(ms(5_000))[0].state, SensorState::Stale);
        assert_eq!(h.status(ms(20_000))[0].state, SensorState::Dead);
        assert!(h.observe(&id, ms(20_000)));
        assert_eq!(h.status(ms(20_000))[0].state, SensorState::Alive);
        assert_eq!(h.first_seen(&id), Some(ms(20_000)));
        assert!(!h.observe(&StreamId::new("other/x").unwrap(), ms(1)));
    }

    proptest! {
        #[test]
        fn silence_is_monotone(a in 0u64..100_000, b in 0u64..100_000, rate in 0.1f64..200.0) {
            let t = HealthThresholds::default();
            let (short, long) = (a.min(b), a.max(b));
            let s1 = classify(ms(0), ms(short), rate, &t);
            let s2 = classify(ms(0), ms(long), rate, &t);
            prop_assert!(s1 <= s2);
        }
    }
}
