use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use crate::model::{MessageSink, StampedMessage, StreamDescriptor};

use super::reader::Bag;
use super::BagError;

/// Longest single sleep, so pause and stop requests are noticed promptly.
const POLL: Duration = Duration::from_millis(2);

#[derive(Debug, Default)]
struct ControlState {
    paused: AtomicBool,
    stop: AtomicBool,
}

/// Shareable handle for pausing, resuming and stopping a running playback.
#[derive(Debug, Clone, Default)]
pub struct PlayControl(Arc<ControlState>);

impl PlayControl {
    pub fn pause(&self) {
        self.0.paused.store(true, Ordering::SeqCst);
    }

    pub fn resume(&self) {
        self.0.paused.store(false, Ordering::SeqCst);
    }

    pub fn is_paused(&self) -> bool {
        self.0.paused.load(Ordering::SeqCst)
    }

    /// Makes [`PlaybackHandle::play`] return after the current message.
    pub fn stop(&self) {
        self.0.stop.store(true, Ordering::SeqCst);
    }

    fn take_stop(&self) -> bool {
        self.0.stop.swap(false, Ordering::SeqCst)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlayStats {
    pub published: usize,
    pub finished: bool,
}

/// Republishes a recording with its original timing scaled by `rate`.
pub struct PlaybackHandle {
    descriptors: Vec<StreamDescriptor>,
    messages: Vec<StampedMessage>,
    rate: f64,
    cursor: usize,
    advertised: bool,
    control: PlayControl,
}

impl PlaybackHandle {
    pub fn open(bag: &mut Bag, rate: f64) -> Result<PlaybackHandle, BagError> {
        let messages = bag.messages()?;
        PlaybackHandle::from_messages(bag.descriptors(), messages, rate)
    }

    /// `messages` must already be in replay order.
    pub fn from_messages(
        descriptors: Vec<StreamDescriptor>,
        messages: Vec<StampedMessage>,
        rate: f64,
    ) -> Result<PlaybackHandle, BagError> {
        if !(rate.is_finite() && rate > 0.0) {
            return Err(BagError::InvalidRate(rate));
        }
        Ok(PlaybackHandle {
            descriptors,
            messages,
            rate,
            cursor: 0,
            advertised: false,
            control: PlayControl::default(),
        })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub fn is_finished(&self) -> bool {
        self.cursor == self.messages.len()
    }

    pub fn control(&self) -> PlayControl {
        self.control.clone()
    }

    /// Publishes from the cursor until the end or a stop request. The first
    /// message goes out immediately; each later one waits for its original
    /// gap divided by the rate. Time spent paused does not count.
    pub fn play(&mut self, sink: &mut dyn MessageSink) -> Result<PlayStats, BagError> {
        if !self.advertised {
            for d in &self.descriptors {
                sink.advertise(d)?;
            }
            self.advertised = true;
        }
        let mut published = 0;
        let Some(base) = self.messages.get(self.cursor).map(|m| m.stamp) else {
            return Ok(PlayStats {
                published,
                finished: true,
            });
        };
        let mut start = Instant::now();
        while self.cursor < self.messages.len() {
            let m = &self.messages[self.cursor];
            let offset_ns = m.stamp.total_nanos().saturating_sub(base.total_nanos()) as f64 / self.rate;
            let due = Duration::from_nanos(offset_ns.round() as u64);
            loop {
                if self.control.take_stop() {
                    return Ok(PlayStats {
                        published,
                        finished: false,
                    });
                }
                if self.control.is_paused() {
                    let paused_at = Instant::now();
                    while self.control.is_paused() && !self.control.0.stop.load(Ordering::SeqCst) {
                        thread::sleep(POLL);
                    }
                    start += paused_at.elapsed();
                    continue;
                }
                let elapsed = start.elapsed();
                if elapsed >= due {
                    break;
                }
                thread::sleep((due - elapsed).min(POLL));
            }
            let mut out = m.clone();
            out.replayed = true;
            sink.publish(&out)?;
            self.cursor += 1;
            published += 1;
        }
        Ok(PlayStats {
            published,
            finished: true,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Payload, StreamId, Timestamp};

    fn msgs(ms: &[u64]) -> Vec<StampedMessage> {
        ms.iter()
            .enumerate()
            .map(|(i, &t)| {
                StampedMessage::new(
                    StreamId::new("a/x").unwrap(),
                    Timestamp::from_total_nanos(t as u128 * 1_000_000),
                    i as u64,
                    Payload::scalar(t as f64),
                )
            })
            .collect()
    }

    /// Records the wall-clock instant of every publish.
    #[derive(Default)]
    struct Timed {
        at: Vec<(Instant, StampedMessage)>,
    }

    impl MessageSink for Timed {
        fn advertise(&mut self, _: &StreamDescriptor) -> Result<(), crate::model::SinkError> {
            Ok(())
        }
        fn publish(&mut self, m: &StampedMessage) -> Result<(), crate::model::SinkError> {
            self.at.push((Instant::now(), m.clone()));
            Ok(())
        }
    }

    fn gaps_ms(sink: &Timed) -> Vec<f64> {
        sink.at
            .windows(2)
            .map(|w| (w[1].0 - w[0].0).as_secs_f64() * 1e3)
            .collect()
    }

    #[test]
    fn rejects_bad_rates() {
        for r in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            assert!(matches!(
                PlaybackHandle::from_messages(vec![], vec![], r),
                Err(BagError::InvalidRate(_))
            ));
        }
    }

    #[test]
    fn rate_scales_gaps() {
        for (rate, expect) in [(2.0, [50.0, 150.0]), (1.0, [100.0, 300.0])] {
            let mut h = PlaybackHandle::from_messages(vec![], msgs(&[0, 100, 400]), rate).unwrap();
            let mut sink = Timed::default();
            h.play(&mut sink).unwrap();
            for (g, e) in gaps_ms(&sink).iter().zip(expect) {
                assert!((g - e).abs() <= 10.0, "gap {g} vs {e} at rate {rate}");
            }
            assert!(sink.at.iter().all(|(_, m)| m.replayed));
        }
    }

    #[test]
    fn stamps_are_preserved() {
        let original = msgs(&[0, 1, 2]);
        let mut h = PlaybackHandle::from_messages(vec![], original.clone(), 100.0).unwrap();
        let mut sink = crate::model::MemorySink::default();
        h.play(&mut sink).unwrap();
        for (a, b) in original.iter().zip(&sink.messages) {
            assert_eq!((a.stamp, a.seq, &a.payload), (b.stamp, b.seq, &b.payload));
        }
    }

    #[test]
    fn pause_and_resume_lose_nothing() {
        let times: Vec<u64> = (0..40).map(|i| i * 5).collect();
        let mut h = PlaybackHandle::from_messages(vec![], msgs(&times), 1.0).unwrap();
        let control = h.control();
        let toggler = thread::spawn(move || {
            for _ in 0..3 {
                thread::sleep(Duration::from_millis(30));
                control.pause();
                thread::sleep(Duration::from_millis(40));
                control.resume();
            }
        });
        let mut sink = crate::model::MemorySink::default();
        let stats = h.play(&mut sink).unwrap();
        toggler.join().unwrap();
        let seqs: Vec<u64> = sink.messages.iter().map(|m| m.seq).collect();
        assert_eq!(seqs, (0..40).collect::<Vec<_>>());
        assert!(stats.finished);
    }

    #[test]
    fn stop_then_continue_resumes_at_cursor() {
        let mut h = PlaybackHandle::from_messages(vec![], msgs(&[0, 50, 100, 150]), 1.0).unwrap();
        let control = h.control();
        let stopper = thread::spawn(move || {
            thread::sleep(Duration::from_millis(70));
            control.stop();
        });
        let mut sink = crate::model::MemorySink::default();
        let first = h.play(&mut sink).unwrap();
        stopper.join().unwrap();
        assert!(!first.finished);
        let second = h.play(&mut sink).unwrap();
        assert!(second.finished);
        assert_eq!(first.published + second.published, 4);
        let seqs: Vec<u64> = sink.messages.iter().map(|m| m.seq).collect();
        assert_eq!(seqs, vec![0, 1, 2, 3]);
    }
}
