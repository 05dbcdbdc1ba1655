//! Synthetic physiology: beat-to-beat intervals, ECG and PPG waveforms
//! built from beat templates, and skin conductance with tonic level and
//! phasic responses. Stimulus and workload events come from a schedule and
//! are also published as text markers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::model::{
    MessageSink, Payload, PayloadSchema, StampedMessage, Stamper, StreamDescriptor, StreamKind, Timestamp,
};

use super::config::{PhysioConfig, PhysioProfile, ScenarioConfig, ScheduleKind};
use super::{Pacer, SimError};

pub const IBI_TOPIC: &str = "human/ibi";
pub const ECG_TOPIC: &str = "human/ecg";
pub const PPG_TOPIC: &str = "human/ppg";
pub const GSR_TOPIC: &str = "human/gsr";
pub const SEGMENT_TOPIC: &str = "markers/segment";
pub const STIMULUS_TOPIC: &str = "markers/stimulus";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StimulusKind {
    ImageOnset,
    AudioOnset,
    WorkloadLevel(u32),
}

impl StimulusKind {
    fn class(&self) -> u8 {
        match self {
            StimulusKind::ImageOnset => 0,
            StimulusKind::AudioOnset => 1,
            StimulusKind::WorkloadLevel(_) => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StimulusEvent {
    pub at: Timestamp,
    pub kind: StimulusKind,
    pub duration_s: f64,
}

impl StimulusEvent {
    fn end(&self) -> Timestamp {
        self.at.offset_secs_f64(self.duration_s)
    }
}

/// Events sorted by stamp; events of the same kind never overlap.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StimulusSchedule {
    events: Vec<StimulusEvent>,
}

impl StimulusSchedule {
    pub fn new(events: Vec<StimulusEvent>) -> Result<Self, SimError> {
        for (i, e) in events.iter().enumerate() {
            if !(e.duration_s.is_finite() && e.duration_s > 0.0) {
                return Err(SimError::InvalidSchedule(format!(
                    "event {i} has non-positive duration"
                )));
            }
            if i > 0 && e.at < events[i - 1].at {
                return Err(SimError::InvalidSchedule(format!(
                    "event {i} starts before event {}",
                    i - 1
                )));
            }
            if let Some(prev) = events[..i].iter().rev().find(|p| p.kind.class() == e.kind.class()) {
                if prev.end() > e.at {
                    return Err(SimError::InvalidSchedule(format!(
                        "event {i} overlaps an earlier event of the same kind"
                    )));
                }
            }
        }
        Ok(StimulusSchedule { events })
    }

    pub fn from_config(cfg: &PhysioConfig, start: Timestamp) -> Result<Self, SimError> {
        let events = cfg
            .schedule
            .iter()
            .map(|e| StimulusEvent {
                at: start.offset_secs_f64(e.at_s),
                kind: match e.kind {
                    ScheduleKind::ImageOnset => StimulusKind::ImageOnset,
                    ScheduleKind::AudioOnset => StimulusKind::AudioOnset,
                    ScheduleKind::WorkloadLevel => StimulusKind::WorkloadLevel(e.level.unwrap_or(0)),
                },
                duration_s: e.duration_s,
            })
            .collect();
        StimulusSchedule::new(events)
    }

    pub fn events(&self) -> &[StimulusEvent] {
        &self.events
    }
}

/// Event offsets in seconds from the session start.
struct Timeline {
    levels: Vec<(f64, f64, u32)>,
    stimuli: Vec<(f64, f64)>,
}

impl Timeline {
    fn new(schedule: &StimulusSchedule, start: Timestamp) -> Self {
        let offset = |t: Timestamp| (t.total_nanos() as f64 - start.total_nanos() as f64) / 1e9;
        let mut levels = Vec::new();
        let mut stimuli = Vec::new();
        for e in schedule.events() {
            let a = offset(e.at);
            match e.kind {
                StimulusKind::WorkloadLevel(k) => levels.push((a, a + e.duration_s, k)),
                _ => stimuli.push((a, a + e.duration_s)),
            }
        }
        Timeline { levels, stimuli }
    }

    fn level(&self, t: f64) -> f64 {
        self.levels
            .iter()
            .find(|(a, b, _)| *a <= t && t < *b)
            .map_or(0.0, |l| l.2 as f64)
    }

    fn stimulated(&self, t: f64) -> bool {
        self.stimuli.iter().any(|(a, b)| *a <= t && t < *b)
    }
}

/// Bi-exponential phasic response normalised so its peak equals `amplitude`.
fn phasic(p: &PhysioProfile, since_onset: f64) -> f64 {
    let s = since_onset - p.gsr_latency_s;
    if s <= 0.0 {
        return 0.0;
    }
    let (r, d) = (p.gsr_rise_s, p.gsr_decay_s);
    let shape = |s: f64| (-s / d).exp() - (-s / r).exp();
    let peak_at = if (d - r).abs() < 1e-12 {
        r
    } else {
        (d / r).ln() * r * d / (d - r)
    };
    p.gsr_phasic_amplitude_us * shape(s) / shape(peak_at)
}

fn gauss(t: f64, centre: f64, width: f64) -> f64 {
    let u = (t - centre) / width;
    (-0.5 * u * u).exp()
}

/// PQRST as a sum of gaussians, `tau` seconds from the R peak (mV).
fn ecg_template(tau: f64) -> f64 {
    0.15 * gauss(tau, -0.2, 0.025) - 0.15 * gauss(tau, -0.03, 0.01) + 1.2 * gauss(tau, 0.0, 0.012)
        - 0.25 * gauss(tau, 0.03, 0.01)
        + 0.3 * gauss(tau, 0.25, 0.05)
}

/// Systolic peak followed by the dicrotic wave, `tau` seconds after the beat.
fn ppg_template(tau: f64) -> f64 {
    gauss(tau, 0.25, 0.08) + 0.4 * gauss(tau, 0.55, 0.1)
}

/// Sum of `template` over beats within one second of `t`.
fn beat_sum(beats: &[f64], first: &mut usize, t: f64, template: fn(f64) -> f64) -> f64 {
    while *first < beats.len() && beats[*first] < t - 1.0 {
        *first += 1;
    }
    beats[*first..]
        .iter()
        .take_while(|&&b| b <= t + 1.0)
        .map(|&b| template(t - b))
        .sum()
}

fn stamp_at(start: Timestamp, secs: f64) -> Timestamp {
    start.offset_nanos((secs * 1e9).round() as i64)
}

fn grid(start: Timestamp, rate: f64, duration: f64) -> impl Iterator<Item = (f64, Timestamp)> {
    (0u64..)
        .map(move |k| {
            let ns = (k as f64 * 1e9 / rate).round();
            (ns / 1e9, start.offset_nanos(ns as i64))
        })
        .take_while(move |(t, _)| *t < duration)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhysioSession {
    pub descriptors: Vec<StreamDescriptor>,
    /// In replay order.
    pub messages: Vec<StampedMessage>,
}

pub fn physio_descriptors(profile: &PhysioProfile) -> Result<Vec<StreamDescriptor>, SimError> {
    use PayloadSchema::{Blob, Scalar};
    use StreamKind::{BehavioralDevice, PhysiologicalSensor};
    Ok(vec![
        StreamDescriptor::new(IBI_TOPIC, PhysiologicalSensor, 1.0 / profile.ibi_mean_s, Scalar)?,
        StreamDescriptor::new(ECG_TOPIC, PhysiologicalSensor, profile.ecg_rate_hz, Scalar)?,
        StreamDescriptor::new(PPG_TOPIC, PhysiologicalSensor, profile.ppg_rate_hz, Scalar)?,
        StreamDescriptor::new(GSR_TOPIC, PhysiologicalSensor, profile.gsr_rate_hz, Scalar)?,
        StreamDescriptor::new(SEGMENT_TOPIC, BehavioralDevice, 0.1, Blob)?,
        StreamDescriptor::new(STIMULUS_TOPIC, BehavioralDevice, 0.1, Blob)?,
    ])
}

/// Generates a whole session of `cfg.duration_s` seconds from `start`.
pub fn generate_physio(cfg: &PhysioConfig, seed: u64, start: Timestamp) -> Result<PhysioSession, SimError> {
    let p = &cfg.profile;
    let schedule = StimulusSchedule::from_config(cfg, start)?;
    let timeline = Timeline::new(&schedule, start);
    let descriptors = physio_descriptors(p)?;
    let mut stampers: Vec<Stamper> = descriptors.iter().cloned().map(Stamper::new).collect();
    let rng = |stream: u64| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        r.set_stream(stream);
        r
    };
    let normal = |r: &mut ChaCha8Rng| -> f64 { r.sample(StandardNormal) };
    let duration = cfg.duration_s;
    let mut messages = Vec::new();

    // Beats: each interval is drawn from the state at the preceding beat.
    let mut ibi_rng = rng(0);
    let mut beats = vec![0.0];
    let mut b = 0.0;
    loop {
        let mut mean = p.ibi_mean_s + timeline.level(b) * p.ibi_workload_step_s;
        if timeline.stimulated(b) {
            mean -= p.ibi_stimulus_dip_s;
        }
        let ibi = (mean + p.ibi_sd_s * normal(&mut ibi_rng)).clamp(0.3, 2.0);
        b += ibi;
        if b >= duration {
            break;
        }
        beats.push(b);
        messages.push(stampers[0].stamp_at(stamp_at(start, b), Payload::scalar(ibi))?);
    }
    // Beats past the end still shape the waveforms near it.
    let mut padded = beats.clone();
    padded.push(b);

    let mut ecg_rng = rng(1);
    let mut first = 0;
    for (t, stamp) in grid(start, p.ecg_rate_hz, duration) {
        let v = beat_sum(&padded, &mut first, t, ecg_template) + p.ecg_noise_mv * normal(&mut ecg_rng);
        messages.push(stampers[1].stamp_at(stamp, Payload::scalar(v))?);
    }

    let mut ppg_rng = rng(2);
    let mut first = 0;
    for (t, stamp) in grid(start, p.ppg_rate_hz, duration) {
        let v = p.ppg_amplitude * beat_sum(&padded, &mut first, t, ppg_template) + p.ppg_noise * normal(&mut ppg_rng);
        messages.push(stampers[2].stamp_at(stamp, Payload::scalar(v))?);
    }

    let mut gsr_rng = rng(3);
    for (t, stamp) in grid(start, p.gsr_rate_hz, duration) {
        let tonic = p.gsr_tonic_us + p.gsr_drift_us_per_s * t - timeline.level(t) * p.gsr_workload_step_us;
        let responses: f64 = timeline
            .stimuli
            .iter()
            .filter(|(a, _)| *a <= t)
            .map(|(a, _)| phasic(p, t - a))
            .sum();
        let v = tonic + responses + p.gsr_noise_us * normal(&mut gsr_rng);
        messages.push(stampers[3].stamp_at(stamp, Payload::scalar(v))?);
    }

    // Markers. An empty segment marker closes the open segment.
    let mut segment_marks = vec![(start, cfg.baseline_label.clone())];
    let mut stimulus_marks = Vec::new();
    for e in schedule.events() {
        match e.kind {
            StimulusKind::WorkloadLevel(k) => {
                segment_marks.push((e.at, cfg.level_name(k)));
                segment_marks.push((e.end(), String::new()));
            }
            StimulusKind::ImageOnset => stimulus_marks.push((e.at, "image".to_string())),
            StimulusKind::AudioOnset => stimulus_marks.push((e.at, "audio".to_string())),
        }
    }
    segment_marks.sort_by_key(|(t, name)| (*t, !name.is_empty()));
    let end = stamp_at(start, duration);
    for (idx, marks) in [(4, segment_marks), (5, stimulus_marks)] {
        for (t, text) in marks {
            if t <= end {
                messages.push(stampers[idx].stamp_at(t, Payload::text(&text))?);
            }
        }
    }

    messages.sort_by(StampedMessage::replay_order);
    Ok(PhysioSession { descriptors, messages })
}

/// Generates the configured session and publishes it in stamp order.
/// Returns the number of messages published.
pub fn run_physio(cfg: &ScenarioConfig, sink: &mut dyn MessageSink, pace: Option<f64>) -> Result<u64, SimError> {
    let session = generate_physio(&cfg.physio, cfg.seed, cfg.start_time)?;
    for d in &session.descriptors {
        sink.advertise(d)?;
    }
    let mut pacer = Pacer::new(pace);
    for m in &session.messages {
        pacer.wait_for(m.stamp);
        sink.publish(m)?;
    }
    Ok(session.messages.len() as u64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{stats_report, window_stats, ReportConfig, Series, StatsReport};
    use crate::model::StreamId;
    use crate::sim::config::ScheduleEntry;

    fn t0() -> Timestamp {
        Timestamp::new(1_700_000_000, 0).unwrap()
    }

    fn config(schedule: Vec<ScheduleEntry>, duration: f64) -> PhysioConfig {
        PhysioConfig {
            duration_s: duration,
            schedule,
            ..PhysioConfig::default()
        }
    }

    fn series(s: &PhysioSession, topic: &str) -> Series {
        Series::from_messages(StreamId::new(topic).unwrap(), &s.messages)
    }

    #[test]
    fn schedule_validation() {
        let ev = |s: u64, kind, d| StimulusEvent {
            at: Timestamp::new(s, 0).unwrap(),
            kind,
            duration_s: d,
        };
        use StimulusKind::*;
        assert!(StimulusSchedule::new(vec![ev(0, ImageOnset, 5.0), ev(2, AudioOnset, 5.0)]).is_ok());
        assert!(StimulusSchedule::new(vec![ev(0, ImageOnset, 5.0), ev(2, ImageOnset, 5.0)]).is_err());
        assert!(StimulusSchedule::new(vec![ev(3, ImageOnset, 1.0), ev(2, AudioOnset, 1.0)]).is_err());
        assert!(StimulusSchedule::new(vec![ev(0, WorkloadLevel(1), 60.0), ev(60, WorkloadLevel(2), 60.0)]).is_ok());
        assert!(StimulusSchedule::new(vec![ev(0, WorkloadLevel(1), 61.0), ev(60, WorkloadLevel(2), 60.0)]).is_err());
    }

    #[test]
    fn phasic_peak_timing() {
        let p = PhysioProfile::default();
        let (best, _) = (0..5000)
            .map(|k| k as f64 * 0.001)
            .map(|t| (t, phasic(&p, t)))
            .fold((0.0, f64::MIN), |acc, x| if x.1 > acc.1 { x } else { acc });
        assert!((1.5..=2.5).contains(&best), "{best}");
        let peak = phasic(&p, best);
        assert!((peak - p.gsr_phasic_amplitude_us).abs() < 1e-6);
        assert!(phasic(&p, 20.0) < 0.02 * peak);
        assert_eq!(phasic(&p, 1.0), 0.0);
    }

    #[test]
    fn streams_and_rates() {
        let s = generate_physio(&config(vec![], 10.0), 1, t0()).unwrap();
        let count = |topic| s.messages.iter().filter(|m| m.stream.as_str() == topic).count();
        assert_eq!(count(ECG_TOPIC), 1300);
        assert_eq!(count(PPG_TOPIC), 640);
        assert_eq!(count(GSR_TOPIC), 40);
        assert!((9..=14).contains(&count(IBI_TOPIC)));
        assert_eq!(count(SEGMENT_TOPIC), 1);
        assert!(s.messages.windows(2).all(|w| w[0].replay_order(&w[1]).is_le()));
        let last = s.messages.last().unwrap().stamp;
        assert!(last < t0().offset_nanos(10_000_000_000));
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_physio(&PhysioConfig::default(), 5, t0()).unwrap();
        let b = generate_physio(&PhysioConfig::default(), 5, t0()).unwrap();
        let c = generate_physio(&PhysioConfig::default(), 6, t0()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.messages, c.messages);
    }

    #[test]
    fn gsr_peaks_after_an_image() {
        let onset = ScheduleEntry {
            at_s: 20.3,
            kind: ScheduleKind::ImageOnset,
            level: None,
            duration_s: 5.0,
        };
        let s = generate_physio(&config(vec![onset], 40.0), 2, t0()).unwrap();
        let marker = s.messages.iter().find(|m| m.stream.as_str() == STIMULUS_TOPIC).unwrap();
        assert_eq!(marker.payload.as_text(), Some("image"));
        let gsr = series(&s, GSR_TOPIC);
        let after = gsr.window(marker.stamp, marker.stamp.offset_nanos(10_000_000_000));
        let (peak, _) = after.iter().fold(after[0], |a, x| if x.1 > a.1 { *x } else { a });
        let lag = peak.diff(&marker.stamp).unwrap() as f64 / 1e9;
        assert!((1.5..=2.5).contains(&lag), "{lag}");
        let tail = gsr.window(
            marker.stamp.offset_nanos(18_000_000_000),
            marker.stamp.offset_nanos(19_000_000_000),
        );
        assert!(tail[0].1 < after.iter().map(|x| x.1).fold(f64::MIN, f64::max) - 0.5);
    }

    #[test]
    fn workload_raises_ibi() {
        for seed in 0..5 {
            let s = generate_physio(&PhysioConfig::default(), seed, t0()).unwrap();
            let r: StatsReport = stats_report(&s.messages, &ReportConfig::default()).unwrap();
            let names: Vec<&str> = r.rows.iter().map(|r| r.task.as_str()).collect();
            assert_eq!(names, ["Dual 1-back", "Dual 2-back", "Dual 3-back"]);
            let d: Vec<f64> = r.rows.iter().map(|row| row.deltas[0].unwrap().d_mean).collect();
            assert!(d[0] < d[1] && d[1] < d[2], "{d:?}");
            let g: Vec<f64> = r.rows.iter().map(|row| row.deltas[2].unwrap().d_mean).collect();
            assert!(g[0] < 0.0, "{g:?}");
        }
    }

    /// Standard error of the mean from non-overlapping batch means, which
    /// stays honest for the strongly autocorrelated waveform samples.
    fn batch_se(values: &[f64], batches: usize) -> f64 {
        let size = values.len() / batches;
        let means: Vec<f64> = values
            .chunks(size)
            .take(batches)
            .map(|c| c.iter().sum::<f64>() / c.len() as f64)
            .collect();
        crate::features::sample_sd(&means).unwrap() / (batches as f64).sqrt()
    }

    #[test]
    fn empty_schedule_is_stationary() {
        for seed in 0..3 {
            let s = generate_physio(&config(vec![], 240.0), seed, t0()).unwrap();
            let w = |a: u64| {
                (
                    t0().offset_nanos(a as i64 * 1_000_000_000),
                    t0().offset_nanos((a + 60) as i64 * 1_000_000_000),
                )
            };
            for topic in [IBI_TOPIC, PPG_TOPIC, ECG_TOPIC] {
                let x = series(&s, topic);
                let (a0, a1) = w(0);
                let (b0, b1) = w(120);
                let va: Vec<f64> = x.window(a0, a1).iter().map(|v| v.1).collect();
                let vb: Vec<f64> = x.window(b0, b1).iter().map(|v| v.1).collect();
                let sa = window_stats(&x, a0, a1).unwrap();
                let sb = window_stats(&x, b0, b1).unwrap();
                let se = if topic == IBI_TOPIC {
                    (sa.sd.powi(2) / va.len() as f64 + sb.sd.powi(2) / vb.len() as f64).sqrt()
                } else {
                    batch_se(&va, 10).hypot(batch_se(&vb, 10))
                };
                assert!(
                    (sa.mean - sb.mean).abs() <= 3.0 * se,
                    "{topic} seed {seed}: {} vs {} se {se}",
                    sa.mean,
                    sb.mean
                );
            }
        }
    }
}
