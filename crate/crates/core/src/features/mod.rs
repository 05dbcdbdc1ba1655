//! Feature extraction: windowed statistics, baseline deltas, resampling and
//! the robot-condition features (battery utilization, deployment time,
//! sensor status).

mod health;
mod report;

use std::cmp::Ordering;

use num_traits::Float;
use thiserror::Error;

use crate::model::{Payload, StampedMessage, StreamId, Timestamp};

pub use health::{classify, HealthTable, HealthThresholds, SensorHealth, SensorState};
pub use report::{segments, stats_report, ReportConfig, ReportRow, Segment, StatsReport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("no samples in window")]
    EmptyWindow,
    #[error("standard deviation needs at least two samples")]
    SingleSample,
    #[error("series is empty")]
    EmptySeries,
    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("clock skew: now {now} is before first seen {first_seen}")]
    ClockSkew { first_seen: Timestamp, now: Timestamp },
    #[error("stamps must be strictly increasing (sample {0})")]
    NotMonotone(usize),
    #[error("value at sample {0} is not finite")]
    NonFinite(usize),
    #[error("window start {0} is not before end {1}")]
    BadWindow(Timestamp, Timestamp),
    #[error("resampling period must be positive")]
    BadPeriod,
    #[error("no baseline segment named {0:?}")]
    MissingBaseline(String),
}

/// One numeric stream with strictly increasing stamps and finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct Series<T = f64> {
    pub id: StreamId,
    samples: Vec<(Timestamp, T)>,
}

impl<T: Float> Series<T> {
    pub fn new(id: StreamId, samples: Vec<(Timestamp, T)>) -> Result<Self, FeatureError> {
        for (i, w) in samples.windows(2).enumerate() {
            if w[1].0 <= w[0].0 {
                return Err(FeatureError::NotMonotone(i + 1));
            }
        }
        if let Some(i) = samples.iter().position(|(_, v)| !v.is_finite()) {
            return Err(FeatureError::NonFinite(i));
        }
        Ok(Series { id, samples })
    }

    /// Builds a series from the first real of each message payload. Messages
    /// without a numeric payload or repeating an earlier stamp are skipped.
    pub fn from_messages<'a>(id: StreamId, messages: impl IntoIterator<Item = &'a StampedMessage>) -> Self {
        let mut samples: Vec<(Timestamp, T)> = Vec::new();
        for m in messages {
            if m.stream != id {
                continue;
            }
            let Some(v) = m.payload.first_real().and_then(T::from) else {
                continue;
            };
            if !v.is_finite() || samples.last().is_some_and(|(t, _)| *t >= m.stamp) {
                continue;
            }
            samples.push((m.stamp, v));
        }
        Series { id, samples }
    }

    pub fn samples(&self) -> &[(Timestamp, T)] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn values(&self) -> Vec<T> {
        self.samples.iter().map(|&(_, v)| v).collect()
    }

    /// Samples with `start <= stamp < end`.
    pub fn window(&self, start: Timestamp, end: Timestamp) -> &[(Timestamp, T)] {
        let a = self.samples.partition_point(|(t, _)| *t < start);
        let b = self.samples.partition_point(|(t, _)| *t < end);
        &self.samples[a..b.max(a)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatTriple<T = f64> {
    pub mean: T,
    pub sd: T,
    pub median: T,
}

/// Task statistic minus baseline statistic, field by field. Any field may be
/// negative, including `d_sd`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineDelta<T = f64> {
    pub d_mean: T,
    pub d_sd: T,
    pub d_median: T,
}

impl<T: Float> BaselineDelta<T> {
    pub fn between(baseline: &StatTriple<T>, task: &StatTriple<T>) -> Self {
        BaselineDelta {
            d_mean: task.mean - baseline.mean,
            d_sd: task.sd - baseline.sd,
            d_median: task.median - baseline.median,
        }
    }
}

fn cast<T: Float>(v: f64) -> T {
    T::from(v).expect("float types represent f64 constants")
}

pub fn mean<T: Float>(values: &[T]) -> Result<T, FeatureError> {
    if values.is_empty() {
        return Err(FeatureError::EmptyWindow);
    }
    let n = T::from(values.len()).expect("length fits a float");
    Ok(values.iter().fold(T::zero(), |a, &v| a + v) / n)
}

/// Middle value; the average of the two middle values for even counts.
pub fn median<T: Float>(values: &[T]) -> Result<T, FeatureError> {
    if values.is_empty() {
        return Err(FeatureError::EmptyWindow);
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let n = v.len();
    Ok(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / cast(2.0)
    })
}

/// Sample standard deviation (divisor n - 1).
pub fn sample_sd<T: Float>(values: &[T]) -> Result<T, FeatureError> {
    match values.len() {
        0 => return Err(FeatureError::EmptyWindow),
        1 => return Err(FeatureError::SingleSample),
        _ => {}
    }
    let m = mean(values)?;
    let ss = values.iter().fold(T::zero(), |a, &v| a + (v - m) * (v - m));
    let n1 = T::from(values.len() - 1).expect("length fits a float");
    Ok((ss / n1).sqrt())
}

pub fn stats<T: Float>(values: &[T]) -> Result<StatTriple<T>, FeatureError> {
    Ok(StatTriple {
        sd: sample_sd(values)?,
        mean: mean(values)?,
        median: median(values)?,
    })
}

/// Mean, standard deviation and median of the samples in `[start, end)`.
pub fn window_stats<T: Float>(
    series: &Series<T>,
    start: Timestamp,
    end: Timestamp,
) -> Result<StatTriple<T>, FeatureError> {
    stats(&window_values(series, start, end)?)
}

/// Mean and median only, for windows that may hold a single sample.
pub fn window_stats_partial<T: Float>(
    series: &Series<T>,
    start: Timestamp,
    end: Timestamp,
) -> Result<(T, T), FeatureError> {
    let v = window_values(series, start, end)?;
    Ok((mean(&v)?, median(&v)?))
}

fn window_values<T: Float>(series: &Series<T>, start: Timestamp, end: Timestamp) -> Result<Vec<T>, FeatureError> {
    if start >= end {
        return Err(FeatureError::BadWindow(start, end));
    }
    Ok(series.window(start, end).iter().map(|&(_, v)| v).collect())
}

/// Statistics of `task` minus statistics of `baseline`.
pub fn baseline_delta<T: Float>(baseline: &[T], task: &[T]) -> Result<BaselineDelta<T>, FeatureError> {
    Ok(BaselineDelta::between(&stats(baseline)?, &stats(task)?))
}

/// Uniform grid of `count` points from `start` every `period_ns`. Each point
/// takes the nearest sample (earlier on ties) or `None` if no sample is
/// within one period.
pub fn resample_grid<T: Float>(
    series: &Series<T>,
    start: Timestamp,
    period_ns: u64,
    count: usize,
) -> Result<Vec<(Timestamp, Option<T>)>, FeatureError> {
    if series.is_empty() {
        return Err(FeatureError::EmptySeries);
    }
    if period_ns == 0 {
        return Err(FeatureError::BadPeriod);
    }
    let s = series.samples();
    let mut out = Vec::with_capacity(count);
    let mut j = 0;
    for k in 0..count {
        let t = Timestamp::from_total_nanos(start.total_nanos() + k as u128 * period_ns as u128);
        while j < s.len() && s[j].0 < t {
            j += 1;
        }
        // s[j-1] < t <= s[j]
        let before = j
            .checked_sub(1)
            .map(|i| (t.total_nanos() - s[i].0.total_nanos(), s[i].1));
        let after = s.get(j).map(|&(u, v)| (u.total_nanos() - t.total_nanos(), v));
        let nearest = match (before, after) {
            (Some(b), Some(a)) => Some(if b.0 <= a.0 { b } else { a }),
            (b, a) => b.or(a),
        };
        out.push((t, nearest.filter(|(d, _)| *d <= period_ns as u128).map(|(_, v)| v)));
    }
    Ok(out)
}

/// Like [`resample_grid`] with missing points dropped.
pub fn resample_nearest<T: Float>(
    series: &Series<T>,
    start: Timestamp,
    period_ns: u64,
    count: usize,
) -> Result<Series<T>, FeatureError> {
    let samples = resample_grid(series, start, period_ns, count)?
        .into_iter()
        .filter_map(|(t, v)| v.map(|v| (t, v)))
        .collect();
    Ok(Series {
        id: series.id.clone(),
        samples,
    })
}

/// Least-squares slope of value against time in seconds.
pub fn ols_slope<T: Float>(samples: &[(Timestamp, T)]) -> Result<T, FeatureError> {
    if samples.len() < 2 {
        return Err(FeatureError::InsufficientSamples {
            needed: 2,
            got: samples.len(),
        });
    }
    let t0 = samples[0].0.total_nanos();
    let ts: Vec<T> = samples
        .iter()
        .map(|(t, _)| cast::<T>((t.total_nanos() - t0) as f64 / 1e9))
        .collect();
    let vs: Vec<T> = samples.iter().map(|&(_, v)| v).collect();
    let mt = mean(&ts)?;
    let mv = mean(&vs)?;
    let (mut sxy, mut sxx) = (T::zero(), T::zero());
    for (&t, &v) in ts.iter().zip(&vs) {
        sxy = sxy + (t - mt) * (v - mv);
        sxx = sxx + (t - mt) * (t - mt);
    }
    Ok(sxy / sxx)
}

/// Battery discharge rate in percent per minute over `[start, end)`;
/// positive while discharging.
pub fn battery_utilization<T: Float>(battery: &Series<T>, start: Timestamp, end: Timestamp) -> Result<T, FeatureError> {
    if start >= end {
        return Err(FeatureError::BadWindow(start, end));
    }
    let rate = -ols_slope(battery.window(start, end))? * cast(60.0);
    Ok(if rate == T::zero() { T::zero() } else { rate })
}

/// Seconds since a stream was first seen.
pub fn deployment_time<T: Float>(first_seen: Timestamp, now: Timestamp) -> Result<T, FeatureError> {
    if now < first_seen {
        return Err(FeatureError::ClockSkew { first_seen, now });
    }
    Ok(cast((now.total_nanos() - first_seen.total_nanos()) as f64 / 1e9))
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureValue<T = f64> {
    Scalar(T),
    Stats(StatTriple<T>),
    Delta(BaselineDelta<T>),
}

impl<T: Float> FeatureValue<T> {
    pub fn reals(&self) -> Vec<f64> {
        let f = |v: T| v.to_f64().unwrap_or(f64::NAN);
        match self {
            FeatureValue::Scalar(v) => vec![f(*v)],
            FeatureValue::Stats(s) => vec![f(s.mean), f(s.sd), f(s.median)],
            FeatureValue::Delta(d) => vec![f(d.d_mean), f(d.d_sd), f(d.d_median)],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord<T = f64> {
    pub source: StreamId,
    pub window: (Timestamp, Timestamp),
    pub name: String,
    pub value: FeatureValue<T>,
}

impl<T: Float> FeatureRecord<T> {
    pub fn new(
        source: StreamId,
        window: (Timestamp, Timestamp),
        name: impl Into<String>,
        value: FeatureValue<T>,
    ) -> Result<Self, FeatureError> {
        if window.0 >= window.1 {
            return Err(FeatureError::BadWindow(window.0, window.1));
        }
        Ok(FeatureRecord {
            source,
            window,
            name: name.into(),
            value,
        })
    }

    /// Topic the record is published on: `features/<source>/<name>`.
    pub fn topic(&self) -> Result<StreamId, crate::model::ModelError> {
        StreamId::new(format!("features/{}/{}", self.source, self.name))
    }

    /// Message stamped at the window end carrying the value as reals.
    pub fn to_message(&self, seq: u64) -> Result<StampedMessage, crate::model::ModelError> {
        Ok(StampedMessage::new(
            self.topic()?,
            self.window.1,
            seq,
            Payload::reals(&self.value.reals()),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn id() -> StreamId {
        StreamId::new("x/y").unwrap()
    }

    fn secs(s: f64) -> Timestamp {
        Timestamp::from_total_nanos((s * 1e9).round() as u128)
    }

    fn series(points: &[(f64, f64)]) -> Series {
        Series::new(id(), points.iter().map(|&(t, v)| (secs(t), v)).collect()).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn stats_examples() {
        let s = stats(&[7.0, 7.0, 7.0]).unwrap();
        assert_eq!((s.mean, s.sd, s.median), (7.0, 0.0, 7.0));
        let s = stats(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!((s.mean, s.median), (2.5, 2.5));
        // sample sd of 1..4: sum of squares 5, divided by 3
        assert!(close(s.sd, (5.0f64 / 3.0).sqrt(), 1e-12));
        assert!(close(s.sd, 1.2909944, 1e-7));
        let s = stats(&[1.0, 3.0]).unwrap();
        assert_eq!((s.mean, s.median), (2.0, 2.0));
        assert!(close(s.sd, 2f64.sqrt(), 1e-12));
    }

    #[test]
    fn window_errors() {
        let s = series(&[(0.0, 1.0), (1.0, 2.0)]);
        assert_eq!(window_stats(&s, secs(5.0), secs(6.0)), Err(FeatureError::EmptyWindow));
        assert_eq!(window_stats(&s, secs(0.0), secs(0.5)), Err(FeatureError::SingleSample));
        assert_eq!(window_stats_partial(&s, secs(0.0), secs(0.5)), Ok((1.0, 1.0)));
        assert!(matches!(
            window_stats(&s, secs(1.0), secs(1.0)),
            Err(FeatureError::BadWindow(..))
        ));
        // end is exclusive
        assert_eq!(window_stats_partial(&s, secs(0.0), secs(1.0)), Ok((1.0, 1.0)));
    }

    #[test]
    fn series_validation() {
        assert_eq!(
            Series::new(id(), vec![(secs(1.0), 0.0), (secs(1.0), 1.0)]),
            Err(FeatureError::NotMonotone(1))
        );
        assert_eq!(
            Series::new(id(), vec![(secs(1.0), f64::NAN)]),
            Err(FeatureError::NonFinite(0))
        );
    }

    #[test]
    fn single_precision_works() {
        let s = stats(&[1.0f32, 2.0, 3.0, 4.0]).unwrap();
        assert!((s.sd - 1.2909944f32).abs() < 1e-6);
    }

    #[test]
    fn delta_examples() {
        let d = baseline_delta(&[0.0, 0.0, 0.0], &[1.0, 3.0]).unwrap();
        assert_eq!((d.d_mean, d.d_median), (2.0, 2.0));
        assert!(close(d.d_sd, 2f64.sqrt(), 1e-12));
        // a calmer task segment gives a negative sd delta
        let d = baseline_delta(&[0.0, 10.0, 0.0, 10.0], &[5.0, 5.5, 5.0]).unwrap();
        assert!(d.d_sd < 0.0);
    }

    #[test]
    fn resample_examples() {
        let s = series(&[(0.0, 10.0), (1.0, 20.0)]);
        let g = resample_grid(&s, secs(0.0), 500_000_000, 3).unwrap();
        let v: Vec<_> = g.iter().map(|(_, v)| *v).collect();
        assert_eq!(v, vec![Some(10.0), Some(10.0), Some(20.0)]);

        let on_grid = series(&[(0.0, 1.0), (0.5, 2.0), (1.0, 3.0)]);
        assert_eq!(resample_nearest(&on_grid, secs(0.0), 500_000_000, 3).unwrap(), on_grid);

        let gap = series(&[(0.0, 1.0), (10.0, 2.0)]);
        let g = resample_grid(&gap, secs(0.0), 1_000_000_000, 11).unwrap();
        let missing: Vec<usize> = (0..11).filter(|&i| g[i].1.is_none()).collect();
        assert_eq!(missing, (2..=8).collect::<Vec<_>>());

        let empty = Series::<f64>::new(id(), vec![]).unwrap();
        assert_eq!(resample_grid(&empty, secs(0.0), 1, 1), Err(FeatureError::EmptySeries));
    }

    #[test]
    fn battery_examples() {
        let flat = series(&[(0.0, 80.0), (30.0, 80.0), (60.0, 80.0)]);
        assert_eq!(battery_utilization(&flat, secs(0.0), secs(61.0)).unwrap(), 0.0);
        let line = series(&[(0.0, 100.0), (60.0, 99.0)]);
        assert!(close(
            battery_utilization(&line, secs(0.0), secs(61.0)).unwrap(),
            1.0,
            1e-12
        ));
        let charging = series(&[(0.0, 50.0), (60.0, 51.0)]);
        assert!(battery_utilization(&charging, secs(0.0), secs(61.0)).unwrap() < 0.0);
        assert_eq!(
            battery_utilization(&line, secs(0.0), secs(1.0)),
            Err(FeatureError::InsufficientSamples { needed: 2, got: 1 })
        );
    }

    #[test]
    fn deployment_examples() {
        let t = Timestamp::new(100, 0).unwrap();
        assert_eq!(deployment_time::<f64>(t, t).unwrap(), 0.0);
        assert_eq!(
            deployment_time::<f64>(t, Timestamp::new(160, 0).unwrap()).unwrap(),
            60.0
        );
        assert!(matches!(
            deployment_time::<f64>(t, Timestamp::new(99, 0).unwrap()),
            Err(FeatureError::ClockSkew { .. })
        ));
    }

    #[test]
    fn feature_record_message() {
        let r = FeatureRecord::new(
            StreamId::new("robot1/battery").unwrap(),
            (secs(0.0), secs(30.0)),
            "utilization",
            FeatureValue::Scalar(0.25),
        )
        .unwrap();
        let m = r.to_message(4).unwrap();
        assert_eq!(m.stream.as_str(), "features/robot1/battery/utilization");
        assert_eq!(m.payload.to_reals().unwrap(), vec![0.25]);
        assert!(FeatureRecord::new(id(), (secs(1.0), secs(1.0)), "x", FeatureValue::Scalar(0.0)).is_err());
    }

    proptest! {
        #[test]
        fn stats_ignore_order(mut v in proptest::collection::vec(-1e6f64..1e6, 2..50), seed in any::<u64>()) {
            let a = stats(&v).unwrap();
            let n = v.len();
            v.rotate_left((seed as usize) % n);
            v.reverse();
            let b = stats(&v).unwrap();
            prop_assert_eq!(a.median, b.median);
            prop_assert!((a.mean - b.mean).abs() <= 1e-9 * (1.0 + a.mean.abs()));
            prop_assert!((a.sd - b.sd).abs() <= 1e-9 * (1.0 + a.sd.abs()));
        }

        #[test]
        fn delta_of_self_is_zero(v in proptest::collection::vec(-1e6f64..1e6, 2..50)) {
            let d = baseline_delta(&v, &v).unwrap();
            prop_assert_eq!((d.d_mean, d.d_sd, d.d_median), (0.0, 0.0, 0.0));
        }

        #[test]
        fn ols_recovers_linear_slope(
            a in -100f64..100.0,
            b in -5f64..5.0,
            n in 2usize..200,
            step_ms in 1u64..5_000,
        ) {
            let pts: Vec<(Timestamp, f64)> = (0..n)
                .map(|i| {
                    let t = i as u64 * step_ms;
                    (Timestamp::from_total_nanos(t as u128 * 1_000_000), a + b * t as f64 / 1e3)
                })
                .collect();
            let s = Series::new(id(), pts).unwrap();
            let rate = battery_utilization(&s, Timestamp::ZERO, Timestamp::MAX).unwrap();
            let expect = -b * 60.0;
            prop_assert!((rate - expect).abs() <= 1e-9 * expect.abs().max(1e-3), "{} vs {}", rate, expect);
        }
    }
}
