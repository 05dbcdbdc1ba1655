//! Time-series output: a CSV resampled on a uniform grid, or an SVG with
//! one chart per stream stacked over a shared time axis.

use std::fmt::Write as _;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use clap::ValueEnum;
use thiserror::Error;

use condmon_core::bus::{Incoming, TopicPattern};
use condmon_core::features::{resample_grid, Series};
use condmon_core::model::{PayloadSchema, StampedMessage, StreamDescriptor, StreamId, Timestamp};

use crate::analysis::{expand, load_bag};
use crate::live::connect;
use crate::{failed, usage, CliError, PlotArgs, TimeArg};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlotFormat {
    Csv,
    Svg,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotSpec {
    /// Stream patterns; at least one.
    pub streams: Vec<String>,
    pub start: Option<TimeArg>,
    pub end: Option<TimeArg>,
    pub period_ns: u64,
    pub format: PlotFormat,
    /// Pattern of marker streams drawn over the charts.
    pub markers: Option<String>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PlotError {
    #[error("no samples in the requested range")]
    NoData,
    #[error("empty time range {0} .. {1}")]
    BadRange(Timestamp, Timestamp),
    #[error("at least one stream pattern is required")]
    NoStreams,
    #[error("bad stream pattern {0:?}")]
    BadPattern(String),
    #[error("grid period must be positive")]
    BadPeriod,
}

const WIDTH: f64 = 960.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const CHART: f64 = 120.0;
const GAP: f64 = 36.0;
const AXIS: f64 = 44.0;

struct Prepared {
    start: Timestamp,
    end: Timestamp,
    series: Vec<Series>,
    markers: Vec<(Timestamp, String)>,
}

fn prepare(
    spec: &PlotSpec,
    messages: &[StampedMessage],
    descriptors: &[StreamDescriptor],
) -> Result<Prepared, PlotError> {
    if spec.streams.is_empty() {
        return Err(PlotError::NoStreams);
    }
    if spec.period_ns == 0 {
        return Err(PlotError::BadPeriod);
    }
    let ids = expand(&spec.streams, messages).map_err(|_| PlotError::BadPattern(spec.streams.join(" ")))?;
    let numeric = |id: &StreamId| {
        descriptors
            .iter()
            .find(|d| &d.id == id)
            .is_none_or(|d| d.schema != PayloadSchema::Blob)
    };
    let all: Vec<Series> = ids
        .into_iter()
        .filter(|id| numeric(id))
        .map(|id| Series::from_messages(id, messages))
        .collect();
    let origin = messages.iter().map(|m| m.stamp).min().unwrap_or(Timestamp::ZERO);
    let first = all.iter().filter_map(|s| s.samples().first().map(|x| x.0)).min();
    let last = all.iter().filter_map(|s| s.samples().last().map(|x| x.0)).max();
    if first.is_none() {
        return Err(PlotError::NoData);
    }
    let start = spec.start.map(|a| a.resolve(origin)).or(first).unwrap_or(origin);
    let end = spec
        .end
        .map(|a| a.resolve(origin))
        .or(last.map(|t| t.offset_nanos(1)))
        .unwrap_or(origin);
    if start >= end {
        return Err(PlotError::BadRange(start, end));
    }
    let series: Vec<Series> = all
        .into_iter()
        .map(|s| Series::new(s.id.clone(), s.window(start, end).to_vec()).expect("window of a valid series"))
        .collect();
    if series.iter().all(|s| s.is_empty()) {
        return Err(PlotError::NoData);
    }
    let mut markers = Vec::new();
    if let Some(p) = &spec.markers {
        let pattern = TopicPattern::parse(p).map_err(|_| PlotError::BadPattern(p.clone()))?;
        for m in messages {
            if pattern.matches(&m.stream) && m.stamp >= start && m.stamp < end {
                markers.push((m.stamp, String::from_utf8_lossy(m.payload.as_bytes()).into_owned()));
            }
        }
    }
    Ok(Prepared {
        start,
        end,
        series,
        markers,
    })
}

/// Number of grid points in `[start, end)`.
pub fn grid_count(start: Timestamp, end: Timestamp, period_ns: u64) -> usize {
    let span = end.total_nanos().saturating_sub(start.total_nanos());
    span.div_ceil(period_ns as u128) as usize
}

fn to_csv(p: &Prepared, period_ns: u64) -> String {
    let count = grid_count(p.start, p.end, period_ns);
    let columns: Vec<Vec<Option<f64>>> = p
        .series
        .iter()
        .map(|s| match resample_grid(s, p.start, period_ns, count) {
            Ok(g) => g.into_iter().map(|(_, v)| v).collect(),
            Err(_) => vec![None; count],
        })
        .collect();
    let mut out = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["stamp".to_string()];
    header.extend(p.series.iter().map(|s| s.id.as_str().to_string()));
    out.write_record(&header).expect("writing to memory");
    for k in 0..count {
        let t = Timestamp::from_total_nanos(p.start.total_nanos() + k as u128 * period_ns as u128);
        let mut row = vec![t.to_string()];
        // adding zero folds -0 into 0
        row.extend(
            columns
                .iter()
                .map(|c| c[k].map_or(String::new(), |v| (v + 0.0).to_string())),
        );
        out.write_record(&row).expect("writing to memory");
    }
    String::from_utf8(out.into_inner().expect("writing to memory")).expect("CSV of UTF-8 fields")
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            c if c.is_control() => {}
            c => out.push(c),
        }
    }
    out
}

/// A round tick spacing giving at most ten ticks over `span` seconds.
fn tick_step(span: f64) -> f64 {
    let raw = span / 10.0;
    let mag = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 5.0, 10.0]
        .into_iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag)
}

fn to_svg(p: &Prepared) -> String {
    let n = p.series.len() as f64;
    let height = TOP + n * CHART + (n - 1.0) * GAP + AXIS;
    let plot_w = WIDTH - LEFT - RIGHT;
    let span_ns = (p.end.total_nanos() - p.start.total_nanos()) as f64;
    let x_of = |t: Timestamp| LEFT + (t.total_nanos() - p.start.total_nanos()) as f64 / span_ns * plot_w;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (i, series) in p.series.iter().enumerate() {
        let y0 = TOP + i as f64 * (CHART + GAP);
        let values = series.values();
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (lo, hi) = match (lo.is_finite(), hi > lo) {
            (false, _) => (0.0, 1.0),
            (true, false) => (lo - 1.0, lo + 1.0),
            (true, true) => (lo, hi),
        };
        let y_of = |v: f64| y0 + CHART - (v - lo) / (hi - lo) * CHART;
        let id = escape(series.id.as_str());
        let _ = writeln!(s, r#"<g class="chart" data-stream="{id}">"#);
        let _ = writeln!(
            s,
            r#"<text x="{LEFT}" y="{:.2}" font-weight="bold">{id}</text>"#,
            y0 - 8.0
        );
        let _ = writeln!(
            s,
            r##"<rect x="{LEFT}" y="{y0:.2}" width="{plot_w:.2}" height="{CHART:.2}" fill="none" stroke="#999"/>"##
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{hi:.4}</text>"#,
            LEFT - 6.0,
            y0 + 10.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{lo:.4}</text>"#,
            LEFT - 6.0,
            y0 + CHART
        );
        let mut points = String::new();
        for &(t, v) in series.samples() {
            let _ = write!(points, "{:.2},{:.2} ", x_of(t), y_of(v));
        }
        let _ = writeln!(
            s,
            r##"<polyline class="series" data-stream="{id}" fill="none" stroke="#1f5fa8" stroke-width="1" points="{}"/>"##,
            points.trim_end()
        );
        let _ = writeln!(s, "</g>");
    }
    let bottom = TOP + n * CHART + (n - 1.0) * GAP;
    let span_s = span_ns / 1e9;
    let step = tick_step(span_s);
    let mut k = 0.0;
    while k * step <= span_s + 1e-9 {
        let x = LEFT + k * step / span_s * plot_w;
        let _ = writeln!(
            s,
            r##"<line x1="{x:.2}" y1="{bottom:.2}" x2="{x:.2}" y2="{:.2}" stroke="#333"/>"##,
            bottom + 5.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            bottom + 17.0,
            k * step
        );
        k += 1.0;
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">seconds after {}</text>"#,
        LEFT + plot_w / 2.0,
        bottom + 34.0,
        p.start
    );
    for (t, label) in &p.markers {
        let x = x_of(*t);
        let _ = writeln!(
            s,
            r##"<line class="marker" x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{bottom:.2}" stroke="#c0392b" stroke-dasharray="4 3"/>"##,
            TOP - 4.0
        );
        if !label.is_empty() {
            let _ = writeln!(
                s,
                r##"<text class="marker-label" x="{:.2}" y="{:.2}" fill="#c0392b">{}</text>"##,
                x + 3.0,
                TOP + 8.0,
                escape(label)
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Renders `messages` according to `spec`.
pub fn render(
    spec: &PlotSpec,
    messages: &[StampedMessage],
    descriptors: &[StreamDescriptor],
) -> Result<String, PlotError> {
    let p = prepare(spec, messages, descriptors)?;
    Ok(match spec.format {
        PlotFormat::Csv => to_csv(&p, spec.period_ns),
        PlotFormat::Svg => to_svg(&p),
    })
}

fn capture(
    args: &PlotArgs,
    seconds: f64,
    stop: &AtomicBool,
) -> Result<(Vec<StreamDescriptor>, Vec<StampedMessage>), CliError> {
    let window = Duration::try_from_secs_f64(seconds)
        .ok()
        .filter(|d| !d.is_zero())
        .ok_or_else(|| usage("--live must be a positive number of seconds"))?;
    let mut client = connect(args.broker.as_deref())?;
    let mut patterns = args.streams.clone();
    patterns.extend(args.markers.clone());
    for p in &patterns {
        client
            .subscribe(p, condmon_core::bus::RECORDER_QUEUE_CAPACITY)
            .map_err(usage)?;
    }
    let deadline = Instant::now() + window;
    let (mut descriptors, mut messages) = (Vec::new(), Vec::new());
    while Instant::now() < deadline && !stop.load(Ordering::SeqCst) {
        match client.recv_timeout(Duration::from_millis(50)).map_err(failed)? {
            Some(Incoming::Message(m)) => messages.push(m),
            Some(Incoming::Advertise(d)) => descriptors.push(d),
            None => {}
        }
    }
    messages.sort_by(StampedMessage::replay_order);
    Ok((descriptors, messages))
}

pub(crate) fn run(args: &PlotArgs, stop: &AtomicBool) -> Result<(), CliError> {
    let format = match args.format {
        Some(f) => f,
        None => match args
            .output
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref()
        {
            Some("csv") => PlotFormat::Csv,
            Some("svg") => PlotFormat::Svg,
            _ => return Err(usage("cannot tell the format from the output name; pass --format")),
        },
    };
    let period_ns = (args.period_ms * 1e6).round();
    if !(period_ns.is_finite() && period_ns >= 1.0) {
        return Err(usage("--period-ms must be positive"));
    }
    let spec = PlotSpec {
        streams: args.streams.clone(),
        start: args.start,
        end: args.end,
        period_ns: period_ns as u64,
        format,
        markers: args.markers.clone(),
    };
    let (descriptors, messages) = match (&args.bag, args.live) {
        (Some(path), None) => load_bag(path)?,
        (None, Some(secs)) => capture(args, secs, stop)?,
        _ => return Err(usage("give exactly one of --bag or --live")),
    };
    let text = render(&spec, &messages, &descriptors).map_err(|e| match e {
        PlotError::NoData => failed(e),
        _ => usage(e),
    })?;
    std::fs::write(&args.output, text).map_err(|e| failed(format!("cannot write {}: {e}", args.output.display())))
}
