use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, Write};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use condmon_core::bag::{bag_info, Bag};
use condmon_core::bus::{Incoming, TopicPattern};
use condmon_core::features::{
    battery_utilization, deployment_time, stats_report, window_stats, FeatureError, HealthTable, HealthThresholds,
    ReportConfig, SensorState, Series, StatsReport,
};
use condmon_core::model::{Payload, PayloadSchema, StampedMessage, StreamDescriptor, StreamId, StreamKind, Timestamp};
use condmon_core::syncfilter::{SyncFilter, SyncPolicy, SyncedTuple};

use crate::live::connect;
use crate::{failed, usage, CliError, FeaturesArgs, InfoArgs, PolicyArg, ReportArgs, SyncArgs};

pub(crate) type CsvOut = csv::Writer<Box<dyn Write>>;

pub(crate) fn csv_out(path: Option<&Path>) -> Result<CsvOut, CliError> {
    let sink: Box<dyn Write> = match path {
        Some(p) => Box::new(File::create(p).map_err(|e| failed(format!("cannot create {}: {e}", p.display())))?),
        None => Box::new(io::stdout()),
    };
    Ok(csv::Writer::from_writer(sink))
}

pub(crate) fn csv_error(e: csv::Error) -> CliError {
    failed(format!("cannot write CSV: {e}"))
}

pub(crate) fn load_bag(path: &Path) -> Result<(Vec<StreamDescriptor>, Vec<StampedMessage>), CliError> {
    let mut bag = Bag::open(path).map_err(|e| failed(format!("{}: {e}", path.display())))?;
    let messages = bag.messages().map_err(|e| failed(format!("{}: {e}", path.display())))?;
    Ok((bag.descriptors(), messages))
}

/// Distinct stream ids in `messages` matching any of `patterns`, in
/// pattern order and then by name.
pub(crate) fn expand(patterns: &[String], messages: &[StampedMessage]) -> Result<Vec<StreamId>, CliError> {
    let mut present: Vec<&StreamId> = messages.iter().map(|m| &m.stream).collect();
    present.sort();
    present.dedup();
    let mut out: Vec<StreamId> = Vec::new();
    for p in patterns {
        let pattern = TopicPattern::parse(p).map_err(usage)?;
        for id in &present {
            if pattern.matches(id) && !out.contains(id) {
                out.push((*id).clone());
            }
        }
    }
    Ok(out)
}

pub(crate) fn info(args: &InfoArgs) -> Result<(), CliError> {
    let info = bag_info(&args.bag).map_err(|e| failed(format!("{}: {e}", args.bag.display())))?;
    print!("{info}");
    Ok(())
}

fn format_real(v: f64) -> String {
    v.to_string()
}

/// Text form of a payload for CSV cells.
pub(crate) fn cell(payload: &Payload, schema: Option<PayloadSchema>) -> String {
    let reals = match schema {
        Some(PayloadSchema::Blob) => None,
        _ => payload.to_reals(),
    };
    match reals {
        Some(v) => v.iter().map(|x| format_real(*x)).collect::<Vec<_>>().join(";"),
        None => String::from_utf8_lossy(payload.as_bytes()).into_owned(),
    }
}

fn policy(args: &SyncArgs, descriptors: &[StreamDescriptor]) -> Result<SyncPolicy, CliError> {
    match (args.policy, args.slop_ms) {
        (PolicyArg::Exact, None) => Ok(SyncPolicy::ExactTime),
        (PolicyArg::Exact, Some(_)) => Err(usage("--slop-ms only applies to --policy approx")),
        (PolicyArg::Approx, Some(ms)) if ms.is_finite() && ms >= 0.0 => Ok(SyncPolicy::ApproximateTime {
            slop_ns: (ms * 1e6).round() as u64,
        }),
        (PolicyArg::Approx, Some(_)) => Err(usage("--slop-ms must be non-negative")),
        (PolicyArg::Approx, None) if !descriptors.is_empty() => Ok(SyncPolicy::default_for(descriptors)),
        (PolicyArg::Approx, None) => Err(usage("--slop-ms is required when stream rates are unknown")),
    }
}

struct TupleCsv {
    out: CsvOut,
    schemas: Vec<Option<PayloadSchema>>,
}

impl TupleCsv {
    fn new(path: Option<&Path>, ids: &[StreamId], descriptors: &[StreamDescriptor]) -> Result<Self, CliError> {
        let mut out = csv_out(path)?;
        let mut header = vec!["stamp".to_string()];
        header.extend(ids.iter().map(|i| i.as_str().to_string()));
        header.push("spread_ns".into());
        out.write_record(&header).map_err(csv_error)?;
        let schemas = ids
            .iter()
            .map(|id| descriptors.iter().find(|d| &d.id == id).map(|d| d.schema))
            .collect();
        Ok(TupleCsv { out, schemas })
    }

    fn write(&mut self, t: &SyncedTuple) -> Result<(), CliError> {
        let mut row = vec![t.pivot_stamp.to_string()];
        row.extend(t.messages.iter().zip(&self.schemas).map(|(m, s)| cell(&m.payload, *s)));
        row.push(t.spread_ns.to_string());
        self.out.write_record(&row).map_err(csv_error)
    }

    fn finish(mut self) -> Result<(), CliError> {
        self.out.flush().map_err(|e| failed(format!("cannot write CSV: {e}")))
    }
}

pub(crate) fn sync(args: &SyncArgs, stop: &AtomicBool) -> Result<(), CliError> {
    match &args.bag {
        Some(path) => sync_bag(args, path),
        None => sync_live(args, stop),
    }
}

fn sync_bag(args: &SyncArgs, path: &Path) -> Result<(), CliError> {
    if args.publish.is_some() {
        return Err(usage("--publish needs live input"));
    }
    let (descriptors, messages) = load_bag(path)?;
    let ids = expand(&args.topics, &messages)?;
    if ids.len() < 2 {
        return Err(usage(format!(
            "need at least two streams to align, matched {}",
            ids.len()
        )));
    }
    let chosen: Vec<StreamDescriptor> = descriptors.into_iter().filter(|d| ids.contains(&d.id)).collect();
    let policy = policy(args, if chosen.len() == ids.len() { &chosen } else { &[] })?;
    let mut filter = SyncFilter::new(ids.clone(), policy).map_err(usage)?;
    let mut out = TupleCsv::new(args.output.as_deref(), &ids, &chosen)?;
    let mut emitted = 0u64;
    for m in messages.into_iter().filter(|m| ids.contains(&m.stream)) {
        for t in filter.push(m).map_err(failed)? {
            out.write(&t)?;
            emitted += 1;
        }
    }
    for t in filter.finish() {
        out.write(&t)?;
        emitted += 1;
    }
    out.finish()?;
    eprintln!("{emitted} tuples, {} messages discarded", filter.stats().discarded);
    Ok(())
}

fn sync_live(args: &SyncArgs, stop: &AtomicBool) -> Result<(), CliError> {
    if args.topics.len() < 2 {
        return Err(usage("need at least two streams to align"));
    }
    let ids = args
        .topics
        .iter()
        .map(|t| StreamId::new(t.as_str()).map_err(|e| usage(format!("live input needs exact stream ids: {e}"))))
        .collect::<Result<Vec<_>, _>>()?;
    let policy = policy(args, &[])?;
    let mut filter = SyncFilter::new(ids.clone(), policy).map_err(usage)?;
    let publish_as = args.publish.as_deref().map(SyncedTuple::topic);
    let deadline = args
        .duration
        .map(|d| Duration::try_from_secs_f64(d).map_err(|_| usage("--duration must be non-negative")))
        .transpose()?
        .map(|d| Instant::now() + d);
    let mut client = connect(args.broker.as_deref())?;
    for id in &ids {
        client.subscribe(id.as_str(), 4096).map_err(failed)?;
    }
    let mut out = TupleCsv::new(args.output.as_deref(), &ids, &[])?;
    let mut kinds: BTreeMap<StreamId, StreamKind> = BTreeMap::new();
    let mut advertised = false;
    let mut seq = 0u64;
    while !stop.load(Ordering::SeqCst) && deadline.is_none_or(|d| Instant::now() < d) {
        let msg = match client.recv_timeout(Duration::from_millis(50)).map_err(failed)? {
            Some(Incoming::Message(m)) => m,
            Some(Incoming::Advertise(d)) => {
                kinds.insert(d.id.clone(), d.kind);
                continue;
            }
            None => continue,
        };
        let tuples = match filter.push(msg) {
            Ok(t) => t,
            Err(e) => {
                log::warn!("{e}");
                continue;
            }
        };
        for t in tuples {
            out.write(&t)?;
            if let (Some(topic), Some(name)) = (&publish_as, &args.publish) {
                if !advertised {
                    let kind = kinds.get(&ids[0]).copied().unwrap_or(StreamKind::BehavioralDevice);
                    let rate = 1e9 / (policy.slop_ns().max(1) as f64);
                    let d = StreamDescriptor::new(topic.as_str(), kind, rate, PayloadSchema::Blob).map_err(usage)?;
                    client.advertise(&d).map_err(failed)?;
                    advertised = true;
                }
                client
                    .publish(&t.to_message(name, seq).map_err(usage)?)
                    .map_err(failed)?;
                seq += 1;
            }
        }
    }
    out.finish()
}

/// One row of the features table.
struct Row {
    start: Timestamp,
    end: Timestamp,
    stream: String,
    feature: &'static str,
    value: String,
}

pub(crate) fn features(args: &FeaturesArgs) -> Result<(), CliError> {
    let window_ns = (args.window * 1e9).round();
    if !(window_ns.is_finite() && window_ns >= 1.0) {
        return Err(usage("--window must be positive"));
    }
    let window_ns = window_ns as i64;
    let (descriptors, messages) = load_bag(&args.bag)?;
    let ids = expand(std::slice::from_ref(&args.topics), &messages)?;
    let Some(first) = messages.iter().map(|m| m.stamp).min() else {
        return Err(failed("the bag holds no messages"));
    };
    let last = messages.iter().map(|m| m.stamp).max().unwrap_or(first);
    let now = args.at.map_or(last, |a| a.resolve(first));

    let mut rows = Vec::new();
    let mut health = HealthTable::new(HealthThresholds::default());
    for id in &ids {
        let descriptor = descriptors.iter().find(|d| &d.id == id);
        if descriptor.is_some_and(|d| d.schema == PayloadSchema::Blob) {
            continue;
        }
        let series: Series = Series::from_messages(id.clone(), &messages);
        let Some(&(seen, _)) = series.samples().first() else {
            continue;
        };
        let mut start = first;
        while start <= last {
            let end = start.offset_nanos(window_ns);
            let push = |rows: &mut Vec<Row>, feature, value: f64| {
                rows.push(Row {
                    start,
                    end,
                    stream: id.as_str().to_string(),
                    feature,
                    value: format_real(value),
                })
            };
            match window_stats(&series, start, end) {
                Ok(s) => {
                    push(&mut rows, "mean", s.mean);
                    push(&mut rows, "sd", s.sd);
                    push(&mut rows, "median", s.median);
                }
                Err(FeatureError::EmptyWindow | FeatureError::SingleSample) => {}
                Err(e) => return Err(failed(e)),
            }
            if id.segments().last() == Some("battery") {
                match battery_utilization(&series, start, end) {
                    Ok(v) => push(&mut rows, "battery_utilization", v),
                    Err(FeatureError::InsufficientSamples { .. } | FeatureError::EmptyWindow) => {}
                    Err(e) => return Err(failed(e)),
                }
            }
            start = end;
        }

        let span = series
            .samples()
            .last()
            .map_or(0, |s| (s.0.total_nanos() - seen.total_nanos()) as u64);
        let rate = descriptor
            .map(|d| d.nominal_rate_hz)
            .or_else(|| (series.len() > 1 && span > 0).then(|| (series.len() - 1) as f64 * 1e9 / span as f64));
        if let Some(rate) = rate {
            health.register(id.clone(), rate, seen);
            for &(t, _) in series.samples().iter().take_while(|s| s.0 <= now) {
                health.observe(id, t);
            }
        }
        if now >= seen {
            let up: f64 = deployment_time(seen, now).map_err(failed)?;
            rows.push(Row {
                start: seen,
                end: now,
                stream: id.as_str().to_string(),
                feature: "deployment_time_s",
                value: format_real(up),
            });
        }
    }
    for h in health.status(now) {
        let state = match h.state {
            SensorState::Alive => "alive",
            SensorState::Stale => "stale",
            SensorState::Dead => "dead",
        };
        let since = h.last_seen;
        rows.push(Row {
            start: since,
            end: now,
            stream: h.id.as_str().to_string(),
            feature: "status",
            value: state.to_string(),
        });
    }

    let mut out = csv_out(args.output.as_deref())?;
    out.write_record(["window_start", "window_end", "stream", "feature", "value"])
        .map_err(csv_error)?;
    for r in rows {
        out.write_record([
            r.start.to_string(),
            r.end.to_string(),
            r.stream,
            r.feature.to_string(),
            r.value,
        ])
        .map_err(csv_error)?;
    }
    out.flush().map_err(|e| failed(format!("cannot write CSV: {e}")))
}

fn report_config(args: &ReportArgs) -> Result<ReportConfig, CliError> {
    let mut config = ReportConfig {
        marker_topic: StreamId::new(args.marker_topic.as_str()).map_err(usage)?,
        baseline: args.baseline.clone(),
        ..ReportConfig::default()
    };
    if !args.features.is_empty() {
        config.features = args
            .features
            .iter()
            .map(|f| {
                let (label, topic) = f
                    .split_once('=')
                    .ok_or_else(|| usage(format!("--feature {f:?} is not LABEL=TOPIC")))?;
                Ok((label.to_string(), StreamId::new(topic).map_err(usage)?))
            })
            .collect::<Result<_, CliError>>()?;
    }
    Ok(config)
}

pub(crate) fn report(args: &ReportArgs) -> Result<(), CliError> {
    let config = report_config(args)?;
    let (_, messages) = load_bag(&args.bag)?;
    let table: StatsReport = stats_report(&messages, &config).map_err(failed)?;
    for w in &table.warnings {
        eprintln!("warning: {w}");
    }
    print!("{}", table.to_text());
    if let Some(path) = &args.output {
        std::fs::write(path, table.to_csv()).map_err(|e| failed(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(())
}
