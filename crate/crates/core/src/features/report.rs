use num_traits::Float;

use crate::model::{StampedMessage, StreamId, Timestamp};

use super::{stats, BaselineDelta, FeatureError, Series, StatTriple};

pub const STATISTICS: [&str; 3] = ["Average", "S.D.", "Median"];

#[derive(Debug, Clone, PartialEq)]
pub struct ReportConfig {
    pub marker_topic: StreamId,
    pub baseline: String,
    /// Column label and source stream, in column order.
    pub features: Vec<(String, StreamId)>,
}

impl Default for ReportConfig {
    fn default() -> Self {
        let id = |s: &str| StreamId::new(s).expect("valid default topic");
        ReportConfig {
            marker_topic: id("markers/segment"),
            baseline: "baseline".into(),
            features: [
                ("IBI", "human/ibi"),
                ("PPG", "human/ppg"),
                ("GSR", "human/gsr"),
                ("ECG", "human/ecg"),
            ]
            .into_iter()
            .map(|(l, s)| (l.to_string(), id(s)))
            .collect(),
        }
    }
}

/// A named interval `[start, end)` delimited by markers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub name: String,
    pub start: Timestamp,
    pub end: Timestamp,
}

/// Splits a session by its markers. A marker's text names the segment that
/// starts at its stamp; an empty text closes the open segment. The last open
/// segment runs to just past the final message.
pub fn segments(messages: &[StampedMessage], marker_topic: &StreamId) -> Vec<Segment> {
    let end_of_data = messages
        .iter()
        .map(|m| m.stamp)
        .max()
        .map(|t| t.offset_nanos(1))
        .unwrap_or(Timestamp::ZERO);
    let mut markers: Vec<&StampedMessage> = messages.iter().filter(|m| &m.stream == marker_topic).collect();
    markers.sort_by(|a, b| a.replay_order(b));
    let mut out = Vec::new();
    let mut open: Option<(String, Timestamp)> = None;
    for m in markers {
        let name = m.payload.as_text().unwrap_or("").trim().to_string();
        if let Some((n, start)) = open.take() {
            if m.stamp > start {
                out.push(Segment {
                    name: n,
                    start,
                    end: m.stamp,
                });
            }
        }
        if !name.is_empty() {
            open = Some((name, m.stamp));
        }
    }
    if let Some((name, start)) = open {
        if end_of_data > start {
            out.push(Segment {
                name,
                start,
                end: end_of_data,
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow<T = f64> {
    pub task: String,
    /// One entry per feature column; `None` where a stream was missing.
    pub deltas: Vec<Option<BaselineDelta<T>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatsReport<T = f64> {
    pub features: Vec<String>,
    pub rows: Vec<ReportRow<T>>,
    pub warnings: Vec<String>,
}

fn segment_values<T: Float>(series: &Series<T>, segs: &[&Segment]) -> Vec<T> {
    segs.iter()
        .flat_map(|s| series.window(s.start, s.end).iter().map(|&(_, v)| v))
        .collect()
}

/// Baseline-delta statistics for every task segment and feature stream.
/// Segments sharing a name are pooled. Tasks appear in order of first
/// appearance.
pub fn stats_report<T: Float>(
    messages: &[StampedMessage],
    config: &ReportConfig,
) -> Result<StatsReport<T>, FeatureError> {
    let segs = segments(messages, &config.marker_topic);
    let baseline: Vec<&Segment> = segs.iter().filter(|s| s.name == config.baseline).collect();
    if baseline.is_empty() {
        return Err(FeatureError::MissingBaseline(config.baseline.clone()));
    }
    let mut tasks: Vec<&str> = Vec::new();
    for s in &segs {
        if s.name != config.baseline && !tasks.contains(&s.name.as_str()) {
            tasks.push(&s.name);
        }
    }
    let mut warnings = Vec::new();
    let columns: Vec<(Series<T>, Option<StatTriple<T>>)> = config
        .features
        .iter()
        .map(|(label, id)| {
            let series = Series::from_messages(id.clone(), messages);
            let base = match stats(&segment_values(&series, &baseline)) {
                Ok(s) => Some(s),
                Err(e) => {
                    warnings.push(format!("{label} ({id}): baseline unusable: {e}"));
                    None
                }
            };
            (series, base)
        })
        .collect();
    let rows = tasks
        .iter()
        .map(|task| {
            let segs: Vec<&Segment> = segs.iter().filter(|s| s.name == *task).collect();
            let deltas = columns
                .iter()
                .zip(&config.features)
                .map(|((series, base), (label, id))| {
                    let base = base.as_ref()?;
                    match stats(&segment_values(series, &segs)) {
                        Ok(t) => Some(BaselineDelta::between(base, &t)),
                        Err(e) => {
                            warnings.push(format!("{task}: {label} ({id}): {e}"));
                            None
                        }
                    }
                })
                .collect();
            ReportRow {
                task: task.to_string(),
                deltas,
            }
        })
        .collect();
    Ok(StatsReport {
        features: config.features.iter().map(|(l, _)| l.clone()).collect(),
        rows,
        warnings,
    })
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl<T: Float> StatsReport<T> {
    /// Number of filled cells (three per task and present feature).
    pub fn cell_count(&self) -> usize {
        self.rows.iter().flat_map(|r| &r.deltas).filter(|d| d.is_some()).count() * 3
    }

    fn cell(d: &Option<BaselineDelta<T>>, stat: usize) -> Option<f64> {
        d.as_ref().map(|d| {
            let v = [d.d_mean, d.d_sd, d.d_median][stat];
            v.to_f64().unwrap_or(f64::NAN)
        })
    }

    /// CSV with columns `task,statistic,<features...>`; missing cells are
    /// empty. Values use the shortest exact decimal form.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("task,statistic");
        for f in &self.features {
            out.push(',');
            out.push_str(&csv_field(f));
        }
        out.push('\n');
        for row in &self.rows {
            for (k, stat) in STATISTICS.iter().enumerate() {
                out.push_str(&csv_field(&row.task));
                out.push(',');
                out.push_str(stat);
                for d in &row.deltas {
                    out.push(',');
                    if let Some(v) = Self::cell(d, k) {
                        out.push_str(&v.to_string());
                    }
                }
                out.push('\n');
            }
        }
        out
    }

    /// Aligned plain-text table with four decimals.
    pub fn to_text(&self) -> String {
        let task_w = self.rows.iter().map(|r| r.task.len()).max().unwrap_or(0).max(4);
        let col_w = 10;
        let mut out = format!("{:<task_w$}  {:<9}", "Task", "Statistic");
        for f in &self.features {
            out.push_str(&format!(" {f:>col_w$}"));
        }
        out.push('\n');
        for row in &self.rows {
            for (k, stat) in STATISTICS.iter().enumerate() {
                let task = if k == 0 { row.task.as_str() } else { "" };
                out.push_str(&format!("{task:<task_w$}  {stat:<9}"));
                for d in &row.deltas {
                    match Self::cell(d, k) {
                        Some(v) => out.push_str(&format!(" {v:>col_w$.4}")),
                        None => out.push_str(&format!(" {:>col_w$}", "")),
                    }
                }
                out.push('\n');
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Payload;

    fn marker(t: u64, name: &str) -> StampedMessage {
        StampedMessage::new(
            StreamId::new("markers/segment").unwrap(),
            Timestamp::new(t, 0).unwrap(),
            t,
            Payload::text(name),
        )
    }

    fn sample(topic: &str, t_ms: u64, v: f64) -> StampedMessage {
        StampedMessage::new(
            StreamId::new(topic).unwrap(),
            Timestamp::from_total_nanos(t_ms as u128 * 1_000_000),
            t_ms,
            Payload::scalar(v),
        )
    }

    /// Every feature stream repeats the same values in every segment.
    fn session(tasks: &[&str]) -> Vec<StampedMessage> {
        let mut out = vec![marker(0, "baseline")];
        for (i, t) in tasks.iter().enumerate() {
            out.push(marker(10 * (i as u64 + 1), t));
        }
        for topic in ["human/ibi", "human/ppg", "human/gsr", "human/ecg"] {
            for k in 0..(10 * (tasks.len() as u64 + 1)) {
                out.push(sample(topic, k * 1000, (k % 10) as f64));
            }
        }
        out.sort_by(StampedMessage::replay_order);
        out
    }

    #[test]
    fn segments_from_markers() {
        let msgs = vec![
            marker(0, "baseline"),
            marker(5, ""),
            marker(7, "a"),
            sample("x/y", 9000, 1.0),
        ];
        let s = segments(&msgs, &StreamId::new("markers/segment").unwrap());
        let names: Vec<_> = s
            .iter()
            .map(|s| (s.name.as_str(), s.start.secs(), s.end.total_nanos()))
            .collect();
        assert_eq!(names, vec![("baseline", 0, 5_000_000_000), ("a", 7, 9_000_000_001)]);
    }

    #[test]
    fn identical_segments_give_zero_table() {
        let tasks = ["Dual 1-back", "Dual 2-back", "Dual 3-back"];
        let r: StatsReport = stats_report(&session(&tasks), &ReportConfig::default()).unwrap();
        assert!(r.warnings.is_empty());
        assert_eq!(r.cell_count(), 3 * 4 * 3);
        for row in &r.rows {
            for d in &row.deltas {
                let d = d.unwrap();
                assert_eq!((d.d_mean, d.d_sd, d.d_median), (0.0, 0.0, 0.0));
            }
        }
    }

    #[test]
    fn table_layout() {
        let tasks = ["Dual 1-back", "Dual 2-back", "Dual 3-back"];
        let r: StatsReport = stats_report(&session(&tasks), &ReportConfig::default()).unwrap();
        let csv = r.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "task,statistic,IBI,PPG,GSR,ECG");
        assert_eq!(lines.len(), 1 + 9);
        assert_eq!(lines[1], "Dual 1-back,Average,0,0,0,0");
        assert!(lines[2].starts_with("Dual 1-back,S.D.,"));
        assert!(lines[3].starts_with("Dual 1-back,Median,"));
        assert!(lines[9].starts_with("Dual 3-back,Median,"));
        let text = r.to_text();
        let header: Vec<&str> = text.lines().next().unwrap().split_whitespace().collect();
        assert_eq!(header, vec!["Task", "Statistic", "IBI", "PPG", "GSR", "ECG"]);
        assert!(text.contains("Dual 2-back  Average"));
        assert!(text.contains("0.0000"));
    }

    #[test]
    fn missing_baseline_and_stream() {
        let msgs = vec![marker(0, "a"), sample("human/ibi", 1000, 1.0)];
        assert_eq!(
            stats_report::<f64>(&msgs, &ReportConfig::default()),
            Err(FeatureError::MissingBaseline("baseline".into()))
        );
        let mut msgs = session(&["t"]);
        msgs.retain(|m| m.stream.as_str() != "human/gsr");
        let r: StatsReport = stats_report(&msgs, &ReportConfig::default()).unwrap();
        assert_eq!(r.rows[0].deltas[2], None);
        assert_eq!(r.cell_count(), 9);
        assert_eq!(r.warnings.len(), 1);
        assert!(r.to_csv().lines().nth(1).unwrap().ends_with(",0,0,,0"));
    }

    #[test]
    fn quoting() {
        assert_eq!(csv_field("a,b"), "\"a,b\"");
        assert_eq!(csv_field("plain"), "plain");
    }
}
