//! Scenario configuration file (JSON). Every key is optional and falls back
//! to the default scenario. Range checks run while parsing, so errors carry
//! the line and column of the offending value.
//!
//! ```json
//! {
//!   "seed": 7,
//!   "duration_s": 600,
//!   "start_time": "1700000000.000000000",
//!   "dt_s": 0.1,
//!   "publish_rate_hz": 1,
//!   "workspace": { "width": 10, "height": 10 },
//!   "router": { "pos": [0.5, 0.5] },
//!   "robots": [{ "id": "robot1", "pos": [9.2, 9.4], "heading": null, "speed": 0.25,
//!                "battery_pct": 100, "cpu_load": 0.2, "avoid_radius": 0.5, "heading_noise": 0.1,
//!                "avoid_cone_deg": 15 }],
//!   "obstacles": [{ "pos": [5, 2], "velocity": [0.15, 0.1], "radius": 0.4 }],
//!   "rssi": { "p0_dbm": -30, "n_exponent": 2.2, "d0": 1, "noise_sd_db": 1.5 },
//!   "battery": { "alpha": 0.005, "beta": 0.02 },
//!   "cpu_events": [{ "robot": "robot4", "start_s": 250, "end_s": 420, "cpu_load": 0.9 }],
//!   "physio": { "duration_s": 240, "profile": { ... },
//!               "schedule": [{ "at_s": 60, "kind": "workload_level", "level": 1, "duration_s": 60 }] }
//! }
//! ```

use std::fmt;
use std::marker::PhantomData;
use std::path::Path;

use serde::de::value::MapAccessDeserializer;
use serde::de::{Error as _, MapAccess, Visitor};
use serde::{Deserialize, Deserializer};

use crate::model::Timestamp;

use super::models::{BatteryModel, RssiModel};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    /// 1-based; 0 when the problem is not tied to one place in the file.
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line > 0 {
            write!(f, "line {}, column {}: {}", self.line, self.column, self.message)
        } else {
            f.write_str(&self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

impl ConfigError {
    fn global(message: impl Into<String>) -> Self {
        ConfigError {
            line: 0,
            column: 0,
            message: message.into(),
        }
    }
}

impl From<serde_json::Error> for ConfigError {
    fn from(e: serde_json::Error) -> Self {
        let text = e.to_string();
        let message = match text.rsplit_once(" at line ") {
            Some((m, _)) if e.line() > 0 => m.to_string(),
            _ => text,
        };
        ConfigError {
            line: e.line(),
            column: e.column(),
            message,
        }
    }
}

// Checks run inside visitors so the parser attaches the value's position.

struct RangeVisitor<F> {
    ok: F,
    what: &'static str,
}

impl<F: Fn(f64) -> bool> RangeVisitor<F> {
    fn check<E: serde::de::Error>(self, v: f64) -> Result<f64, E> {
        if v.is_finite() && (self.ok)(v) {
            Ok(v)
        } else {
            Err(E::custom(format!("{v} is out of range: must be {}", self.what)))
        }
    }
}

impl<F: Fn(f64) -> bool> Visitor<'_> for RangeVisitor<F> {
    type Value = f64;

    fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "a number that is {}", self.what)
    }

    fn visit_f64<E: serde::de::Error>(self, v: f64) -> Result<f64, E> {
        self.check(v)
    }

    fn visit_i64<E: serde::de::Error>(self, v: i64) -> Result<f64, E> {
        self.check(v as f64)
    }

    fn visit_u64<E: serde::de::Error>(self, v: u64) -> Result<f64, E> {
        self.check(v as f64)
    }
}

fn checked<'de, D: Deserializer<'de>>(d: D, ok: impl Fn(f64) -> bool, what: &'static str) -> Result<f64, D::Error> {
    d.deserialize_f64(RangeVisitor { ok, what })
}

/// Deserializes `Raw` from a map and converts it, failing inside the map
/// visitor.
struct Converting<Raw, T>(PhantomData<(Raw, T)>);

impl<'de, Raw: Deserialize<'de>, T: TryFrom<Raw, Error = String>> Visitor<'de> for Converting<Raw, T> {
    type Value = T;

    fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("an object")
    }

    fn visit_map<A: MapAccess<'de>>(self, map: A) -> Result<T, A::Error> {
        let raw = Raw::deserialize(MapAccessDeserializer::new(map))?;
        T::try_from(raw).map_err(A::Error::custom)
    }
}

fn converted<'de, D: Deserializer<'de>, Raw: Deserialize<'de>, T: TryFrom<Raw, Error = String>>(
    d: D,
) -> Result<T, D::Error> {
    d.deserialize_map(Converting::<Raw, T>(PhantomData))
}

fn positive<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    checked(d, |v| v > 0.0, "positive")
}

fn non_negative<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    checked(d, |v| v >= 0.0, "non-negative")
}

fn finite<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    checked(d, |_| true, "finite")
}

fn fraction<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    checked(d, |v| (0.0..=1.0).contains(&v), "between 0 and 1")
}

fn percent<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    checked(d, |v| (0.0..=100.0).contains(&v), "between 0 and 100")
}

struct StampVisitor;

impl Visitor<'_> for StampVisitor {
    type Value = Timestamp;

    fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("a timestamp such as \"1700000000.000000000\"")
    }

    fn visit_str<E: serde::de::Error>(self, v: &str) -> Result<Timestamp, E> {
        v.parse().map_err(E::custom)
    }
}

fn cone<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    checked(d, |v| (0.0..90.0).contains(&v), "at least 0 and below 90")
}

fn timestamp<'de, D: Deserializer<'de>>(d: D) -> Result<Timestamp, D::Error> {
    d.deserialize_str(StampVisitor)
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkspaceConfig {
    #[serde(deserialize_with = "positive")]
    pub width: f64,
    #[serde(deserialize_with = "positive")]
    pub height: f64,
}

impl Default for WorkspaceConfig {
    fn default() -> Self {
        WorkspaceConfig {
            width: 10.0,
            height: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RouterConfig {
    pub pos: [f64; 2],
}

impl Default for RouterConfig {
    fn default() -> Self {
        RouterConfig { pos: [0.5, 0.5] }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobotConfig {
    /// Defaults to `robot<k>` with k counting from 1.
    pub id: Option<String>,
    pub pos: [f64; 2],
    /// Radians; drawn at random when absent.
    pub heading: Option<f64>,
    #[serde(deserialize_with = "non_negative")]
    pub speed: f64,
    #[serde(deserialize_with = "percent")]
    pub battery_pct: f64,
    #[serde(deserialize_with = "fraction")]
    pub cpu_load: f64,
    #[serde(deserialize_with = "positive")]
    pub avoid_radius: f64,
    /// Heading random-walk intensity in rad per square-root second.
    #[serde(deserialize_with = "non_negative")]
    pub heading_noise: f64,
    /// Half-angle of the forward avoidance sector in degrees.
    #[serde(deserialize_with = "cone")]
    pub avoid_cone_deg: f64,
}

impl Default for RobotConfig {
    fn default() -> Self {
        RobotConfig {
            id: None,
            pos: [9.0, 9.0],
            heading: None,
            speed: 0.25,
            battery_pct: 100.0,
            cpu_load: 0.2,
            avoid_radius: 0.5,
            heading_noise: 0.1,
            avoid_cone_deg: 15.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleConfig {
    pub pos: [f64; 2],
    #[serde(default)]
    pub velocity: [f64; 2],
    #[serde(deserialize_with = "positive")]
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RssiConfig {
    #[serde(deserialize_with = "finite")]
    pub p0_dbm: f64,
    #[serde(deserialize_with = "positive")]
    pub n_exponent: f64,
    #[serde(deserialize_with = "positive")]
    pub d0: f64,
    #[serde(deserialize_with = "non_negative")]
    pub noise_sd_db: f64,
}

impl Default for RssiConfig {
    fn default() -> Self {
        let m = RssiModel::<f64>::default();
        RssiConfig {
            p0_dbm: m.p0_dbm,
            n_exponent: m.n_exponent,
            d0: m.d0,
            noise_sd_db: m.noise_sd_db,
        }
    }
}

impl RssiConfig {
    pub fn model(&self) -> RssiModel {
        RssiModel::new(self.p0_dbm, self.n_exponent, self.d0, self.noise_sd_db).expect("ranges checked while parsing")
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BatteryConfig {
    #[serde(deserialize_with = "non_negative")]
    pub alpha: f64,
    #[serde(deserialize_with = "non_negative")]
    pub beta: f64,
}

impl Default for BatteryConfig {
    fn default() -> Self {
        let m = BatteryModel::<f64>::default();
        BatteryConfig {
            alpha: m.alpha,
            beta: m.beta,
        }
    }
}

impl BatteryConfig {
    pub fn model(&self) -> BatteryModel {
        BatteryModel::new(self.alpha, self.beta).expect("ranges checked while parsing")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CpuEvent {
    pub robot: String,
    pub start_s: f64,
    pub end_s: f64,
    pub cpu_load: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCpuEvent {
    robot: String,
    #[serde(deserialize_with = "non_negative")]
    start_s: f64,
    #[serde(deserialize_with = "non_negative")]
    end_s: f64,
    #[serde(deserialize_with = "fraction")]
    cpu_load: f64,
}

impl<'de> Deserialize<'de> for CpuEvent {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        converted::<D, RawCpuEvent, CpuEvent>(d)
    }
}

impl TryFrom<RawCpuEvent> for CpuEvent {
    type Error = String;
    fn try_from(r: RawCpuEvent) -> Result<Self, String> {
        if r.end_s <= r.start_s {
            return Err(format!(
                "cpu event ends at {} before it starts at {}",
                r.end_s, r.start_s
            ));
        }
        Ok(CpuEvent {
            robot: r.robot,
            start_s: r.start_s,
            end_s: r.end_s,
            cpu_load: r.cpu_load,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysioProfile {
    #[serde(deserialize_with = "positive")]
    pub ibi_mean_s: f64,
    #[serde(deserialize_with = "non_negative")]
    pub ibi_sd_s: f64,
    /// IBI mean shift per workload level (sign configurable).
    #[serde(deserialize_with = "finite")]
    pub ibi_workload_step_s: f64,
    /// IBI drop while an image or audio stimulus is shown.
    #[serde(deserialize_with = "finite")]
    pub ibi_stimulus_dip_s: f64,
    #[serde(deserialize_with = "finite")]
    pub gsr_tonic_us: f64,
    #[serde(deserialize_with = "finite")]
    pub gsr_drift_us_per_s: f64,
    /// GSR tonic drop per workload level (sign configurable).
    #[serde(deserialize_with = "finite")]
    pub gsr_workload_step_us: f64,
    #[serde(deserialize_with = "finite")]
    pub gsr_phasic_amplitude_us: f64,
    #[serde(deserialize_with = "non_negative")]
    pub gsr_latency_s: f64,
    #[serde(deserialize_with = "positive")]
    pub gsr_rise_s: f64,
    #[serde(deserialize_with = "positive")]
    pub gsr_decay_s: f64,
    #[serde(deserialize_with = "non_negative")]
    pub gsr_noise_us: f64,
    #[serde(deserialize_with = "positive")]
    pub gsr_rate_hz: f64,
    #[serde(deserialize_with = "positive")]
    pub ppg_rate_hz: f64,
    #[serde(deserialize_with = "finite")]
    pub ppg_amplitude: f64,
    #[serde(deserialize_with = "non_negative")]
    pub ppg_noise: f64,
    #[serde(deserialize_with = "positive")]
    pub ecg_rate_hz: f64,
    #[serde(deserialize_with = "non_negative")]
    pub ecg_noise_mv: f64,
}

impl Default for PhysioProfile {
    fn default() -> Self {
        PhysioProfile {
            ibi_mean_s: 0.85,
            ibi_sd_s: 0.03,
            ibi_workload_step_s: 0.03,
            ibi_stimulus_dip_s: 0.08,
            gsr_tonic_us: 5.0,
            gsr_drift_us_per_s: 0.001,
            gsr_workload_step_us: 0.3,
            gsr_phasic_amplitude_us: 0.8,
            gsr_latency_s: 1.5,
            gsr_rise_s: 0.25,
            gsr_decay_s: 4.0,
            gsr_noise_us: 0.002,
            gsr_rate_hz: 4.0,
            ppg_rate_hz: 64.0,
            ppg_amplitude: 20.0,
            ppg_noise: 0.3,
            ecg_rate_hz: 130.0,
            ecg_noise_mv: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    ImageOnset,
    AudioOnset,
    WorkloadLevel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleEntry {
    pub at_s: f64,
    pub kind: ScheduleKind,
    /// Only for workload levels.
    pub level: Option<u32>,
    pub duration_s: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScheduleEntry {
    #[serde(deserialize_with = "non_negative")]
    at_s: f64,
    kind: ScheduleKind,
    level: Option<u32>,
    #[serde(deserialize_with = "positive")]
    duration_s: f64,
}

impl<'de> Deserialize<'de> for ScheduleEntry {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        converted::<D, RawScheduleEntry, ScheduleEntry>(d)
    }
}

impl TryFrom<RawScheduleEntry> for ScheduleEntry {
    type Error = String;
    fn try_from(r: RawScheduleEntry) -> Result<Self, String> {
        match (r.kind, r.level) {
            (ScheduleKind::WorkloadLevel, None) => return Err("workload_level entries need a level".into()),
            (ScheduleKind::WorkloadLevel, Some(_)) => {}
            (_, Some(_)) => return Err("only workload_level entries take a level".into()),
            (_, None) => {}
        }
        Ok(ScheduleEntry {
            at_s: r.at_s,
            kind: r.kind,
            level: r.level,
            duration_s: r.duration_s,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysioConfig {
    #[serde(deserialize_with = "non_negative")]
    pub duration_s: f64,
    pub profile: PhysioProfile,
    pub schedule: Vec<ScheduleEntry>,
    pub baseline_label: String,
    /// Segment name for workload level k; `{k}` is replaced by the level.
    pub level_label: String,
}

impl Default for PhysioConfig {
    fn default() -> Self {
        PhysioConfig {
            duration_s: 240.0,
            profile: PhysioProfile::default(),
            schedule: (1..=3)
                .map(|k| ScheduleEntry {
                    at_s: 60.0 * k as f64,
                    kind: ScheduleKind::WorkloadLevel,
                    level: Some(k),
                    duration_s: 60.0,
                })
                .collect(),
            baseline_label: "baseline".into(),
            level_label: "Dual {k}-back".into(),
        }
    }
}

impl PhysioConfig {
    pub fn level_name(&self, k: u32) -> String {
        self.level_label.replace("{k}", &k.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub seed: u64,
    #[serde(deserialize_with = "non_negative")]
    pub duration_s: f64,
    #[serde(deserialize_with = "timestamp")]
    pub start_time: Timestamp,
    #[serde(deserialize_with = "positive")]
    pub dt_s: f64,
    #[serde(deserialize_with = "positive")]
    pub publish_rate_hz: f64,
    pub workspace: WorkspaceConfig,
    pub router: RouterConfig,
    pub robots: Vec<RobotConfig>,
    pub obstacles: Vec<ObstacleConfig>,
    pub rssi: RssiConfig,
    pub battery: BatteryConfig,
    pub cpu_events: Vec<CpuEvent>,
    pub physio: PhysioConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let robot = |x: f64, y: f64| RobotConfig {
            pos: [x, y],
            ..RobotConfig::default()
        };
        let obstacle = |x: f64, y: f64, vx: f64, vy: f64, r: f64| ObstacleConfig {
            pos: [x, y],
            velocity: [vx, vy],
            radius: r,
        };
        ScenarioConfig {
            seed: 7,
            duration_s: 600.0,
            start_time: Timestamp::new(1_700_000_000, 0).expect("valid"),
            dt_s: 0.1,
            publish_rate_hz: 1.0,
            workspace: WorkspaceConfig::default(),
            router: RouterConfig::default(),
            robots: vec![
                robot(9.4, 9.4),
                robot(8.8, 9.4),
                robot(9.4, 8.8),
                robot(8.8, 8.8),
                robot(8.2, 9.4),
            ],
            obstacles: vec![
                obstacle(5.0, 2.0, 0.15, 0.1, 0.4),
                obstacle(2.0, 6.0, -0.1, 0.15, 0.5),
                obstacle(6.0, 6.0, 0.1, -0.12, 0.35),
            ],
            rssi: RssiConfig::default(),
            battery: BatteryConfig::default(),
            cpu_events: vec![CpuEvent {
                robot: "robot4".into(),
                start_s: 250.0,
                end_s: 420.0,
                cpu_load: 0.9,
            }],
            physio: PhysioConfig::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<ScenarioConfig, ConfigError> {
        let cfg: ScenarioConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ScenarioConfig, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::global(format!("cannot read {}: {e}", path.display())))?;
        ScenarioConfig::from_json(&text)
    }

    pub fn robot_id(&self, index: usize) -> String {
        self.robots[index]
            .id
            .clone()
            .unwrap_or_else(|| format!("robot{}", index + 1))
    }

    /// Checks that need more than one value at a time.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let (w, h) = (self.workspace.width, self.workspace.height);
        let inside = |p: [f64; 2]| (0.0..=w).contains(&p[0]) && (0.0..=h).contains(&p[1]);
        if !inside(self.router.pos) {
            return Err(ConfigError::global("router.pos lies outside the workspace"));
        }
        let mut ids = Vec::new();
        for (i, r) in self.robots.iter().enumerate() {
            if !inside(r.pos) {
                return Err(ConfigError::global(format!(
                    "robots[{i}].pos lies outside the workspace"
                )));
            }
            let id = self.robot_id(i);
            if crate::model::StreamId::new(format!("{id}/battery")).is_err() || id.contains('/') {
                return Err(ConfigError::global(format!(
                    "robots[{i}].id {id:?} is not a valid topic segment"
                )));
            }
            if ids.contains(&id) {
                return Err(ConfigError::global(format!("robots[{i}].id {id:?} is used twice")));
            }
            ids.push(id);
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            if !inside(o.pos) {
                return Err(ConfigError::global(format!(
                    "obstacles[{i}].pos lies outside the workspace"
                )));
            }
            for (j, r) in self.robots.iter().enumerate() {
                if (o.pos[0] - r.pos[0]).hypot(o.pos[1] - r.pos[1]) <= o.radius {
                    return Err(ConfigError::global(format!("robots[{j}] starts inside obstacles[{i}]")));
                }
            }
        }
        for (i, e) in self.cpu_events.iter().enumerate() {
            if !ids.contains(&e.robot) {
                return Err(ConfigError::global(format!(
                    "cpu_events[{i}].robot {:?} names no robot",
                    e.robot
                )));
            }
        }
        let steps = 1.0 / self.publish_rate_hz / self.dt_s;
        if steps < 1.0 - 1e-9 || (steps - steps.round()).abs() > 1e-6 {
            return Err(ConfigError::global("publish period must be a whole multiple of dt_s"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_the_default_scenario() {
        assert_eq!(ScenarioConfig::from_json("{}").unwrap(), ScenarioConfig::default());
        let d = ScenarioConfig::default();
        assert_eq!(d.robots.len(), 5);
        assert_eq!(d.obstacles.len(), 3);
        assert_eq!(d.robot_id(3), "robot4");
    }

    #[test]
    fn range_errors_point_at_the_value() {
        let text = "{\n  \"seed\": 1,\n  \"rssi\": {\n    \"d0\": -2\n  }\n}";
        let e = ScenarioConfig::from_json(text).unwrap_err();
        assert_eq!(e.line, 4, "{e}");
        assert!(e.message.contains("must be positive"), "{e}");
    }

    #[test]
    fn unknown_keys_and_syntax_errors_have_lines() {
        let e = ScenarioConfig::from_json("{\n\"seed\": 1,\n\"sede\": 2\n}").unwrap_err();
        assert_eq!(e.line, 3);
        assert!(e.message.contains("sede"));
        let e = ScenarioConfig::from_json("{\n\"seed\": 1,\n\n\"duration_s\": }").unwrap_err();
        assert_eq!(e.line, 4);
    }

    #[test]
    fn entry_level_checks() {
        let e = ScenarioConfig::from_json(
            "{\"cpu_events\": [\n{\"robot\": \"robot1\", \"start_s\": 5, \"end_s\": 1, \"cpu_load\": 0.5}\n]}",
        )
        .unwrap_err();
        assert_eq!(e.line, 2, "{e}");
        let e = ScenarioConfig::from_json(
            "{\"physio\": {\"schedule\": [\n{\"at_s\": 1, \"kind\": \"image_onset\", \"level\": 2, \"duration_s\": 1}]}}",
        )
        .unwrap_err();
        assert_eq!(e.line, 2, "{e}");
    }

    #[test]
    fn cross_checks() {
        let e = ScenarioConfig::from_json("{\"router\": {\"pos\": [20, 1]}}").unwrap_err();
        assert!(e.message.contains("router"));
        let e = ScenarioConfig::from_json(
            "{\"cpu_events\": [{\"robot\": \"robot9\", \"start_s\": 0, \"end_s\": 1, \"cpu_load\": 0.5}]}",
        )
        .unwrap_err();
        assert!(e.message.contains("robot9"));
        let e = ScenarioConfig::from_json("{\"dt_s\": 0.3}").unwrap_err();
        assert!(e.message.contains("multiple"));
        assert!(ScenarioConfig::from_json("{\"start_time\": \"12.x\"}").is_err());
        assert_eq!(
            ScenarioConfig::from_json("{\"start_time\": \"12.000000005\"}")
                .unwrap()
                .start_time,
            Timestamp::new(12, 5).unwrap()
        );
    }
}
