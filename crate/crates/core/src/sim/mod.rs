//! Deterministic generators: a 2D robot fleet with signal-strength and
//! battery models, and synthetic physiological streams driven by a stimulus
//! schedule. Every output is a pure function of the configuration and seed.

pub mod config;
pub mod fleet;
mod models;
pub mod physio;

use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::model::{ModelError, SinkError, Timestamp};

pub use config::{ConfigError, PhysioConfig, PhysioProfile, ScenarioConfig};
pub use fleet::{run_fleet_observed, run_fleet_scenario, step_robot, FleetSummary, Obstacle, RobotState, World};
pub use models::{rssi, BatteryModel, RssiModel};
pub use physio::{generate_physio, run_physio, PhysioSession, StimulusEvent, StimulusKind, StimulusSchedule};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid model parameter: {0}")]
    InvalidModel(&'static str),
    #[error(transparent)]
    BadConfig(#[from] ConfigError),
    #[error("invalid stimulus schedule: {0}")]
    InvalidSchedule(String),
    #[error("broker disconnected")]
    BrokerDisconnected,
    #[error(transparent)]
    Sink(SinkError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl From<SinkError> for SimError {
    fn from(e: SinkError) -> Self {
        match e {
            SinkError::Disconnected => SimError::BrokerDisconnected,
            other => SimError::Sink(other),
        }
    }
}

/// Holds publication back so simulated time advances at `speed` times wall
/// time. Without a speed everything goes out as fast as possible.
#[derive(Debug, Clone)]
pub struct Pacer {
    speed: Option<f64>,
    origin: Option<(Instant, Timestamp)>,
}

impl Pacer {
    pub fn new(speed: Option<f64>) -> Self {
        Pacer {
            speed: speed.filter(|s| s.is_finite() && *s > 0.0),
            origin: None,
        }
    }

    pub fn wait_for(&mut self, stamp: Timestamp) {
        let Some(speed) = self.speed else { return };
        let (wall, sim) = *self.origin.get_or_insert((Instant::now(), stamp));
        let ahead = stamp.total_nanos().saturating_sub(sim.total_nanos()) as f64 / speed;
        let due = wall + Duration::from_nanos(ahead as u64);
        let now = Instant::now();
        if due > now {
            thread::sleep(due - now);
        }
    }
}
