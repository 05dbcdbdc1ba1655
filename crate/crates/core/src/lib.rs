//! Condition monitoring for human multi-robot teams.
//!
//! Telemetry from physiological sensors, behavioral devices and robots is
//! published as [`model::StampedMessage`]s on a small pub/sub [`bus`],
//! aligned by [`syncfilter`], recorded and replayed through [`bag`], and
//! reduced to condition features by [`features`]. [`sim`] provides
//! deterministic robot-fleet and physiological generators.

pub mod bag;
pub mod bus;
pub mod features;
pub mod model;
pub mod sim;
pub mod syncfilter;

/// Double-precision aliases for the generic feature and model types.
pub type Series = features::Series<f64>;
pub type StatTriple = features::StatTriple<f64>;
pub type BaselineDelta = features::BaselineDelta<f64>;
pub type RssiModel = sim::RssiModel<f64>;
pub type BatteryModel = sim::BatteryModel<f64>;
