//! Simulation library for anonymous, wearable-device contact tracing.
//!
//! Devices estimate distance from received signal strength, swap random IDs
//! when close, and a central registry turns infected flags and uploaded contact
//! lists into at-risk notices. A zoned mobility model drives the devices so
//! isolation policies can be compared over two simulated days.

pub mod config;
pub mod device;
pub mod experiment;
pub mod geometry;
pub mod id;
pub mod mobility;
pub mod radio;
pub mod registry;
pub mod report;
pub(crate) mod rng;
pub mod scenario;
pub mod tracing;

/// Simulation time: minutes since Day-1 00:00.
pub type SimMinute = u32;

pub use device::{ContactRecord, DeviceState};
pub use id::AnonymousId;
pub use mobility::{simulate_day, ContactEvent, LogMode};
pub use radio::{distance_from_rssi, rssi_from_distance, RadioParams};
pub use registry::{AuthorityToken, HealthStatus, Registry};
pub use scenario::Scenario;
pub use tracing::{oracle_propagate, propagate_risk, RiskLabeling, Seed, TemporalContactGraph};
