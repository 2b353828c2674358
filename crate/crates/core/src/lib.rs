//! Belief-propagation based multipath SLAM.
//!
//! The crate estimates a mobile agent's trajectory jointly with a map of
//! physical and virtual anchors from range measurements whose origin is
//! unknown. See [`engine::Filter`] for the per-step filter and
//! [`harness`] for the synthetic Monte Carlo experiments.

pub mod da;
pub mod engine;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod metrics;
pub mod models;
pub mod phd;
pub mod resample;
pub mod rng;
pub mod sim;

pub use error::{DaError, FilterError, GeometryError, HarnessError, ParamError};
pub use geometry::Vec2;
