//! Simulation lab for pricing and supplying a vehicle-service network whose
//! link-level demand is initially unknown and learned over days.
//!
//! The provider prices each origin-destination link, routes vehicle supply
//! under a per-location flow-balance constraint, observes realized demand,
//! and refines per-link least-squares estimates. Five decision policies run
//! under common random numbers: a no-regret pricing and supply policy that
//! alternates estimate-and-optimize days with decaying-offset exploration
//! days, a clairvoyant benchmark, a myopic re-estimator, a perturbed myopic
//! variant, and random guessing.
//!
//! The single-day optimization is solved in closed form through the effective
//! resistances of a resistor network built from demand slopes and travel
//! times, with an active-set QP fallback when price caps bind.

pub mod demand;
pub mod error;
pub mod estimation;
pub mod linalg;
pub mod network;
pub mod policies;
pub mod pricing;
pub mod report;
pub mod rng;
pub mod scenario;
pub mod simulator;

pub use error::{Error, Result};
