//! Online energy trading and ahead-of-time planning for smart-grid powered
//! coordinated-multipoint (CoMP) downlinks with renewable harvesting.
//!
//! The crate contains the system model, a reproducible scenario generator,
//! the per-slot second-order-cone subproblem, the single-timescale trading
//! controller ([`twet`]), the two-timescale planner ([`mtep`]), the heuristic
//! and clairvoyant baselines, and an experiment harness.

pub mod baselines;
pub mod conic;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod mtep;
pub mod par;
pub mod scenario;
pub mod twet;
