//! Lower and upper bounds on the value of a dividend, capital injection
//! and reinsurance problem for a Cramer-Lundberg reserve.
//!
//! Lower bounds come from Monte Carlo simulation of barrier strategies
//! ([`sim`]). Upper bounds come from polynomial functions certified
//! against the HJB system, either on a grid ([`generator`]) or with sums
//! of squares ([`conic`]). [`ddp`] alternates the two.

pub mod conic;
pub mod config;
pub mod ddp;
pub mod error;
pub mod generator;
pub mod model;
pub mod moments;
pub mod occupation;
pub mod poly;
pub mod sim;

pub use config::RunConfig;
pub use ddp::{run_ddp, DdpConfig, DdpResult};
pub use error::{Error, Result};
pub use generator::PolyValueFn;
pub use model::{ClaimLaw, Penalty, RetentionFamily, RetentionPolicy, RiskModel, SpaceBounds};
pub use occupation::OccupationSystem;
pub use sim::StrategySpec;
