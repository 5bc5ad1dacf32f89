//! Simulation and verification of dependent thinnings of spatial point
//! processes: samplers, retention fields, summary statistics, Poisson
//! approximation bounds in total variation and the `d2` metric, and Monte Carlo
//! certification of those bounds.

pub mod bounds;
pub mod distances;
pub mod error;
pub mod experiment;
pub mod par;
pub mod quad;
pub mod rng;
pub mod simulate;
pub mod space;
pub mod stats;
pub mod summaries;
pub mod thinning;

pub use error::{Error, Result};
pub use rng::RngStream;
pub use space::{BoundedMetric, Norm, PointPattern, Window};
pub use stats::Estimate;
