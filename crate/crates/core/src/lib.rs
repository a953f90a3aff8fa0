//! Numerical laboratory for fractional Brownian motion driven systems.
//!
//! Exact fBm sampling, Young integration, fractional calculus on the
//! Cameron-Martin space, pathwise SDE solvers with first variation,
//! Malliavin matrices, Norris-type statistics, Lie bracket rank analysis
//! and small-time density asymptotics.

pub mod error;
pub mod fbm;
pub mod frac;
pub mod grid;
pub mod holder;
pub mod hormander;
pub mod malliavin;
pub mod norris;
pub mod poly;
pub mod quad;
pub mod rng;
pub mod sde;
pub mod smalltime;
pub mod stats;
pub mod systems;

pub use error::{Error, Result};
pub use fbm::{FbmPath, SamplingMethod};
pub use grid::{HurstParameter, TimeGrid};
