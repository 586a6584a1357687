//! Uplink multi-cell simulator for successive interference cancellation
//! with macro-diversity, together with closed-form outage analysis.

pub mod analysis;
pub mod baselines;
pub mod channel;
pub mod controller;
pub mod error;
pub mod io;
pub mod montecarlo;
pub mod rng;
pub mod sic;
pub mod units;

pub use error::{Error, Result};
