//! Simulation and analysis of two coupled, periodically driven microbubble
//! contrast agents.

pub mod chaos;
pub mod continuation;
pub mod error;
pub mod integrator;
pub mod io;
pub mod model;

pub use error::{Error, Result};
pub use model::{derive_scales, swap, sync_deviation, Bubble, Deriv, DerivedScales, Model, PhysicalParams, State};
