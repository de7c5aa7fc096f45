//! Network planning by integrated relative energy efficiency (IREE).
//!
//! Base stations are placed, and their bandwidth and transmit power sized,
//! so that the spatial capacity field matches a traffic demand field while
//! spending little power.

pub mod analysis;
pub mod baselines;
pub mod config;
pub mod dinkelbach;
pub mod error;
pub mod gradients;
pub mod harness;
pub mod metrics;
pub mod numeric;
pub mod propagation;
pub mod trainer;
pub mod traffic;

pub use error::{Error, Result};
