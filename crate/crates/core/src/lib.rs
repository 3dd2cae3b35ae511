//! Residual risk-aware training of physics-informed neural networks.
//!
//! The crate combines CVaR tail penalties on PDE residual magnitudes with an
//! adaptive tail threshold and optional loss balancing, and ships the five
//! benchmark problems together with independent reference solutions.

pub mod autodiff;
pub mod balancer;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod pde;
pub mod real;
pub mod tail_risk;
pub mod threshold;
pub mod trainer;

pub use error::{Error, Result};
pub use real::{Precision, Real};
