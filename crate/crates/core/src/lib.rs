//! Neural-CDE Hawkes process.
//!
//! Events are embedded, joined into a piecewise-linear control path, and
//! read by a neural controlled differential equation. The same RK4 solve
//! integrates the model intensity, so the non-event term of the
//! log-likelihood comes out of the ODE rather than from sampling.

pub mod autodiff;
pub mod cde;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod embedding;
pub mod error;
pub mod hawkes;
pub mod heads;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod path;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
