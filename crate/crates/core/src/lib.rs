//! Learn high-probability lower/upper bounds on potential outcomes from
//! confounded observational data.
//!
//! The library fits per-arm bound functions in dual kernel form by solving
//! constrained convex programs (decoupled per arm, or coupled across arms),
//! selects hyperparameters to meet a target false coverage rate, and
//! benchmarks the result against conformal, classical-CI, shift-interval,
//! and quantile-regression baselines on reproducible synthetic experiments.

pub mod baselines;
pub mod bp;
pub mod config;
pub mod datagen;
pub mod error;
pub mod evaluation;
pub mod kernels;
pub mod model_selection;
pub mod propensity;
pub mod qp;

pub use error::{Error, Result};
