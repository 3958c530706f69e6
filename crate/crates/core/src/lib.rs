//! Claims reserving on run-off triangles with generalized estimating
//! equations: correlated quasi-likelihood fits, model selection criteria,
//! prediction error and Monte Carlo validation.

pub mod correlation;
pub mod error;
pub mod fixtures;
pub mod gee;
pub mod linalg;
pub mod model;
pub mod pipeline;
pub mod prediction;
pub mod report;
pub mod selection;
pub mod simulate;
pub mod triangle;

pub use error::{ReserveError, Result};
