//! Projection-operator machinery and the weak-coupling (λ²t) limit on finite
//! open quantum systems, checked against exact total-system propagation.

pub mod bath;
pub mod error;
pub mod generator;
pub mod harness;
pub mod linalg;
pub mod liouville;
pub mod model;
pub mod projection;
pub mod spectral;

pub use error::{Error, Result};
