//! Simulation and verification toolkit for the diluted disordered wetting
//! model: renewal laws, quenched partition functions, the block
//! renormalization of sparse charge environments, the induced flow on charge
//! laws, and numerical checks of the analytic bounds used along the way.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod environment;
pub mod error;
pub mod flow;
pub mod logweight;
pub mod numeric;
pub mod partition;
pub mod renewal;
pub mod renorm;

pub use error::{Error, Result};
pub use logweight::LogWeight;
