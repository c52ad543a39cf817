//! Set-oriented optimal transport of probability mass over control-affine
//! dynamical systems.

pub mod cli;
pub mod config;
pub mod error;
pub mod feedback;
pub mod fields;
pub mod generator;
pub mod geometry;
pub mod graph;
pub mod oracle;
pub mod quadrature;
pub mod transport;

pub use error::{Error, Result};
