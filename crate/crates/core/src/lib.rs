//! Numerical tractor calculus for smooth metric measure spaces.

pub mod chart;
pub mod error;
pub mod expr;
pub mod geometry;
pub mod holonomy;
pub mod identities;
pub mod jet;
pub mod models;
pub mod sampling;
pub mod smms;
pub mod tensor;
#[cfg(test)]
pub(crate) mod test_support;
pub mod tractor;

pub use chart::Chart;
pub use error::{Error, Result};
pub use expr::Expr;
