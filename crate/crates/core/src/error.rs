use crate::expr::{EvalError, ParseError};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("metric entries ({i},{j}) and ({j},{i}) differ")]
    NonSymmetricMetric { i: usize, j: usize },
    #[error("metric is not positive definite at {point:?}")]
    DegenerateMetric { point: Vec<f64> },
    #[error("point {point:?} lies outside the chart domain")]
    OutsideDomain { point: Vec<f64> },
    #[error("density v is not positive at {point:?} (value {value})")]
    NonPositiveDensity { point: Vec<f64>, value: f64 },
    #[error("m = {m} lies in the excluded set {{-n, 1-n, 2-n}} = {{{}, {}, {}}} for n = {n}", -(*n as f64), 1.0 - *n as f64, 2.0 - *n as f64)]
    ExcludedDimension { m: f64, n: usize },
    #[error("tractor weights differ: {left} vs {right}")]
    WeightMismatch { left: f64, right: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("curve is not closed: endpoints differ by {gap}")]
    OpenCurve { gap: f64 },
    #[error("sampling produced {got} of {wanted} points inside the domain")]
    SamplingExhausted { wanted: usize, got: usize },
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Ambiguous(String),
}

pub type Result<T> = std::result::Result<T, Error>;
