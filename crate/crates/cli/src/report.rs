//! The JSON report: one row per check plus a summary.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub suite: String,
    pub name: String,
    pub max_residual: Option<f64>,
    pub threshold: Option<f64>,
    pub pass: bool,
    pub worst_point: Option<Vec<f64>>,
    /// Seconds spent producing this row.
    pub wall_time: f64,
    pub note: Option<String>,
}

impl Row {
    pub fn check(suite: &str, name: &str, residual: f64, threshold: f64) -> Row {
        Row {
            suite: suite.into(),
            name: name.into(),
            max_residual: Some(residual),
            threshold: Some(threshold),
            pass: residual.is_finite() && residual < threshold,
            worst_point: None,
            wall_time: 0.0,
            note: None,
        }
    }

    pub fn at(mut self, point: &[f64]) -> Row {
        self.worst_point = Some(point.to_vec());
        self
    }

    pub fn note(mut self, note: impl Into<String>) -> Row {
        self.note = Some(note.into());
        self
    }

    pub fn timed(mut self, secs: f64) -> Row {
        self.wall_time = secs;
        self
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HolonomySummary {
    pub base: Vec<f64>,
    pub algebra_dim: usize,
    pub algebra_singular_values: Vec<f64>,
    pub flat: bool,
    pub flat_case: Option<u8>,
    pub sectional_curvature: Option<f64>,
    pub qw_dim: usize,
    pub qw_singular_values: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SingularSummary {
    pub tractor: String,
    pub kind: Option<String>,
    pub norm2: Option<f64>,
    pub zeros: Vec<Vec<f64>>,
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub manifold: String,
    pub dim: usize,
    pub v: String,
    pub m: f64,
    pub mu: f64,
    pub scale: Option<String>,
    pub suites: Vec<String>,
    pub tolerance: f64,
    pub samples: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub tool: String,
    pub version: String,
    pub run: RunInfo,
    pub rows: Vec<Row>,
    pub passed: usize,
    pub failed: usize,
    pub holonomy: Option<HolonomySummary>,
    pub singularity_sets: Vec<SingularSummary>,
    pub wall_time: f64,
}

impl Report {
    pub fn all_pass(&self) -> bool {
        self.failed == 0
    }
}
