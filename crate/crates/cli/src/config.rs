//! Run configuration: a TOML document naming a manifold, an SMMS and suites.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use tractorlab::chart::coord_names;
use tractorlab::models::{make_gaussian_scales, make_sphere_with, ModelBundle};
use tractorlab::sampling::SampleSpec;
use tractorlab::smms::{is_excluded, SmmsData};
use tractorlab::Chart;

use crate::registry::SUITES;
use crate::CliError;

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub manifold: ManifoldSpec,
    #[serde(default)]
    pub smms: Option<SmmsSpec>,
    pub suites: Vec<String>,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub report_path: Option<PathBuf>,
    /// Densities for the equivalence suite; defaults to the model's scales.
    #[serde(default)]
    pub scales: Vec<String>,
    /// Model tractor names for the singular-set suite.
    #[serde(default)]
    pub tractors: Vec<String>,
    /// RK4 steps per transported curve.
    #[serde(default = "default_steps")]
    pub transport_steps: usize,
}

fn default_tolerance() -> f64 {
    1e-8
}

fn default_samples() -> usize {
    50
}

fn default_steps() -> usize {
    2000
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(untagged)]
pub enum ManifoldSpec {
    Model(String),
    Inline(InlineChart),
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct InlineChart {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub coords: Option<Vec<String>>,
    #[serde(default)]
    pub metric: Option<Vec<Vec<String>>>,
    /// `g = factor · δ`; alternative to `metric`.
    #[serde(default)]
    pub conformal_factor: Option<String>,
    pub domain: String,
    pub bounds: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SmmsSpec {
    #[serde(default = "default_v")]
    pub v: String,
    pub m: f64,
    pub mu: f64,
    #[serde(default)]
    pub scale: Option<String>,
}

fn default_v() -> String {
    "1".into()
}

/// Named models addressable from a config.
pub const MODELS: [&str; 5] = ["sphere3", "sphere4", "euclidean3", "gaussian3", "warped32"];

/// A validated configuration ready to run.
pub struct Setup {
    pub config: RunConfig,
    pub label: String,
    pub smms: SmmsData,
    pub model: Option<ModelBundle>,
    pub spec: SampleSpec,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn setup(self) -> Result<Setup, CliError> {
        let cfg = |e: tractorlab::Error| CliError::Config(e.to_string());
        if self.suites.is_empty() {
            return Err(CliError::Config("suites must not be empty".into()));
        }
        if let Some(s) = self.suites.iter().find(|s| !SUITES.iter().any(|(k, _)| k == s)) {
            let known: Vec<&str> = SUITES.iter().map(|(k, _)| *k).collect();
            return Err(CliError::Config(format!("unknown suite '{s}'; known: {}", known.join(", "))));
        }
        if self.samples == 0 {
            return Err(CliError::Config("samples must be at least 1".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(CliError::Config(format!("tolerance must be positive, got {}", self.tolerance)));
        }
        if self.transport_steps == 0 {
            return Err(CliError::Config("transport_steps must be at least 1".into()));
        }
        let (label, chart, model) = match &self.manifold {
            ManifoldSpec::Model(name) => {
                let model = model_bundle(name, self.smms.as_ref()).map_err(|e| match e {
                    CliError::Runtime(e) => cfg(e),
                    other => other,
                })?;
                (name.clone(), model.smms.chart.clone(), Some(model))
            }
            ManifoldSpec::Inline(c) => {
                let chart = inline_chart(c).map_err(cfg)?;
                (chart.name().to_string(), Arc::new(chart), None)
            }
        };
        if chart.dim() < 3 {
            return Err(CliError::Config(format!("charts need dimension at least 3, got {}", chart.dim())));
        }
        if let Some(s) = &self.smms {
            if is_excluded(s.m, chart.dim()) {
                return Err(cfg(tractorlab::Error::ExcludedDimension { m: s.m, n: chart.dim() }));
            }
        }
        let smms = match (&self.smms, &model) {
            (_, Some(m)) => m.smms.clone(),
            (Some(s), None) => SmmsData::new(chart.clone(), &s.v, s.m, s.mu).map_err(cfg)?,
            (None, None) => return Err(CliError::Config("an inline manifold needs an [smms] table".into())),
        };
        let smms = match self.smms.as_ref().and_then(|s| s.scale.as_deref()) {
            Some(sc) => smms.with_scale(sc).map_err(cfg)?,
            None => smms,
        };
        let spec = SampleSpec::new(self.samples, self.seed);
        smms.validate(spec).map_err(cfg)?;
        for s in &self.scales {
            chart.parse(s).map_err(cfg)?;
        }
        if let Some(t) = self.tractors.iter().find(|t| model.as_ref().and_then(|m| m.tractor(t)).is_none()) {
            return Err(CliError::Config(format!("unknown tractor '{t}' for manifold '{label}'")));
        }
        Ok(Setup { config: self, label, smms, model, spec })
    }
}

fn model_bundle(name: &str, smms: Option<&SmmsSpec>) -> Result<ModelBundle, CliError> {
    let (v, m, mu) = smms.map_or(("1", 0.0, 0.0), |s| (s.v.as_str(), s.m, s.mu));
    let b = match name {
        "sphere3" => make_sphere_with(3, v, m, mu)?,
        "sphere4" => make_sphere_with(4, v, m, mu)?,
        "warped32" => {
            let mut b = make_sphere_with(3, "1", 2.0, 2.0)?;
            b.name = "warped32".into();
            b
        }
        "gaussian3" => make_gaussian_scales(3, smms.map_or(2.0, |s| s.m))?,
        "euclidean3" => {
            let chart = Arc::new(Chart::euclidean(3, 1.0));
            let (v, m, mu) = smms.map_or(("1", 2.0, 0.0), |s| (s.v.as_str(), s.m, s.mu));
            let smms = SmmsData::new(chart.clone(), v, m, mu)?;
            let mut b = ModelBundle {
                name: "euclidean3".into(),
                smms,
                tractors: Vec::new(),
                scales: Vec::new(),
                expected: Vec::new(),
            };
            b.scales.push(("affine".into(), chart.parse("1 + 0.5*x1")?));
            b
        }
        other => {
            return Err(CliError::Config(format!("unknown model '{other}'; known: {}", MODELS.join(", "))));
        }
    };
    Ok(b)
}

fn inline_chart(c: &InlineChart) -> tractorlab::Result<Chart> {
    let n = c.bounds.len();
    let coords = c.coords.clone().unwrap_or_else(|| coord_names(n));
    let refs: Vec<&str> = coords.iter().map(String::as_str).collect();
    let bounds: Vec<(f64, f64)> = c.bounds.iter().map(|b| (b[0], b[1])).collect();
    let name = c.name.as_deref().unwrap_or("inline");
    match (&c.metric, &c.conformal_factor) {
        (Some(metric), None) => Chart::new(name, &refs, metric, &c.domain, &bounds),
        (None, Some(f)) => Chart::conformally_flat(name, &refs, f, &c.domain, &bounds),
        _ => Err(tractorlab::Error::Invalid("give exactly one of `metric` and `conformal_factor`".into())),
    }
}

/// The sphere chart for a model name, when it is a sphere.
pub fn sphere_dim(name: &str) -> Option<usize> {
    match name {
        "sphere3" | "warped32" => Some(3),
        "sphere4" => Some(4),
        _ => None,
    }
}
