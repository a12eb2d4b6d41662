//! Parallel transport, holonomy estimation, flatness and parallel sections.
//!
//! Transport solves `Y' = −(Σ γ'^i Ω_i) Y` for the fundamental matrix with
//! classical RK4 on a fixed grid, where `∇_i = ∂_i + Ω_i`. Connection
//! matrices are evaluated once per grid node, in parallel.

use crate::chart::Chart;
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::geometry::Frame;
use crate::jet::{Jet, JetSpace};
use crate::sampling::{rng, sample_points, SampleSpec, DOMAIN_MARGIN};
use crate::smms::SmmsData;
use crate::tensor::kulkarni_nomizu;
use crate::tractor::{
    bracket, change_scale, connection_values, curvature_block, h_at, h_jet, jtilde, w_connection, AdjointValue,
    ConnectionKind, ScaleTag, TractorField, TractorValue,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

const CHAIN_TOL: f64 = 1e-12;

/// One piece of a curve, parameterized by `t ∈ [0, 1]`.
#[derive(Clone, Debug)]
pub enum Segment {
    Line { from: Vec<f64>, to: Vec<f64> },
    /// Coordinate expressions in `t`; `reversed` runs them from 1 to 0.
    Path { coords: Vec<Expr>, reversed: bool },
}

impl Segment {
    pub fn line(from: &[f64], to: &[f64]) -> Segment {
        Segment::Line { from: from.to_vec(), to: to.to_vec() }
    }

    pub fn parametric(coords: &[&str]) -> Result<Segment> {
        let coords = coords.iter().map(|s| Expr::parse(s, &["t"])).collect::<std::result::Result<_, _>>()?;
        Ok(Segment::Path { coords, reversed: false })
    }

    /// Coordinate dimensions at the two ends.
    fn dims(&self) -> (usize, usize) {
        match self {
            Segment::Line { from, to } => (from.len(), to.len()),
            Segment::Path { coords, .. } => (coords.len(), coords.len()),
        }
    }

    /// Position and velocity at `t`.
    pub fn eval(&self, t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        match self {
            Segment::Line { from, to } => {
                let x = from.iter().zip(to).map(|(a, b)| a + t * (b - a)).collect();
                let dx = from.iter().zip(to).map(|(a, b)| b - a).collect();
                Ok((x, dx))
            }
            Segment::Path { coords, reversed } => {
                let (s, sign) = if *reversed { (1.0 - t, -1.0) } else { (t, 1.0) };
                let arg = [Jet::variable(JetSpace::get(1, 1), 0, s)];
                let mut x = Vec::with_capacity(coords.len());
                let mut dx = Vec::with_capacity(coords.len());
                for c in coords {
                    let j = c.eval(&arg, &[s])?;
                    x.push(j.value());
                    dx.push(sign * j.diff(0).value());
                }
                Ok((x, dx))
            }
        }
    }

    pub fn start(&self) -> Result<Vec<f64>> {
        Ok(self.eval(0.0)?.0)
    }

    pub fn end(&self) -> Result<Vec<f64>> {
        Ok(self.eval(1.0)?.0)
    }

    pub fn reversed(&self) -> Segment {
        match self {
            Segment::Line { from, to } => Segment::Line { from: to.clone(), to: from.clone() },
            Segment::Path { coords, reversed } => Segment::Path { coords: coords.clone(), reversed: !reversed },
        }
    }

    /// Euclidean length in coordinates (composite Simpson, 64 panels).
    pub fn coordinate_length(&self) -> Result<f64> {
        if let Segment::Line { from, to } = self {
            return Ok(from.iter().zip(to).map(|(a, b)| (b - a).powi(2)).sum::<f64>().sqrt());
        }
        let k = 64;
        let mut acc = 0.0;
        for i in 0..=k {
            let w = if i == 0 || i == k { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            let (_, dx) = self.eval(i as f64 / k as f64)?;
            acc += w * dx.iter().map(|d| d * d).sum::<f64>().sqrt();
        }
        Ok(acc / (3.0 * k as f64))
    }
}

/// A piecewise smooth curve in chart coordinates.
#[derive(Clone, Debug)]
pub struct CurveSpec {
    pub segments: Vec<Segment>,
    pub closed: bool,
}

impl CurveSpec {
    /// Straight edges through `points`; a closed polyline gets a final edge
    /// back to the first point.
    pub fn polyline(points: &[Vec<f64>], closed: bool) -> CurveSpec {
        let mut segments: Vec<Segment> = points.windows(2).map(|w| Segment::line(&w[0], &w[1])).collect();
        if closed && points.len() > 1 {
            segments.push(Segment::line(&points[points.len() - 1], &points[0]));
        }
        CurveSpec { segments, closed }
    }

    pub fn reversed(&self) -> CurveSpec {
        CurveSpec { segments: self.segments.iter().rev().map(Segment::reversed).collect(), closed: self.closed }
    }

    /// `self` followed by `other`.
    pub fn then(&self, other: &CurveSpec) -> CurveSpec {
        let mut segments = self.segments.clone();
        segments.extend(other.segments.iter().cloned());
        CurveSpec { segments, closed: false }
    }

    pub fn start(&self) -> Result<Vec<f64>> {
        self.segments.first().ok_or_else(|| Error::Invalid("curve has no segments".into()))?.start()
    }

    pub fn end(&self) -> Result<Vec<f64>> {
        self.segments.last().ok_or_else(|| Error::Invalid("curve has no segments".into()))?.end()
    }

    pub fn coordinate_length(&self) -> Result<f64> {
        self.segments.iter().map(Segment::coordinate_length).sum()
    }

    /// Checks dimensions, that segments chain, and closure when flagged.
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.segments.is_empty() {
            return Err(Error::Invalid("curve has no segments".into()));
        }
        for s in &self.segments {
            let (a, b) = s.dims();
            if a != n || b != n {
                return Err(Error::DimensionMismatch { expected: n, got: if a != n { a } else { b } });
            }
        }
        for (k, w) in self.segments.windows(2).enumerate() {
            let gap = dist(&w[0].end()?, &w[1].start()?);
            if gap > CHAIN_TOL {
                return Err(Error::Invalid(format!("segments {k} and {} do not meet (gap {gap:e})", k + 1)));
            }
        }
        if self.closed {
            let gap = dist(&self.start()?, &self.end()?);
            if gap > CHAIN_TOL {
                return Err(Error::OpenCurve { gap });
            }
        }
        Ok(())
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransportOptions {
    /// RK4 steps for the whole curve, shared between segments by length.
    pub steps: usize,
    pub min_steps_per_segment: usize,
    /// Repeat at half the step and extrapolate.
    pub richardson: bool,
}

impl Default for TransportOptions {
    fn default() -> Self {
        TransportOptions { steps: 2000, min_steps_per_segment: 8, richardson: true }
    }
}

impl TransportOptions {
    pub fn with_steps(steps: usize) -> TransportOptions {
        TransportOptions { steps, ..TransportOptions::default() }
    }
}

/// The fundamental matrix of transport along a curve.
#[derive(Clone, Debug)]
pub struct Transport {
    /// Maps a tractor at the start, in the SMMS scale, to its transport at the end.
    pub matrix: DMatrix<f64>,
    /// `max |Y_h − Y_{h/2}| / 15`, or 0 without Richardson.
    pub error_estimate: f64,
    /// `max |Yᵀ h(γ(t)) Y − h(γ(0))|` over the grid.
    pub metric_drift: f64,
    pub steps: usize,
    pub start: Vec<f64>,
    pub end: Vec<f64>,
}

struct Node {
    a: DMatrix<f64>,
    h: DMatrix<f64>,
}

fn node(smms: &SmmsData, kind: ConnectionKind, seg: &Segment, t: f64) -> Result<Node> {
    let (x, dx) = seg.eval(t)?;
    let f = smms.frame(&x, 2)?;
    let om = connection_values(&f, kind)?;
    let nn = f.dim() + 2;
    let mut a = DMatrix::zeros(nn, nn);
    for (o, d) in om.iter().zip(&dx) {
        a += o * *d;
    }
    Ok(Node { a, h: h_at(&f) })
}

/// RK4 over one segment using every `stride`-th node; returns the
/// fundamental matrix and the metric drift relative to `h0`.
fn rk4(nodes: &[Node], stride: usize, y0: &DMatrix<f64>, h0: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let steps = (nodes.len() - 1) / (2 * stride);
    let h = 1.0 / steps as f64;
    let mut y = y0.clone();
    let mut drift = 0.0f64;
    for k in 0..steps {
        let a0 = &nodes[2 * k * stride].a;
        let a1 = &nodes[(2 * k + 1) * stride].a;
        let a2 = &nodes[(2 * k + 2) * stride].a;
        let k1 = -(a0 * &y);
        let k2 = -(a1 * (&y + &k1 * (0.5 * h)));
        let k3 = -(a1 * (&y + &k2 * (0.5 * h)));
        let k4 = -(a2 * (&y + &k3 * h));
        y += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        let hn = &nodes[(2 * k + 2) * stride].h;
        drift = drift.max((y.transpose() * hn * &y - h0).amax());
    }
    (y, drift)
}

/// Transport of the whole fiber along `curve` for the chosen connection.
pub fn transport_matrix(
    smms: &SmmsData,
    kind: ConnectionKind,
    curve: &CurveSpec,
    opts: TransportOptions,
) -> Result<Transport> {
    let n = smms.dim();
    curve.validate(n)?;
    let lengths: Vec<f64> = curve.segments.iter().map(Segment::coordinate_length).collect::<Result<_>>()?;
    let total: f64 = lengths.iter().sum();
    let sub = if opts.richardson { 4 } else { 2 };
    let mut y_full = DMatrix::identity(n + 2, n + 2);
    let mut y_half = y_full.clone();
    let start = curve.start()?;
    let h0 = h_at(&smms.frame(&start, 2)?);
    let mut drift = 0.0f64;
    let mut steps_total = 0;
    for (seg, len) in curve.segments.iter().zip(&lengths) {
        let share = if total > 0.0 { len / total } else { 1.0 / curve.segments.len() as f64 };
        let steps = ((opts.steps as f64 * share).ceil() as usize).max(opts.min_steps_per_segment).max(1);
        steps_total += steps;
        let count = sub * steps + 1;
        let nodes: Vec<Node> = (0..count)
            .into_par_iter()
            .map(|k| node(smms, kind, seg, k as f64 / (count - 1) as f64))
            .collect::<Result<_>>()?;
        if opts.richardson {
            let (yf, _) = rk4(&nodes, 2, &y_full, &h0);
            let (yh, d) = rk4(&nodes, 1, &y_half, &h0);
            y_full = yf;
            y_half = yh;
            drift = drift.max(d);
        } else {
            let (yf, d) = rk4(&nodes, 1, &y_full, &h0);
            y_full = yf;
            drift = drift.max(d);
        }
    }
    let (matrix, error_estimate) = if opts.richardson {
        let diff = &y_half - &y_full;
        (&y_half + &diff / 15.0, diff.amax() / 15.0)
    } else {
        (y_full, 0.0)
    };
    Ok(Transport { matrix, error_estimate, metric_drift: drift, steps: steps_total, start, end: curve.end()? })
}

/// Transports a weight-0 tractor given at the curve's start.
pub fn parallel_transport(
    smms: &SmmsData,
    kind: ConnectionKind,
    curve: &CurveSpec,
    i0: &TractorValue,
    opts: TransportOptions,
) -> Result<TractorValue> {
    if i0.weight != 0.0 {
        return Err(Error::Invalid(format!("transport needs a weight-0 tractor, got weight {}", i0.weight)));
    }
    let start = curve.start()?;
    if dist(&start, &i0.point) > CHAIN_TOL {
        return Err(Error::Invalid(format!("tractor lives at {:?}, curve starts at {start:?}", i0.point)));
    }
    let tag = ScaleTag::from_expr(smms.scale.clone());
    let v = change_scale(&smms.chart, i0, &tag)?.to_vector();
    let t = transport_matrix(smms, kind, curve, opts)?;
    Ok(TractorValue::from_vector(&(&t.matrix * v), 0.0, tag, &t.end))
}

/// The holonomy of an axis-aligned square of side `eps` at `p` in the
/// `(∂_i, ∂_j)` plane, run first along `∂_j`, so that it is
/// `id − ε² R(∂_i, ∂_j) + O(ε³)`.
pub fn plaquette_holonomy(
    smms: &SmmsData,
    kind: ConnectionKind,
    p: &[f64],
    i: usize,
    j: usize,
    eps: f64,
    opts: TransportOptions,
) -> Result<Transport> {
    let corner = |a: f64, b: f64| {
        let mut q = p.to_vec();
        q[i] += a;
        q[j] += b;
        q
    };
    let loop_ = CurveSpec::polyline(&[corner(0.0, 0.0), corner(0.0, eps), corner(eps, eps), corner(eps, 0.0)], true);
    transport_matrix(smms, kind, &loop_, opts)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaquetteReport {
    /// `|K − (−R)| / |R|` for `K = (H(ε) − id)/ε²`.
    pub raw_relative_error: f64,
    /// The same after one Richardson step `2K(ε/2) − K(ε)`.
    pub relative_error: f64,
    pub curvature_norm: f64,
    pub metric_drift: f64,
}

/// Compares plaquette holonomy with the curvature at `p`.
pub fn plaquette_check(
    smms: &SmmsData,
    kind: ConnectionKind,
    p: &[f64],
    i: usize,
    j: usize,
    eps: f64,
    opts: TransportOptions,
) -> Result<PlaquetteReport> {
    let r = curvature_block(&smms.frame(p, 3)?, kind)?[i][j].clone();
    let id = DMatrix::<f64>::identity(r.nrows(), r.ncols());
    let t1 = plaquette_holonomy(smms, kind, p, i, j, eps, opts)?;
    let t2 = plaquette_holonomy(smms, kind, p, i, j, eps / 2.0, opts)?;
    let k1 = (&t1.matrix - &id) / (eps * eps);
    let k2 = (&t2.matrix - &id) / (eps * eps / 4.0);
    let extrapolated = &k2 * 2.0 - &k1;
    let norm = r.norm();
    let rel = |k: &DMatrix<f64>| (k + &r).norm() / norm;
    Ok(PlaquetteReport {
        raw_relative_error: rel(&k1),
        relative_error: rel(&extrapolated),
        curvature_norm: norm,
        metric_drift: t1.metric_drift.max(t2.metric_drift),
    })
}

// ---------------------------------------------------------------------------
// Holonomy algebra

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolonomyOptions {
    pub transport: TransportOptions,
    /// Loops in the path-independence family.
    pub loops: usize,
    /// Loop diameter as a fraction of the chart's length scale.
    pub loop_fraction: f64,
    /// Relative singular-value cutoff for the algebra rank.
    pub rank_tol: f64,
    /// Below this the curvature counts as zero.
    pub abs_floor: f64,
    /// Singular-value cutoff for the parallel-section null space.
    pub null_tol: f64,
}

impl Default for HolonomyOptions {
    fn default() -> Self {
        HolonomyOptions {
            transport: TransportOptions::default(),
            loops: 20,
            loop_fraction: 0.3,
            rank_tol: 1e-6,
            abs_floor: 1e-9,
            null_tol: 1e-6,
        }
    }
}

/// The centre of the chart's box if it is inside the domain, otherwise the
/// first sample point.
pub fn default_base(chart: &Chart, seed: u64) -> Result<Vec<f64>> {
    let c: Vec<f64> = chart.bounds().iter().map(|(a, b)| 0.5 * (a + b)).collect();
    if chart.domain_value(&c).is_ok_and(|d| d > DOMAIN_MARGIN) {
        return Ok(c);
    }
    Ok(sample_points(chart, SampleSpec::new(1, seed))?.remove(0))
}

fn segment_inside(chart: &Chart, a: &[f64], b: &[f64]) -> bool {
    (0..=32).all(|k| {
        let t = k as f64 / 32.0;
        let q: Vec<f64> = a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect();
        chart.domain_value(&q).is_ok_and(|d| d > DOMAIN_MARGIN)
    })
}

/// Singular values in descending order with the matching right singular vectors.
fn sorted_svd(m: &DMatrix<f64>) -> (Vec<f64>, Vec<DVector<f64>>) {
    let svd = m.clone().svd(false, true);
    let vt = svd.v_t.expect("requested V^T");
    let mut pairs: Vec<(f64, DVector<f64>)> =
        svd.singular_values.iter().enumerate().map(|(k, s)| (*s, vt.row(k).transpose())).collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    pairs.into_iter().unzip()
}

#[derive(Clone, Debug)]
pub struct AlgebraEstimate {
    pub base: Vec<f64>,
    pub dim: usize,
    /// A Frobenius-orthonormal basis of the estimated algebra at the base point.
    pub generators: Vec<AdjointValue>,
    pub singular_values: Vec<f64>,
    /// Worst distance of a bracket of basis elements from their span.
    pub closure_residual: f64,
    /// Set when the singular-value gap at the cutoff is under 10×.
    pub ambiguous: bool,
    pub points_used: usize,
    pub points_skipped: usize,
}

/// Spans `P_γ⁻¹ R(∂_i, ∂_j) P_γ` over radial paths `γ` from `base` to sample
/// points and all coordinate pairs.
pub fn holonomy_algebra(
    smms: &SmmsData,
    kind: ConnectionKind,
    base: &[f64],
    spec: SampleSpec,
    opts: &HolonomyOptions,
) -> Result<AlgebraEstimate> {
    let n = smms.dim();
    let nn = n + 2;
    let mut targets = vec![base.to_vec()];
    let mut skipped = 0;
    for q in sample_points(&smms.chart, spec)? {
        if segment_inside(&smms.chart, base, &q) {
            targets.push(q);
        } else {
            skipped += 1;
        }
    }
    let curvatures: Vec<Vec<Vec<DMatrix<f64>>>> = targets
        .par_iter()
        .map(|q| curvature_block(&smms.frame(q, 3)?, kind))
        .collect::<Result<_>>()?;
    let mut rows: Vec<DVector<f64>> = Vec::new();
    for (q, curv) in targets.iter().zip(&curvatures) {
        let size = curv.iter().flatten().fold(0.0f64, |a, m| a.max(m.amax()));
        if size < opts.abs_floor {
            continue;
        }
        let p = if dist(q, base) == 0.0 {
            DMatrix::identity(nn, nn)
        } else {
            transport_matrix(smms, kind, &CurveSpec::polyline(&[base.to_vec(), q.clone()], false), opts.transport)?
                .matrix
        };
        let pinv = p.clone().try_inverse().ok_or_else(|| Error::Invalid("singular transport matrix".into()))?;
        for i in 0..n {
            for j in i + 1..n {
                let g = &pinv * &curv[i][j] * &p;
                rows.push(DVector::from_iterator(nn * nn, g.transpose().iter().copied()));
            }
        }
    }
    let tag = ScaleTag::from_expr(smms.scale.clone());
    if rows.is_empty() {
        return Ok(AlgebraEstimate {
            base: base.to_vec(),
            dim: 0,
            generators: Vec::new(),
            singular_values: Vec::new(),
            closure_residual: 0.0,
            ambiguous: false,
            points_used: targets.len(),
            points_skipped: skipped,
        });
    }
    let m = DMatrix::from_fn(rows.len(), nn * nn, |r, c| rows[r][c]);
    let (s, v) = sorted_svd(&m);
    let dim = if s[0] < opts.abs_floor { 0 } else { s.iter().filter(|x| **x > opts.rank_tol * s[0]).count() };
    let ambiguous = dim > 0 && dim < s.len() && s[dim] > 0.0 && s[dim - 1] / s[dim] < 10.0;
    let basis: Vec<DMatrix<f64>> =
        v.iter().take(dim).map(|b| DMatrix::from_row_slice(nn, nn, b.as_slice())).collect();
    let mut closure = 0.0f64;
    for a in 0..basis.len() {
        for b in a + 1..basis.len() {
            let c = bracket(&basis[a], &basis[b]);
            let mut rest = c.clone();
            for e in &basis {
                rest -= e * c.dot(e);
            }
            closure = closure.max(rest.norm());
        }
    }
    Ok(AlgebraEstimate {
        base: base.to_vec(),
        dim,
        generators: basis
            .into_iter()
            .map(|matrix| AdjointValue { matrix, scale: tag.clone(), point: base.to_vec() })
            .collect(),
        singular_values: s,
        closure_residual: closure,
        ambiguous,
        points_used: targets.len(),
        points_skipped: skipped,
    })
}

// ---------------------------------------------------------------------------
// Parallel sections

/// Seeded triangles `base → p1 → p2 → base` of diameter at most
/// `fraction · length_scale`, with every edge inside the domain.
pub fn loop_family(chart: &Chart, base: &[f64], count: usize, fraction: f64, seed: u64) -> Result<Vec<CurveSpec>> {
    let n = chart.dim();
    let radius = 0.5 * fraction * chart.length_scale();
    let mut r = rng(seed);
    let mut out = Vec::with_capacity(count);
    let mut tries = 0;
    while out.len() < count {
        tries += 1;
        if tries > 100 * count.max(1) {
            return Err(Error::SamplingExhausted { wanted: count, got: out.len() });
        }
        let mut vertex = || {
            let d: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
            let len = d.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            let rad = radius * r.gen_range(0.3..1.0);
            base.iter().zip(&d).map(|(b, x)| b + rad * x / len).collect::<Vec<f64>>()
        };
        let (p1, p2) = (vertex(), vertex());
        if segment_inside(chart, base, &p1) && segment_inside(chart, &p1, &p2) && segment_inside(chart, &p2, base) {
            out.push(CurveSpec::polyline(&[base.to_vec(), p1, p2], true));
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct ParallelSections {
    pub base: Vec<f64>,
    pub dim: usize,
    /// Orthonormal (Euclidean) basis of the fixed vectors at the base point.
    pub basis: Vec<TractorValue>,
    /// Spectrum of the stacked constraint matrix, descending.
    pub singular_values: Vec<f64>,
    pub ambiguous: bool,
    pub loops: usize,
    pub max_transport_error: f64,
}

/// Vectors at `base` fixed by the holonomy of every loop in the family and,
/// when `restrict_to_tw`, orthogonal to `J̃`.
pub fn parallel_sections(
    smms: &SmmsData,
    kind: ConnectionKind,
    restrict_to_tw: bool,
    base: &[f64],
    seed: u64,
    opts: &HolonomyOptions,
) -> Result<ParallelSections> {
    let n = smms.dim();
    let nn = n + 2;
    let loops = loop_family(&smms.chart, base, opts.loops, opts.loop_fraction, seed)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut err = 0.0f64;
    for l in &loops {
        let t = transport_matrix(smms, kind, l, opts.transport)?;
        err = err.max(t.error_estimate);
        let d = t.matrix - DMatrix::identity(nn, nn);
        rows.extend(d.row_iter().map(|r| r.iter().copied().collect()));
    }
    if restrict_to_tw {
        let f = smms.frame(base, 2)?;
        let hj = h_at(&f) * jtilde(&f)?.values();
        let norm = hj.norm();
        rows.push(hj.iter().map(|x| x / norm).collect());
    }
    let m = DMatrix::from_fn(rows.len(), nn, |r, c| rows[r][c]);
    let (s, v) = sorted_svd(&m);
    let dim = s.iter().filter(|x| **x < opts.null_tol).count();
    let ambiguous = s.iter().any(|x| *x >= opts.null_tol / 10.0 && *x < opts.null_tol * 10.0);
    let tag = ScaleTag::from_expr(smms.scale.clone());
    let basis = v[nn - dim..].iter().map(|b| TractorValue::from_vector(b, 0.0, tag.clone(), base)).collect();
    Ok(ParallelSections {
        base: base.to_vec(),
        dim,
        basis,
        singular_values: s,
        ambiguous,
        loops: loops.len(),
        max_transport_error: err,
    })
}

/// `dim Q^W`: W-parallel sections of `T^W`.
pub fn qw_dimension(smms: &SmmsData, base: &[f64], seed: u64, opts: &HolonomyOptions) -> Result<ParallelSections> {
    smms.require_admissible()?;
    parallel_sections(smms, ConnectionKind::W, true, base, seed, opts)
}

// ---------------------------------------------------------------------------
// Flatness

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlatnessVerdict {
    pub flat: bool,
    /// Which case of the classification applies when flat: 1, 2 or 3.
    pub case: Option<u8>,
    /// Normalized `max |R^W|` over the sample.
    pub curvature_max: f64,
    /// Worst defect of the case condition (`W`, `dP` for case 1; constant
    /// curvature of `v⁻²g` otherwise).
    pub case_defect: f64,
    /// Mean sectional curvature of `v⁻²g` in cases 2 and 3.
    pub sectional_curvature: Option<f64>,
    /// `−μ/(m−1)` in case 3.
    pub expected_sectional: Option<f64>,
    pub points_sampled: usize,
}

const FLAT_TOL: f64 = 1e-7;

/// Decides whether `∇^W` is flat on the sample and, if so, which case holds.
pub fn flatness_classify(smms: &SmmsData, spec: SampleSpec) -> Result<FlatnessVerdict> {
    smms.require_admissible()?;
    let points = sample_points(&smms.chart, spec)?;
    let curv: Vec<f64> = points
        .par_iter()
        .map(|p| {
            let c = curvature_block(&smms.frame(p, 3)?, ConnectionKind::W)?;
            Ok(c.iter().flatten().fold(0.0f64, |a, m| a.max(m.amax())))
        })
        .collect::<Result<_>>()?;
    let curvature_max = curv.iter().fold(0.0f64, |a, c| a.max(*c));
    let mut verdict = FlatnessVerdict {
        flat: curvature_max < FLAT_TOL,
        case: None,
        curvature_max,
        case_defect: 0.0,
        sectional_curvature: None,
        expected_sectional: None,
        points_sampled: points.len(),
    };
    if !verdict.flat {
        return Ok(verdict);
    }
    let (m, mu) = (smms.m, smms.mu);
    if m == 0.0 {
        let defect = points
            .par_iter()
            .map(|p| {
                let f = Frame::new(&smms.chart, smms.scale.as_ref(), p, 3)?;
                Ok(f.weyl().values().max_abs().max(f.cotton().values().max_abs()))
            })
            .collect::<Result<Vec<f64>>>()?;
        verdict.case = Some(1);
        verdict.case_defect = defect.into_iter().fold(0.0, f64::max);
        return Ok(verdict);
    }
    let s = smms.chart.parse(&format!("-log({})", smms.v.source()))?;
    let per = points
        .par_iter()
        .map(|p| {
            let f = Frame::new(&smms.chart, Some(&s), p, 2)?;
            let n = f.dim() as f64;
            let kappa = f.scalar_curvature().value() / (n * (n - 1.0));
            let model = kulkarni_nomizu(&f.g, &f.g).scale(&f.constant(0.5 * kappa));
            Ok((kappa, f.riemann().sub(&model).values().max_abs()))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;
    let mean = per.iter().map(|r| r.0).sum::<f64>() / per.len() as f64;
    let spread = per.iter().fold(0.0f64, |a, r| a.max((r.0 - mean).abs()));
    verdict.sectional_curvature = Some(mean);
    verdict.case_defect = per.iter().fold(spread, |a, r| a.max(r.1));
    if m == 1.0 {
        verdict.case = Some(2);
        verdict.case_defect = verdict.case_defect.max(mu.abs());
    } else {
        let expected = -mu / (m - 1.0);
        verdict.case = Some(3);
        verdict.expected_sectional = Some(expected);
        verdict.case_defect = verdict.case_defect.max((mean - expected).abs());
    }
    Ok(verdict)
}

// ---------------------------------------------------------------------------
// Singular sets

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SingularKind {
    /// `|I|² < 0`: no zeros.
    Empty,
    /// `|I|² = 0`: isolated zeros.
    Points,
    /// `|I|² > 0`: a totally umbilic hypersurface.
    Hypersurface,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingularSetReport {
    pub norm2: f64,
    pub kind: SingularKind,
    /// `max |∇^W I|` at the check points.
    pub parallel_residual: f64,
    pub points_sampled: usize,
    /// `min |u|` over the sample.
    pub min_abs_u: f64,
    /// Isolated zeros found (case `Points`).
    pub zeros: Vec<Vec<f64>>,
    /// `max |∇u|` at the zeros.
    pub max_gradient_at_zeros: f64,
    /// `min |Δ_φ u|` at the zeros.
    pub min_laplacian_at_zeros: f64,
    /// Points projected onto `{u = 0}` (case `Hypersurface`).
    pub level_points: usize,
    /// `max ||∇u|² − |I|²|` on the level set.
    pub gradient_defect: f64,
    /// Trace-free part of `∇²u` on the level set's tangent space.
    pub umbilicity_residual: f64,
}

const NORM_ZERO: f64 = 1e-9;
const NORM_AMBIGUOUS: f64 = 1e-6;

struct Local {
    u: f64,
    du: DVector<f64>,
    hess: DMatrix<f64>,
    g: DMatrix<f64>,
    ginv: DMatrix<f64>,
    lap_phi: f64,
}

fn local(smms: &SmmsData, field: &TractorField, p: &[f64], order: usize) -> Result<Local> {
    let f = smms.frame(p, order)?;
    let n = f.dim();
    let sigma = field.eval(&f)?.sigma;
    let du = DVector::from_fn(n, |i, _| sigma.diff(i).value());
    let h = f.geo.hessian(&sigma).values();
    let hess = DMatrix::from_fn(n, n, |i, j| *h.at(&[i, j]));
    let g = DMatrix::from_fn(n, n, |i, j| f.geo.g.data[i * n + j].value());
    let ginv = DMatrix::from_fn(n, n, |i, j| f.geo.ginv.data[i * n + j].value());
    Ok(Local { u: sigma.value(), du, hess, g, ginv, lap_phi: f.weighted_laplacian(&sigma).value() })
}

/// Derivatives of the chart data consumed by evaluating `field`.
fn extra_order(field: &TractorField) -> usize {
    match field {
        TractorField::Components { .. } | TractorField::X => 0,
        TractorField::Combination(terms) => terms.iter().map(|(_, t)| extra_order(t)).max().unwrap_or(0),
        _ => 2,
    }
}

/// Classifies the zero set of `u = ⟨X, I⟩` for a W-parallel tractor `I`.
pub fn singular_set_probe(smms: &SmmsData, field: &TractorField, spec: SampleSpec) -> Result<SingularSetReport> {
    smms.require_admissible()?;
    if field.weight() != 0.0 {
        return Err(Error::Invalid("the singular-set probe needs a weight-0 tractor".into()));
    }
    let order = extra_order(field) + 2;
    let checks = sample_points(&smms.chart, SampleSpec::new(8, spec.seed ^ 0x5eed))?;
    let vals: Vec<(f64, f64)> = checks
        .par_iter()
        .map(|p| {
            let f = smms.frame(p, order.max(3))?;
            let t = field.eval(&f)?;
            let nab = w_connection(&f, &t)?.iter().fold(0.0f64, |a, d| a.max(d.values().amax()));
            Ok((nab, h_jet(&f, &t, &t).value()))
        })
        .collect::<Result<_>>()?;
    let parallel_residual = vals.iter().fold(0.0f64, |a, v| a.max(v.0));
    if parallel_residual > 1e-7 {
        return Err(Error::Invalid(format!("tractor is not W-parallel (residual {parallel_residual:e})")));
    }
    let norm2 = vals.iter().map(|v| v.1).sum::<f64>() / vals.len() as f64;
    if norm2.abs() > NORM_ZERO && norm2.abs() <= NORM_AMBIGUOUS {
        return Err(Error::Ambiguous(format!("sign of |I|² = {norm2:e} is within tolerance")));
    }
    let kind = if norm2.abs() <= NORM_ZERO {
        SingularKind::Points
    } else if norm2 < 0.0 {
        SingularKind::Empty
    } else {
        SingularKind::Hypersurface
    };
    let points = sample_points(&smms.chart, spec)?;
    let us: Vec<f64> = points
        .par_iter()
        .map(|p| Ok(field.eval(&smms.frame(p, order - 2)?)?.sigma.value()))
        .collect::<Result<_>>()?;
    let mut report = SingularSetReport {
        norm2,
        kind,
        parallel_residual,
        points_sampled: points.len(),
        min_abs_u: us.iter().fold(f64::INFINITY, |a, u| a.min(u.abs())),
        zeros: Vec::new(),
        max_gradient_at_zeros: 0.0,
        min_laplacian_at_zeros: f64::INFINITY,
        level_points: 0,
        gradient_defect: 0.0,
        umbilicity_residual: 0.0,
    };
    let mut by_u: Vec<usize> = (0..points.len()).collect();
    by_u.sort_by(|a, b| us[*a].abs().total_cmp(&us[*b].abs()));
    match kind {
        SingularKind::Empty => {}
        SingularKind::Points => {
            for &k in by_u.iter().take(5) {
                let Some(z) = newton_critical(smms, field, &points[k], order)? else { continue };
                if report.zeros.iter().any(|q| dist(q, &z) < 1e-6) {
                    continue;
                }
                let l = local(smms, field, &z, order)?;
                if l.u.abs() > 1e-8 {
                    continue;
                }
                let grad = (l.du.transpose() * &l.ginv * &l.du)[(0, 0)].max(0.0).sqrt();
                report.max_gradient_at_zeros = report.max_gradient_at_zeros.max(grad);
                report.min_laplacian_at_zeros = report.min_laplacian_at_zeros.min(l.lap_phi.abs());
                report.zeros.push(z);
            }
        }
        SingularKind::Hypersurface => {
            let level: Vec<Option<(f64, f64)>> = by_u
                .iter()
                .take(64)
                .collect::<Vec<_>>()
                .par_iter()
                .map(|&&k| {
                    let Some(z) = project_to_zero(smms, field, &points[k], order)? else { return Ok(None) };
                    let l = local(smms, field, &z, order)?;
                    let grad2 = (l.du.transpose() * &l.ginv * &l.du)[(0, 0)];
                    Ok(Some(((grad2 - norm2).abs(), umbilicity(&l))))
                })
                .collect::<Result<_>>()?;
            for (gd, um) in level.into_iter().flatten() {
                report.level_points += 1;
                report.gradient_defect = report.gradient_defect.max(gd);
                report.umbilicity_residual = report.umbilicity_residual.max(um);
            }
        }
    }
    if report.zeros.is_empty() {
        report.min_laplacian_at_zeros = 0.0;
    }
    Ok(report)
}

/// Newton's method for `∇u = 0`, which locates the double zeros of `u²`.
fn newton_critical(smms: &SmmsData, field: &TractorField, start: &[f64], order: usize) -> Result<Option<Vec<f64>>> {
    let mut x = start.to_vec();
    for _ in 0..50 {
        if !smms.chart.contains(&x) {
            return Ok(None);
        }
        let l = local_coordinate(smms, field, &x, order)?;
        let Some(step) = l.1.clone().lu().solve(&l.0) else { return Ok(None) };
        for (xi, s) in x.iter_mut().zip(step.iter()) {
            *xi -= s;
        }
        if step.norm() < 1e-10 {
            return Ok(smms.chart.contains(&x).then_some(x));
        }
    }
    Ok(None)
}

/// Coordinate gradient and Hessian of `σ`.
fn local_coordinate(
    smms: &SmmsData,
    field: &TractorField,
    p: &[f64],
    order: usize,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let f = smms.frame(p, order)?;
    let n = f.dim();
    let s = field.eval(&f)?.sigma;
    let d: Vec<Jet> = (0..n).map(|i| s.diff(i)).collect();
    Ok((DVector::from_fn(n, |i, _| d[i].value()), DMatrix::from_fn(n, n, |i, j| d[i].diff(j).value())))
}

/// Newton projection of `p` onto `{u = 0}` along the coordinate gradient.
fn project_to_zero(smms: &SmmsData, field: &TractorField, p: &[f64], order: usize) -> Result<Option<Vec<f64>>> {
    let mut x = p.to_vec();
    for _ in 0..50 {
        if !smms.chart.contains(&x) {
            return Ok(None);
        }
        let f = smms.frame(&x, order - 1)?;
        let s = field.eval(&f)?.sigma;
        let d: Vec<f64> = (0..x.len()).map(|i| s.diff(i).value()).collect();
        let d2: f64 = d.iter().map(|v| v * v).sum();
        if d2 < 1e-20 {
            return Ok(None);
        }
        let k = s.value() / d2;
        for (xi, di) in x.iter_mut().zip(&d) {
            *xi -= k * di;
        }
        if (k * d2.sqrt()).abs() < 1e-14 {
            break;
        }
    }
    Ok(smms.chart.domain_value(&x).is_ok_and(|v| v > 0.0).then_some(x))
}

/// Max trace-free part of `∇²u` on a `g`-orthonormal basis of `∇u⊥`.
fn umbilicity(l: &Local) -> f64 {
    let n = l.du.len();
    let normal = &l.ginv * &l.du;
    let ip = |a: &DVector<f64>, b: &DVector<f64>| (a.transpose() * &l.g * b)[(0, 0)];
    let nn = ip(&normal, &normal);
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for k in 0..n {
        let mut e = DVector::from_fn(n, |i, _| if i == k { 1.0 } else { 0.0 });
        e -= &normal * (ip(&e, &normal) / nn);
        for b in &basis {
            e -= b * ip(&e, b);
        }
        let len = ip(&e, &e).sqrt();
        if len > 1e-6 && basis.len() < n - 1 {
            basis.push(e / len);
        }
    }
    let t = DMatrix::from_fn(basis.len(), basis.len(), |a, b| (basis[a].transpose() * &l.hess * &basis[b])[(0, 0)]);
    let mean = t.trace() / basis.len() as f64;
    (t - DMatrix::identity(basis.len(), basis.len()) * mean).amax()
}

// ---------------------------------------------------------------------------
// Combined report

#[derive(Clone, Debug)]
pub struct HolonomyReport {
    pub algebra: AlgebraEstimate,
    pub flat: FlatnessVerdict,
    pub qw: ParallelSections,
}

impl HolonomyReport {
    pub fn algebra_dim(&self) -> usize {
        self.algebra.dim
    }

    pub fn qw_dim(&self) -> usize {
        self.qw.dim
    }
}

/// Algebra, flatness and `dim Q^W` at the default base point.
pub fn holonomy_report(smms: &SmmsData, spec: SampleSpec, opts: &HolonomyOptions) -> Result<HolonomyReport> {
    let base = default_base(&smms.chart, spec.seed)?;
    Ok(HolonomyReport {
        algebra: holonomy_algebra(smms, ConnectionKind::W, &base, spec, opts)?,
        flat: flatness_classify(smms, spec)?,
        qw: qw_dimension(smms, &base, spec.seed, opts)?,
    })
}
