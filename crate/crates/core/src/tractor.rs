//! Standard and adjoint tractors in a chosen scale.
//!
//! A standard tractor is stored as `(σ, ω, ρ)` with `ω` contravariant. The
//! tractor metric is `h(I, I) = 2σρ + |ω|²`, so the projector is
//! `X = (0, 0, 1)` and `⟨I, X⟩ = σ`. Adjoint tractors are `(n+2)×(n+2)`
//! matrices acting on this layout.
//!
//! Field-level operations work on [`TractorJet`]s expanded in an
//! [`SmmsFrame`]; the frame's scale is the working scale.

use crate::chart::Chart;
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::geometry::exterior_d;
use crate::jet::{Jet, JetSpace};
use crate::smms::{is_excluded, SmmsFrame};
use crate::tensor::JetTensor;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// A choice of scale `g = e^{2s} g_chart`; `s = None` is the chart metric.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaleTag {
    pub label: String,
    pub s: Option<Expr>,
}

impl ScaleTag {
    pub fn base() -> ScaleTag {
        ScaleTag { label: "chart".into(), s: None }
    }

    pub fn new(label: &str, s: Expr) -> ScaleTag {
        ScaleTag { label: label.into(), s: Some(s) }
    }

    pub fn from_expr(s: Option<Expr>) -> ScaleTag {
        match s {
            Some(e) => ScaleTag { label: e.source().to_string(), s: Some(e) },
            None => ScaleTag::base(),
        }
    }

    fn jet(&self, space: &'static JetSpace, point: &[f64]) -> Result<Jet> {
        let args: Vec<Jet> = (0..point.len()).map(|i| Jet::variable(space, i, point[i])).collect();
        match &self.s {
            Some(e) => Ok(e.eval(&args, point)?),
            None => Ok(Jet::constant(space, 0.0)),
        }
    }

    /// The metric of this scale at `point`.
    pub fn metric(&self, chart: &Chart, point: &[f64]) -> Result<DMatrix<f64>> {
        let g = chart.metric_at(point)?;
        match &self.s {
            Some(e) => Ok(g * (2.0 * e.eval_f64(point)?).exp()),
            None => Ok(g),
        }
    }
}

/// A tractor at a point, of conformal weight `weight`, written in `scale`.
#[derive(Clone, Debug, PartialEq)]
pub struct TractorValue {
    pub sigma: f64,
    pub omega: Vec<f64>,
    pub rho: f64,
    pub weight: f64,
    pub scale: ScaleTag,
    pub point: Vec<f64>,
}

impl TractorValue {
    pub fn dim(&self) -> usize {
        self.omega.len()
    }

    pub fn to_vector(&self) -> DVector<f64> {
        let n = self.dim();
        DVector::from_fn(n + 2, |i, _| match i {
            0 => self.sigma,
            i if i == n + 1 => self.rho,
            i => self.omega[i - 1],
        })
    }

    pub fn from_vector(v: &DVector<f64>, weight: f64, scale: ScaleTag, point: &[f64]) -> TractorValue {
        let n = v.len() - 2;
        TractorValue {
            sigma: v[0],
            omega: (1..=n).map(|i| v[i]).collect(),
            rho: v[n + 1],
            weight,
            scale,
            point: point.to_vec(),
        }
    }

    /// The projector `X` at a point.
    pub fn x(n: usize, scale: ScaleTag, point: &[f64]) -> TractorValue {
        TractorValue { sigma: 0.0, omega: vec![0.0; n], rho: 1.0, weight: 1.0, scale, point: point.to_vec() }
    }

    /// `Z_g(ω) = (0, ω, 0)` for the scale of `scale`.
    pub fn z(omega: &[f64], scale: ScaleTag, point: &[f64]) -> TractorValue {
        TractorValue { sigma: 0.0, omega: omega.to_vec(), rho: 0.0, weight: 1.0, scale, point: point.to_vec() }
    }
}

/// The `(n+2)×(n+2)` Gram matrix of the tractor metric for a metric `g`.
pub fn h_matrix(g: &DMatrix<f64>) -> DMatrix<f64> {
    let n = g.nrows();
    let mut h = DMatrix::zeros(n + 2, n + 2);
    h[(0, n + 1)] = 1.0;
    h[(n + 1, 0)] = 1.0;
    h.view_mut((1, 1), (n, n)).copy_from(g);
    h
}

/// Rewrites `t` in the scale `to`, using the transformation law with `∇s`
/// taken in the old scale.
pub fn change_scale(chart: &Chart, t: &TractorValue, to: &ScaleTag) -> Result<TractorValue> {
    if t.scale == *to {
        return Ok(t.clone());
    }
    let n = t.dim();
    let space = JetSpace::get(n, 1);
    let s = to.jet(space, &t.point)?.sub(&t.scale.jet(space, &t.point)?);
    let ds: Vec<f64> = (0..n).map(|i| s.diff(i).value()).collect();
    let g = t.scale.metric(chart, &t.point)?;
    let ginv = g.clone().try_inverse().ok_or(Error::DegenerateMetric { point: t.point.clone() })?;
    let ds_v = DVector::from_vec(ds.clone());
    let grad = &ginv * &ds_v;
    let grad2 = ds_v.dot(&grad);
    let s = s.value();
    let down = ((t.weight - 1.0) * s).exp();
    let omega: Vec<f64> = (0..n).map(|k| down * (t.omega[k] + t.sigma * grad[k])).collect();
    let ds_omega: f64 = (0..n).map(|k| ds[k] * t.omega[k]).sum();
    Ok(TractorValue {
        sigma: ((1.0 + t.weight) * s).exp() * t.sigma,
        omega,
        rho: down * (t.rho - ds_omega - 0.5 * grad2 * t.sigma),
        weight: t.weight,
        scale: to.clone(),
        point: t.point.clone(),
    })
}

/// `h(I, J)`, converting `J` to the scale of `I` when needed.
pub fn tractor_metric(chart: &Chart, a: &TractorValue, b: &TractorValue) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), got: b.dim() });
    }
    if a.point != b.point {
        return Err(Error::Invalid("tractors live at different points".into()));
    }
    let b = change_scale(chart, b, &a.scale)?;
    let g = a.scale.metric(chart, &a.point)?;
    Ok(a.to_vector().dot(&(h_matrix(&g) * b.to_vector())))
}

/// Jets of a tractor field in a frame's scale.
#[derive(Clone, Debug)]
pub struct TractorJet {
    pub sigma: Jet,
    pub omega: Vec<Jet>,
    pub rho: Jet,
}

impl TractorJet {
    pub fn dim(&self) -> usize {
        self.omega.len()
    }

    pub fn components(&self) -> Vec<Jet> {
        let mut v = Vec::with_capacity(self.dim() + 2);
        v.push(self.sigma.clone());
        v.extend(self.omega.iter().cloned());
        v.push(self.rho.clone());
        v
    }

    pub fn from_components(mut c: Vec<Jet>) -> TractorJet {
        let rho = c.pop().expect("tractor has n+2 slots");
        let sigma = c.remove(0);
        TractorJet { sigma, omega: c, rho }
    }

    pub fn zero(f: &SmmsFrame) -> TractorJet {
        TractorJet { sigma: f.c(0.0), omega: vec![f.c(0.0); f.dim()], rho: f.c(0.0) }
    }

    pub fn x(f: &SmmsFrame) -> TractorJet {
        TractorJet { sigma: f.c(0.0), omega: vec![f.c(0.0); f.dim()], rho: f.c(1.0) }
    }

    pub fn add(&self, o: &TractorJet) -> TractorJet {
        TractorJet {
            sigma: self.sigma.add(&o.sigma),
            omega: self.omega.iter().zip(&o.omega).map(|(a, b)| a.add(b)).collect(),
            rho: self.rho.add(&o.rho),
        }
    }

    pub fn sub(&self, o: &TractorJet) -> TractorJet {
        self.add(&o.scale(-1.0))
    }

    pub fn scale(&self, k: f64) -> TractorJet {
        TractorJet { sigma: self.sigma.scale(k), omega: self.omega.iter().map(|x| x.scale(k)).collect(), rho: self.rho.scale(k) }
    }

    pub fn mul(&self, k: &Jet) -> TractorJet {
        TractorJet { sigma: self.sigma.mul(k), omega: self.omega.iter().map(|x| x.mul(k)).collect(), rho: self.rho.mul(k) }
    }

    pub fn diff(&self, i: usize) -> TractorJet {
        TractorJet { sigma: self.sigma.diff(i), omega: self.omega.iter().map(|x| x.diff(i)).collect(), rho: self.rho.diff(i) }
    }

    pub fn values(&self) -> DVector<f64> {
        DVector::from_vec(self.components().iter().map(Jet::value).collect())
    }

    pub fn order(&self) -> usize {
        self.components().iter().map(Jet::order).min().unwrap_or(0)
    }

    pub fn to_value(&self, weight: f64, f: &SmmsFrame) -> TractorValue {
        TractorValue::from_vector(&self.values(), weight, ScaleTag::from_expr(f.scale_expr.clone()), f.geo.point())
    }

    pub fn max_abs(&self) -> f64 {
        self.values().amax()
    }
}

/// `h(I, J)` as a jet.
pub fn h_jet(f: &SmmsFrame, a: &TractorJet, b: &TractorJet) -> Jet {
    let n = f.dim();
    let mut acc = a.sigma.mul(&b.rho).add(&a.rho.mul(&b.sigma));
    for k in 0..n {
        for l in 0..n {
            acc.fma_assign(&f.geo.g.data[k * n + l], &a.omega[k].mul(&b.omega[l]));
        }
    }
    acc
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConnectionKind {
    Normal,
    W,
}

fn require_admissible(f: &SmmsFrame) -> Result<()> {
    if is_excluded(f.m, f.dim()) {
        return Err(Error::ExcludedDimension { m: f.m, n: f.dim() });
    }
    Ok(())
}

fn schouten_for(f: &SmmsFrame, kind: ConnectionKind) -> Result<&JetTensor> {
    match kind {
        ConnectionKind::Normal => Ok(f.geo.schouten()),
        ConnectionKind::W => {
            require_admissible(f)?;
            Ok(f.p_w())
        }
    }
}

/// The connection matrix `Ω_i` with `∇_i I = ∂_i I + Ω_i I`, row-major.
pub fn connection_matrix(f: &SmmsFrame, kind: ConnectionKind, i: usize) -> Result<Vec<Jet>> {
    let p = schouten_for(f, kind)?;
    let n = f.dim();
    let nn = n + 2;
    let zero = f.c(0.0);
    let mut m = vec![zero.clone(); nn * nn];
    for l in 0..n {
        m[1 + l] = f.geo.g.data[i * n + l].neg();
        m[(nn - 1) * nn + 1 + l] = p.data[i * n + l].neg();
    }
    for k in 0..n {
        let mut acc = zero.clone();
        for l in 0..n {
            acc.fma_assign(&f.geo.ginv.data[k * n + l], &p.data[i * n + l]);
        }
        m[(1 + k) * nn] = acc;
        for l in 0..n {
            m[(1 + k) * nn + 1 + l] = f.geo.gamma(k, i, l).clone();
        }
        if k == i {
            m[(1 + k) * nn + nn - 1] = f.c(1.0);
        }
    }
    Ok(m)
}

/// Values of `Ω_i` for every coordinate direction.
pub fn connection_values(f: &SmmsFrame, kind: ConnectionKind) -> Result<Vec<DMatrix<f64>>> {
    let nn = f.dim() + 2;
    (0..f.dim())
        .map(|i| {
            let m = connection_matrix(f, kind, i)?;
            Ok(DMatrix::from_fn(nn, nn, |r, c| m[r * nn + c].value()))
        })
        .collect()
}

fn mat_apply(m: &[Jet], v: &[Jet]) -> Vec<Jet> {
    let nn = v.len();
    (0..nn)
        .map(|r| {
            let mut acc = v[0].zero_like();
            for c in 0..nn {
                acc.fma_assign(&m[r * nn + c], &v[c]);
            }
            acc
        })
        .collect()
}

/// `∇_i I` for every coordinate direction `i`.
pub fn connection(f: &SmmsFrame, kind: ConnectionKind, t: &TractorJet) -> Result<Vec<TractorJet>> {
    let comps = t.components();
    (0..f.dim())
        .map(|i| {
            let om = connection_matrix(f, kind, i)?;
            let d = t.diff(i).components();
            let o = mat_apply(&om, &comps);
            Ok(TractorJet::from_components(d.iter().zip(&o).map(|(a, b)| a.add(b)).collect()))
        })
        .collect()
}

pub fn normal_connection(f: &SmmsFrame, t: &TractorJet) -> Result<Vec<TractorJet>> {
    connection(f, ConnectionKind::Normal, t)
}

pub fn w_connection(f: &SmmsFrame, t: &TractorJet) -> Result<Vec<TractorJet>> {
    connection(f, ConnectionKind::W, t)
}

/// `D u = (w(n+2w−2)u, (n+2w−2)∇u, −(Δu + wJu))` for `u` of weight `w`.
pub fn tractor_d(f: &SmmsFrame, w: f64, u: &Jet) -> TractorJet {
    let n = f.dim() as f64;
    let k = n + 2.0 * w - 2.0;
    TractorJet {
        sigma: u.scale(w * k),
        omega: f.geo.grad_vec(u).iter().map(|x| x.scale(k)).collect(),
        rho: f.geo.laplacian(u).add(&f.geo.schouten_trace().mul(u).scale(w)).neg(),
    }
}

/// `D^W u = (w(m+n+2w−2)u, (m+n+2w−2)∇u, −(Δ_φu + wJ^W u))`.
pub fn tractor_d_w(f: &SmmsFrame, w: f64, u: &Jet) -> Result<TractorJet> {
    require_admissible(f)?;
    let k = f.m + f.dim() as f64 + 2.0 * w - 2.0;
    Ok(TractorJet {
        sigma: u.scale(w * k),
        omega: f.geo.grad_vec(u).iter().map(|x| x.scale(k)).collect(),
        rho: f.weighted_laplacian(u).add(&f.j_w().mul(u).scale(w)).neg(),
    })
}

/// The scale tractor `J = (1/n) D v`.
pub fn scale_tractor(f: &SmmsFrame) -> TractorJet {
    tractor_d(f, 1.0, &f.v).scale(1.0 / f.dim() as f64)
}

/// `(μ − (m−1)|J|²) / (2(m+n−1) v)`, with `|J|²` from the tractor metric.
pub fn defect_coefficient(f: &SmmsFrame, j: &TractorJet) -> Jet {
    let (m, n) = (f.m, f.dim() as f64);
    h_jet(f, j, j)
        .scale(-(m - 1.0))
        .add_scalar(f.mu)
        .mul(&j.sigma.recip())
        .scale(1.0 / (2.0 * (m + n - 1.0)))
}

/// `J̃ = J + ((m+2n−2)/(m+n−2)) · (μ−(m−1)|J|²)/(2(m+n−1)⟨X,J⟩) · X`.
pub fn jtilde(f: &SmmsFrame) -> Result<TractorJet> {
    require_admissible(f)?;
    let (m, n) = (f.m, f.dim() as f64);
    let j = scale_tractor(f);
    let k = defect_coefficient(f, &j).scale((m + 2.0 * n - 2.0) / (m + n - 2.0));
    Ok(j.add(&TractorJet::x(f).mul(&k)))
}

/// `⟨I, J̃⟩`; `I` lies in the W-subbundle exactly when this vanishes.
pub fn tw_membership(f: &SmmsFrame, t: &TractorJet) -> Result<Jet> {
    Ok(h_jet(f, t, &jtilde(f)?))
}

/// A tractor field built from chart expressions and the natural operators.
#[derive(Clone, Debug)]
pub enum TractorField {
    /// Components `(σ, ω^k, ρ)` written in the chart's base scale.
    Components { sigma: Expr, omega: Vec<Expr>, rho: Expr, weight: f64 },
    /// `D u` for a density `u` of weight `weight` given in the base scale.
    D { weight: f64, density: Expr },
    /// `D^W u` for a density `u` of weight `weight` given in the base scale.
    DW { weight: f64, density: Expr },
    X,
    /// `J = (1/n) D v`.
    ScaleTractor,
    JTilde,
    Combination(Vec<(f64, TractorField)>),
}

impl TractorField {
    pub fn weight(&self) -> f64 {
        match self {
            TractorField::Components { weight, .. } => *weight,
            TractorField::D { weight, .. } | TractorField::DW { weight, .. } => weight - 1.0,
            TractorField::X => 1.0,
            TractorField::ScaleTractor | TractorField::JTilde => 0.0,
            TractorField::Combination(terms) => terms.first().map_or(0.0, |(_, t)| t.weight()),
        }
    }

    /// `(1/(m+n)) D^W u` for a weight-1 density.
    pub fn weighted_scale_tractor(u: Expr, m: f64, n: usize) -> TractorField {
        TractorField::Combination(vec![(1.0 / (m + n as f64), TractorField::DW { weight: 1.0, density: u })])
    }

    /// `(1/n) D u` for a weight-1 density.
    pub fn scale_tractor_of(u: Expr, n: usize) -> TractorField {
        TractorField::Combination(vec![(1.0 / n as f64, TractorField::D { weight: 1.0, density: u })])
    }

    pub fn eval(&self, f: &SmmsFrame) -> Result<TractorJet> {
        match self {
            TractorField::Components { sigma, omega, rho, weight } => components_in_frame(f, sigma, omega, rho, *weight),
            TractorField::D { weight, density } => Ok(tractor_d(f, *weight, &density_jet(f, density, *weight)?)),
            TractorField::DW { weight, density } => tractor_d_w(f, *weight, &density_jet(f, density, *weight)?),
            TractorField::X => Ok(TractorJet::x(f)),
            TractorField::ScaleTractor => Ok(scale_tractor(f)),
            TractorField::JTilde => jtilde(f),
            TractorField::Combination(terms) => {
                let w = self.weight();
                if let Some((_, t)) = terms.iter().find(|(_, t)| (t.weight() - w).abs() > 1e-12) {
                    return Err(Error::WeightMismatch { left: w, right: t.weight() });
                }
                let mut acc = TractorJet::zero(f);
                for (k, t) in terms {
                    acc = acc.add(&t.eval(f)?.scale(*k));
                }
                Ok(acc)
            }
        }
    }
}

/// A density of weight `w` given in base scale, expanded in the frame's scale.
pub fn density_jet(f: &SmmsFrame, e: &Expr, w: f64) -> Result<Jet> {
    let u = f.geo.eval(e)?;
    Ok(match f.geo.scale() {
        Some(s) => u.mul(&s.scale(w).exp()),
        None => u,
    })
}

fn components_in_frame(f: &SmmsFrame, sigma: &Expr, omega: &[Expr], rho: &Expr, w: f64) -> Result<TractorJet> {
    let n = f.dim();
    if omega.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: omega.len() });
    }
    let sigma = f.geo.eval(sigma)?;
    let omega: Vec<Jet> = omega.iter().map(|e| f.geo.eval(e)).collect::<Result<_>>()?;
    let rho = f.geo.eval(rho)?;
    let Some(s) = f.geo.scale() else {
        return Ok(TractorJet { sigma, omega, rho });
    };
    let ds: Vec<Jet> = (0..n).map(|i| s.diff(i)).collect();
    // The law needs ∇s in the base metric, which is e^{2s} times the frame's inverse.
    let e2s = s.scale(2.0).exp();
    let grad: Vec<Jet> = (0..n)
        .map(|k| {
            let mut acc = f.c(0.0);
            for l in 0..n {
                acc.fma_assign(&f.geo.ginv.data[k * n + l], &ds[l]);
            }
            acc.mul(&e2s)
        })
        .collect();
    let grad2 = crate::jet::dot(&ds, &grad);
    let up = s.scale(1.0 + w).exp();
    let down = s.scale(w - 1.0).exp();
    let new_omega = (0..n).map(|k| omega[k].add(&sigma.mul(&grad[k])).mul(&down)).collect();
    let new_rho = rho
        .sub(&crate::jet::dot(&ds, &omega))
        .sub(&grad2.mul(&sigma).scale(0.5))
        .mul(&down);
    Ok(TractorJet { sigma: sigma.mul(&up), omega: new_omega, rho: new_rho })
}

// ---------------------------------------------------------------------------
// Adjoint tractors

/// An endomorphism of the tractor fiber, skew for the tractor metric.
#[derive(Clone, Debug, PartialEq)]
pub struct AdjointValue {
    pub matrix: DMatrix<f64>,
    pub scale: ScaleTag,
    pub point: Vec<f64>,
}

/// `I ∧ J` acting by `K ↦ ⟨I,K⟩J − ⟨J,K⟩I`.
pub fn wedge(h: &DMatrix<f64>, a: &DVector<f64>, b: &DVector<f64>) -> DMatrix<f64> {
    b * (h * a).transpose() - a * (h * b).transpose()
}

/// The induced metric `h(A, B) = −½ tr(AB)`, which equals
/// `⟨I₁,J₁⟩⟨I₂,J₂⟩ − ⟨I₁,J₂⟩⟨I₂,J₁⟩` on wedges.
pub fn adjoint_metric(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    -0.5 * (a * b).trace()
}

/// The bracket `{A, B}`, realised as the matrix commutator.
pub fn bracket(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a * b - b * a
}

/// `max |hA + Aᵀh|`.
pub fn skew_residual(h: &DMatrix<f64>, a: &DMatrix<f64>) -> f64 {
    (h * a + a.transpose() * h).amax()
}

/// The action of a covector `ξ ∈ g₁`: `ξ·(σ, ω, ρ) = (0, σξ♯, −ξ(ω))`.
pub fn g1_matrix(xi: &[f64], ginv: &DMatrix<f64>) -> DMatrix<f64> {
    let n = xi.len();
    let up = ginv * DVector::from_column_slice(xi);
    let mut m = DMatrix::zeros(n + 2, n + 2);
    for k in 0..n {
        m[(1 + k, 0)] = up[k];
        m[(n + 1, 1 + k)] = -xi[k];
    }
    m
}

fn coframe(n: usize, j: usize) -> Vec<f64> {
    let mut e = vec![0.0; n];
    e[j] = 1.0;
    e
}

/// `∂*₁(φ) = −Σ_i dx^i·φ(∂_i)` for a tractor-valued 1-form.
pub fn partial_star_1(phi: &[DVector<f64>], ginv: &DMatrix<f64>) -> DVector<f64> {
    let n = phi.len();
    let mut out = DVector::zeros(n + 2);
    for (i, p) in phi.iter().enumerate() {
        out -= g1_matrix(&coframe(n, i), ginv) * p;
    }
    out
}

/// `∂*₂(Φ)(∂_k) = Σ_j dx^j·Φ(∂_j, ∂_k)` for a tractor-valued 2-form given by
/// its components `phi[j][k]`.
pub fn partial_star_2(phi: &[Vec<DVector<f64>>], ginv: &DMatrix<f64>) -> Vec<DVector<f64>> {
    let n = phi.len();
    (0..n)
        .map(|k| {
            let mut acc = DVector::zeros(n + 2);
            for j in 0..n {
                acc += g1_matrix(&coframe(n, j), ginv) * &phi[j][k];
            }
            acc
        })
        .collect()
}

/// The adjoint-valued version of [`partial_star_2`], with `g₁` acting by the
/// bracket.
pub fn partial_star_2_adjoint(phi: &[Vec<DMatrix<f64>>], ginv: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
    let n = phi.len();
    (0..n)
        .map(|k| {
            let mut acc = DMatrix::zeros(n + 2, n + 2);
            for j in 0..n {
                acc += bracket(&g1_matrix(&coframe(n, j), ginv), &phi[j][k]);
            }
            acc
        })
        .collect()
}

/// Curvature of a tractor connection: `curv[i][j] = R(∂_i, ∂_j)`.
pub type CurvatureValues = Vec<Vec<DMatrix<f64>>>;

/// The block form of the curvature built from `dP` and `A = Rm − P∧g`:
/// the middle row is `(−dP(x,y)♯, A(x,y,·,·)♯, 0)` and the bottom row is
/// `(0, dP(x,y,·), 0)`.
pub fn curvature_block(f: &SmmsFrame, kind: ConnectionKind) -> Result<CurvatureValues> {
    let p = schouten_for(f, kind)?;
    let a = f
        .geo
        .riemann()
        .sub(&crate::tensor::kulkarni_nomizu(p, &f.geo.g))
        .values();
    let dp = exterior_d(&f.geo.nabla(p)).values();
    let n = f.dim();
    let ginv = f.geo.ginv.values();
    let gi = |a: usize, b: usize| ginv.data[a * n + b];
    Ok((0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let mut m = DMatrix::zeros(n + 2, n + 2);
                    for k in 0..n {
                        m[(1 + k, 0)] = -(0..n).map(|l| gi(k, l) * dp.at(&[i, j, l])).sum::<f64>();
                        for l in 0..n {
                            m[(1 + k, 1 + l)] = (0..n).map(|q| a.at(&[i, j, l, q]) * gi(q, k)).sum();
                        }
                        m[(n + 1, 1 + k)] = *dp.at(&[i, j, k]);
                    }
                    m
                })
                .collect()
        })
        .collect())
}

/// The curvature `−(∂_iΩ_j − ∂_jΩ_i + [Ω_i, Ω_j])` from the connection
/// matrices; needs a frame of order at least 3.
pub fn curvature_commutator(f: &SmmsFrame, kind: ConnectionKind) -> Result<CurvatureValues> {
    let n = f.dim();
    let nn = n + 2;
    let om: Vec<Vec<Jet>> = (0..n).map(|i| connection_matrix(f, kind, i)).collect::<Result<_>>()?;
    let val = |m: &[Jet]| DMatrix::from_fn(nn, nn, |r, c| m[r * nn + c].value());
    let dval = |m: &[Jet], k: usize| DMatrix::from_fn(nn, nn, |r, c| m[r * nn + c].diff(k).value());
    let vals: Vec<DMatrix<f64>> = om.iter().map(|m| val(m)).collect();
    Ok((0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let r = dval(&om[j], i) - dval(&om[i], j) + bracket(&vals[i], &vals[j]);
                    -r
                })
                .collect()
        })
        .collect())
}

/// `R^W(x, y)` for coordinate directions, as an adjoint tractor.
pub fn curvature_w(f: &SmmsFrame, x: &[f64], y: &[f64]) -> Result<AdjointValue> {
    let curv = curvature_block(f, ConnectionKind::W)?;
    let n = f.dim();
    let mut m = DMatrix::zeros(n + 2, n + 2);
    for i in 0..n {
        for j in 0..n {
            m += &curv[i][j] * (x[i] * y[j]);
        }
    }
    Ok(AdjointValue { matrix: m, scale: ScaleTag::from_expr(f.scale_expr.clone()), point: f.geo.point().to_vec() })
}

/// Max normalized difference between two curvature evaluations.
pub fn curvature_residual(a: &CurvatureValues, b: &CurvatureValues) -> f64 {
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for (ra, rb) in a.iter().zip(b) {
        for (x, y) in ra.iter().zip(rb) {
            num = num.max((x - y).amax());
            den = den.max(x.amax()).max(y.amax());
        }
    }
    num / (1.0 + den)
}

/// The tractor metric Gram matrix at a frame's point, in its scale.
pub fn h_at(f: &SmmsFrame) -> DMatrix<f64> {
    let n = f.dim();
    let g = f.geo.g.values();
    h_matrix(&DMatrix::from_fn(n, n, |i, j| g.data[i * n + j]))
}

pub fn ginv_at(f: &SmmsFrame) -> DMatrix<f64> {
    let n = f.dim();
    let g = f.geo.ginv.values();
    DMatrix::from_fn(n, n, |i, j| g.data[i * n + j])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{make_flat_sphere, make_sphere};
    use crate::sampling::{sample_points, SampleSpec};
    use crate::smms::SmmsData;
    use crate::test_support::{generic_chart, random_smms, sphere};
    use std::sync::Arc;

    fn tag(c: &Chart, s: &str) -> ScaleTag {
        ScaleTag::new(s, c.parse(s).unwrap())
    }

    fn sample_value(c: &Chart, p: &[f64]) -> TractorValue {
        TractorValue { sigma: 0.7, omega: vec![0.2, -0.4, 0.1], rho: -0.3, weight: 0.0, scale: tag(c, "0.1*x1*x2"), point: p.to_vec() }
    }

    #[test]
    fn change_scale_round_trip_and_cocycle() {
        let c = generic_chart();
        let p = [0.2, 0.1, -0.3];
        let t = sample_value(&c, &p);
        let a = tag(&c, "0.3*x2 - 0.2*x3^2");
        let b = tag(&c, "sin(x1) + 0.1*x3");
        let there = change_scale(&c, &t, &a).unwrap();
        let back = change_scale(&c, &there, &t.scale).unwrap();
        assert!((back.to_vector() - t.to_vector()).amax() < 1e-12);
        let direct = change_scale(&c, &t, &b).unwrap();
        let via = change_scale(&c, &there, &b).unwrap();
        assert!((direct.to_vector() - via.to_vector()).amax() < 1e-12);
        let h0 = tractor_metric(&c, &t, &t).unwrap();
        let h1 = tractor_metric(&c, &direct, &direct).unwrap();
        assert!((h0 - h1).abs() < 1e-12);
    }

    #[test]
    fn constant_rescale() {
        let c = generic_chart();
        let p = [0.2, 0.1, -0.3];
        let mut t = sample_value(&c, &p);
        t.scale = ScaleTag::base();
        let out = change_scale(&c, &t, &tag(&c, "0.5")).unwrap();
        let e = 0.5f64.exp();
        assert!((out.sigma - e * t.sigma).abs() < 1e-14);
        assert!((out.rho - t.rho / e).abs() < 1e-14);
        assert!((out.omega[1] - t.omega[1] / e).abs() < 1e-14);
    }

    #[test]
    fn z_projector_shifts_by_ds() {
        let c = generic_chart();
        let p = [0.2, 0.1, -0.3];
        let to = tag(&c, "0.3*x2 - 0.2*x3^2");
        let x = [0.5, -1.0, 2.0];
        let z = change_scale(&c, &TractorValue::z(&x, ScaleTag::base(), &p), &to).unwrap();
        let ds = [0.0, 0.3, -0.4 * p[2]];
        let dsx: f64 = ds.iter().zip(&x).map(|(a, b)| a * b).sum();
        let expect = TractorValue::z(&x, to.clone(), &p).to_vector() - TractorValue::x(3, to, &p).to_vector() * dsx;
        assert!((z.to_vector() - expect).amax() < 1e-12);
    }

    #[test]
    fn sphere_basis_parallel_and_orthonormal() {
        let b = make_sphere(3).unwrap();
        for p in sample_points(&b.smms.chart, SampleSpec::new(10, 5)).unwrap() {
            let f = b.smms.frame(&p, 3).unwrap();
            let basis: Vec<TractorJet> = b.tractors.iter().map(|(_, t)| t.eval(&f).unwrap()).collect();
            for (i, a) in basis.iter().enumerate() {
                for d in normal_connection(&f, a).unwrap() {
                    assert!(d.max_abs() < 1e-10, "{}", d.max_abs());
                }
                for (j, c) in basis.iter().enumerate() {
                    let want = if i != j { 0.0 } else if i == 0 { -1.0 } else { 1.0 };
                    assert!((h_jet(&f, a, c).value() - want).abs() < 1e-12);
                }
            }
            let i0 = &basis[0];
            assert!((i0.sigma.value() - 1.0).abs() < 1e-14 && (i0.rho.value() + 0.5).abs() < 1e-14);
        }
    }

    #[test]
    fn x_derivative_is_z() {
        let s = SmmsData::new(Arc::new(Chart::euclidean(3, 1.0)), "1", 0.0, 0.0).unwrap();
        let f = s.frame(&[0.1, 0.2, 0.3], 2).unwrap();
        let d = normal_connection(&f, &TractorJet::x(&f)).unwrap();
        for (i, di) in d.iter().enumerate() {
            let mut z = vec![0.0; 5];
            z[1 + i] = 1.0;
            assert!((di.values() - DVector::from_vec(z)).amax() < 1e-14);
        }
        let (s, p) = random_smms(3, 2.0);
        let f = s.frame(&p, 2).unwrap();
        for (i, di) in normal_connection(&f, &TractorJet::x(&f)).unwrap().iter().enumerate() {
            let mut z = vec![0.0; 5];
            z[1 + i] = 1.0;
            assert!((di.values() - DVector::from_vec(z)).amax() < 1e-12);
        }
    }

    fn random_field(c: &Chart) -> TractorField {
        TractorField::Components {
            sigma: c.parse("1 + 0.3*x1 - x2*x3").unwrap(),
            omega: vec![c.parse("x2").unwrap(), c.parse("0.5 - x1^2").unwrap(), c.parse("x1*x3").unwrap()],
            rho: c.parse("0.2*x3 + x1*x2").unwrap(),
            weight: 0.0,
        }
    }

    #[test]
    fn connections_preserve_metric() {
        for seed in 0..3 {
            let (s, p) = random_smms(seed, 2.0);
            let f = s.frame(&p, 3).unwrap();
            let a = random_field(&s.chart).eval(&f).unwrap();
            let b = TractorField::DW { weight: 1.0, density: s.chart.parse("1 + x1*x2").unwrap() }.eval(&f).unwrap();
            let hab = h_jet(&f, &a, &b);
            for kind in [ConnectionKind::Normal, ConnectionKind::W] {
                let da = connection(&f, kind, &a).unwrap();
                let db = connection(&f, kind, &b).unwrap();
                for i in 0..3 {
                    let lhs = hab.diff(i).value();
                    let rhs = h_jet(&f, &da[i], &b).value() + h_jet(&f, &a, &db[i]).value();
                    assert!((lhs - rhs).abs() < 1e-11, "{lhs} {rhs}");
                }
            }
        }
    }

    #[test]
    fn operators_transform_by_the_law() {
        let (s, p) = random_smms(8, 2.0);
        let moved = s.clone().with_scale("0.2*x1 - 0.3*x2*x3 + 0.1*x3^2").unwrap();
        let to = ScaleTag::from_expr(moved.scale.clone());
        let fields = [
            (TractorField::D { weight: 1.0, density: s.chart.parse("2 + x1*x3").unwrap() }, "D"),
            (TractorField::DW { weight: 1.0, density: s.chart.parse("2 + x1*x3").unwrap() }, "DW"),
            (TractorField::DW { weight: -0.5, density: s.chart.parse("1 + x2").unwrap() }, "DW weight -1/2"),
            (TractorField::JTilde, "J tilde"),
            (random_field(&s.chart), "components"),
        ];
        let f0 = s.frame(&p, 3).unwrap();
        let f1 = moved.frame(&p, 3).unwrap();
        for (field, name) in &fields {
            let w = field.weight();
            let a = field.eval(&f0).unwrap();
            let b = field.eval(&f1).unwrap();
            let carried = change_scale(&s.chart, &a.to_value(w, &f0), &to).unwrap();
            let r = (carried.to_vector() - b.values()).amax();
            assert!(r < 1e-10, "{name}: {r}");
            if w != 0.0 {
                continue;
            }
            let da = w_connection(&f0, &a).unwrap();
            let db = w_connection(&f1, &b).unwrap();
            for i in 0..3 {
                let carried = change_scale(&s.chart, &da[i].to_value(0.0, &f0), &to).unwrap();
                let r = (carried.to_vector() - db[i].values()).amax();
                assert!(r < 1e-9, "∇^W {name}: {r}");
            }
        }
    }

    #[test]
    fn d_operator_examples() {
        let b = make_sphere(3).unwrap();
        let f = b.smms.frame(&[0.3, -0.2, 0.5], 2).unwrap();
        let i0 = tractor_d(&f, 1.0, &f.c(1.0)).scale(1.0 / 3.0);
        assert!((i0.values() - DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0, -0.5])).amax() < 1e-12);
        let e = SmmsData::new(Arc::new(Chart::euclidean(3, 1.0)), "1", 0.0, 0.0).unwrap();
        let f = e.frame(&[0.3, -0.2, 0.5], 2).unwrap();
        let one = tractor_d(&f, 1.0, &f.c(1.0)).scale(1.0 / 3.0);
        assert!((one.values() - DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0, 0.0])).amax() < 1e-14);
    }

    #[test]
    fn flat_sphere_w_data() {
        let (m, n) = (2.0, 3.0);
        let b = make_flat_sphere(3, m).unwrap();
        for p in sample_points(&b.smms.chart, SampleSpec::new(6, 1)).unwrap() {
            let f = b.smms.frame(&p, 3).unwrap();
            let jt = jtilde(&f).unwrap();
            let i0 = b.tractor("I0").unwrap().eval(&f).unwrap();
            assert!((jt.values() - i0.values()).amax() < 1e-12);
            assert!((h_jet(&f, &jt, &jt).value() + 1.0).abs() < 1e-12);
            assert!((tw_membership(&f, &TractorJet::x(&f)).unwrap().value() - f.v.value()).abs() < 1e-14);
            for (_, t) in &b.tractors {
                for d in w_connection(&f, &t.eval(&f).unwrap()).unwrap() {
                    assert!(d.max_abs() < 1e-10);
                }
            }
            let dw = tractor_d_w(&f, 1.0, &f.c(1.0)).unwrap().scale(1.0 / (m + n));
            let want = DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0, -(n - m) / (2.0 * (m + n))]);
            assert!((dw.values() - want).amax() < 1e-12);
        }
    }

    #[test]
    fn jtilde_bottom_slot_is_ytilde() {
        for seed in 0..4 {
            let (s, p) = random_smms(seed, 3.0);
            let f = s.frame(&p, 2).unwrap();
            let jt = jtilde(&f).unwrap();
            assert!((jt.rho.value() - f.ytilde().value()).abs() < 1e-12);
            assert!((jt.sigma.value() - f.v.value()).abs() < 1e-15);
            // The displayed closed form in terms of R, Δv and |∇v|².
            let (m, n) = (f.m, 3.0);
            let v = f.v.value();
            let lap = f.lap_v().value();
            let g2 = f.geo.inner_forms(f.dv(), f.dv()).value();
            let r = f.geo.scalar_curvature().value();
            let closed = -(2.0 * (n - 1.0) * v * lap + r * v * v - (m + 2.0 * n - 2.0) * (f.mu - (m - 1.0) * g2))
                / (2.0 * (m + n - 1.0) * (m + n - 2.0) * v);
            assert!((closed - jt.rho.value()).abs() < 1e-10);
        }
    }

    #[test]
    fn m_zero_w_equals_normal() {
        let (s, p) = random_smms(2, 0.0);
        let f = s.frame(&p, 3).unwrap();
        let a = random_field(&s.chart).eval(&f).unwrap();
        let u = f.geo.eval(&s.chart.parse("1 + x1^2").unwrap()).unwrap();
        let dn = normal_connection(&f, &a).unwrap();
        let dw = w_connection(&f, &a).unwrap();
        for i in 0..3 {
            assert!((dn[i].values() - dw[i].values()).amax() < 1e-12);
        }
        assert!((tractor_d(&f, 1.0, &u).values() - tractor_d_w(&f, 1.0, &u).unwrap().values()).amax() < 1e-12);
    }

    #[test]
    fn w_connection_deformation() {
        for seed in 0..4 {
            let (s, p) = random_smms(seed, 2.5);
            let f = s.frame(&p, 3).unwrap();
            let (m, n) = (f.m, 3.0);
            let a = random_field(&s.chart).eval(&f).unwrap();
            let dn = normal_connection(&f, &a).unwrap();
            let dw = w_connection(&f, &a).unwrap();
            let j = scale_tractor(&f);
            let dj = normal_connection(&f, &j).unwrap();
            let psi = defect_coefficient(&f, &j).value();
            let h = h_at(&f);
            let xv = TractorJet::x(&f).values();
            let coef = m / f.v.value() / (m + n - 2.0);
            for i in 0..3 {
                let mut z = DVector::zeros(5);
                z[1 + i] = 1.0;
                let left = dj[i].values() + z * psi;
                let deformation = wedge(&h, &left, &xv) * a.values() * coef;
                let r = (dw[i].values() - dn[i].values() - deformation).amax();
                assert!(r < 1e-10, "{r}");
            }
        }
    }

    #[test]
    fn w_d_relation() {
        for (seed, w) in [(0, 1.0), (1, -0.5), (2, 0.3)] {
            let (s, p) = random_smms(seed, 2.0);
            let f = s.frame(&p, 2).unwrap();
            let (m, n) = (f.m, 3.0);
            let sigma = f.geo.eval(&s.chart.parse("1 + 0.5*x1 - x2*x3").unwrap()).unwrap();
            let d = tractor_d(&f, w, &sigma);
            let dw = tractor_d_w(&f, w, &sigma).unwrap();
            let j = scale_tractor(&f);
            let corr = j.add(&TractorJet::x(&f).mul(&defect_coefficient(&f, &j)));
            let k = -m / f.v.value() * h_jet(&f, &d, &corr).value();
            let lhs = dw.values() * (n + 2.0 * w - 2.0) - d.values() * (m + n + 2.0 * w - 2.0);
            let rhs = TractorJet::x(&f).values() * k;
            let r = (lhs - rhs).amax();
            assert!(r < 1e-10, "{r}");
        }
    }

    #[test]
    fn weighted_scale_tractor_norm() {
        for seed in 0..4 {
            let (s, p) = random_smms(seed, 2.0);
            let f = s.frame(&p, 2).unwrap();
            let (m, n) = (f.m, 3.0);
            let ue = s.chart.parse("1.2 + 0.4*x2 - x1*x3").unwrap();
            let i = TractorField::weighted_scale_tractor(ue.clone(), m, 3).eval(&f).unwrap();
            let u = f.geo.eval(&ue).unwrap();
            let vi = 1.0 / f.v.value();
            let du = f.geo.grad(&u);
            let num = (f.weighted_scalar().value() + m * f.mu * vi * vi) * u.value().powi(2)
                + 2.0 * (m + n - 1.0) * u.value() * f.weighted_laplacian(&u).value()
                - (m + n) * (m + n - 1.0) * f.geo.inner_forms(&du, &du).value();
            let want = -num / ((m + n) * (m + n - 1.0));
            assert!((h_jet(&f, &i, &i).value() - want).abs() < 1e-10);
        }
    }

    #[test]
    fn adjoint_algebra() {
        let g = DMatrix::from_row_slice(3, 3, &[1.2, 0.1, 0.0, 0.1, 0.9, 0.2, 0.0, 0.2, 1.1]);
        let h = h_matrix(&g);
        let ginv = g.clone().try_inverse().unwrap();
        let b = make_sphere(3).unwrap();
        let f = b.smms.frame(&[0.2, 0.4, -0.1], 2).unwrap();
        let hs = h_at(&f);
        let i1 = b.tractor("I1").unwrap().eval(&f).unwrap().values();
        let i2 = b.tractor("I2").unwrap().eval(&f).unwrap().values();
        let a = wedge(&hs, &i1, &i2);
        assert!((&a * &i1 - &i2).amax() < 1e-12);
        assert!((adjoint_metric(&a, &a) - 1.0).abs() < 1e-12);
        assert!(bracket(&a, &a).amax() == 0.0);
        assert!(skew_residual(&hs, &a) < 1e-12);
        let u = DVector::from_vec(vec![0.3, 1.0, -0.2, 0.5, 0.7]);
        let v = DVector::from_vec(vec![-1.0, 0.2, 0.4, 0.1, 0.3]);
        let w = wedge(&h, &u, &v);
        assert!(skew_residual(&h, &w) < 1e-12);
        let xi = g1_matrix(&[0.3, -0.1, 0.7], &ginv);
        assert!(skew_residual(&h, &xi) < 1e-12);
        assert!(skew_residual(&h, &bracket(&w, &xi)) < 1e-12);
        // h(I1∧I2, J1∧J2) against the determinant formula.
        let hh = |x: &DVector<f64>, y: &DVector<f64>| x.dot(&(&h * y));
        let w2 = wedge(&h, &v, &xi.column(0).into_owned().add_scalar(0.4));
        let x2 = xi.column(0).into_owned().add_scalar(0.4);
        let det = hh(&u, &v) * hh(&v, &x2) - hh(&u, &x2) * hh(&v, &v);
        assert!((adjoint_metric(&w, &w2) - det).abs() < 1e-12);
    }

    #[test]
    fn codifferential_squares_to_zero() {
        use rand::Rng;
        let mut r = crate::sampling::rng(4);
        let g = DMatrix::from_row_slice(3, 3, &[1.2, 0.1, 0.0, 0.1, 0.9, 0.2, 0.0, 0.2, 1.1]);
        let ginv = g.try_inverse().unwrap();
        let mut phi = vec![vec![DVector::zeros(5); 3]; 3];
        for i in 0..3 {
            for j in (i + 1)..3 {
                let v = DVector::from_fn(5, |_, _| r.gen_range(-1.0..1.0));
                phi[j][i] = -&v;
                phi[i][j] = v;
            }
        }
        let once = partial_star_2(&phi, &ginv);
        assert!(partial_star_1(&once, &ginv).amax() < 1e-12);
    }

    #[test]
    fn curvature_block_matches_commutator() {
        for seed in 0..3 {
            let (s, p) = random_smms(seed, 2.0);
            let f = s.frame(&p, 3).unwrap();
            let h = h_at(&f);
            for kind in [ConnectionKind::Normal, ConnectionKind::W] {
                let a = curvature_block(&f, kind).unwrap();
                let b = curvature_commutator(&f, kind).unwrap();
                assert!(a[0][1].amax() > 1e-3);
                let r = curvature_residual(&a, &b);
                assert!(r < 1e-10, "{kind:?}: {r}");
                assert!(skew_residual(&h, &a[0][2]) < 1e-10);
            }
        }
    }

    #[test]
    fn curvature_vanishes_on_flat_models() {
        let f_s = make_flat_sphere(3, 2.0).unwrap();
        let f = f_s.smms.frame(&[0.4, -0.3, 0.2], 3).unwrap();
        let x = [1.0, 0.0, 0.0];
        let y = [0.0, 0.3, 1.0];
        assert!(curvature_w(&f, &x, &y).unwrap().matrix.amax() < 1e-10);
        let e = SmmsData::new(Arc::new(Chart::euclidean(3, 1.0)), "1", 0.0, 0.0).unwrap();
        let f = e.frame(&[0.1, 0.2, 0.3], 3).unwrap();
        assert!(curvature_w(&f, &x, &y).unwrap().matrix.amax() < 1e-14);
    }

    #[test]
    fn excluded_m_refused() {
        let c = sphere(3);
        let one = c.parse("1").unwrap();
        let s = SmmsData::new_unchecked(Arc::new(c), one, -3.0, 2.0, None);
        let f = s.frame(&[0.1, 0.2, 0.3], 2).unwrap();
        assert!(matches!(jtilde(&f), Err(Error::ExcludedDimension { .. })));
        assert!(matches!(tractor_d_w(&f, 1.0, &f.c(1.0)), Err(Error::ExcludedDimension { .. })));
        assert!(normal_connection(&f, &TractorJet::x(&f)).is_ok());
    }
}
