//! Smooth metric measure spaces `(M, g, v^m dvol)` and their weighted
//! curvature.

use crate::chart::Chart;
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::geometry::{exterior_d, Frame};
use crate::jet::Jet;
use crate::sampling::{sample_points, SampleSpec};
use crate::tensor::{
    insert, kulkarni_nomizu, normalized_residual, raise, trace2, JetTensor, Tensor, TensorValue,
};
use std::cell::OnceCell;
use std::sync::Arc;

/// An SMMS on a chart together with its characteristic constant `μ`.
///
/// `v` is a weight-1 density written in the chart's base scale; in the scale
/// `g = e^{2s} g_chart` it is represented by `e^s v`.
#[derive(Clone, Debug)]
pub struct SmmsData {
    pub chart: Arc<Chart>,
    pub v: Expr,
    pub m: f64,
    pub mu: f64,
    pub scale: Option<Expr>,
}

/// True when `m ∈ {−n, 1−n, 2−n}`.
pub fn is_excluded(m: f64, n: usize) -> bool {
    let n = n as f64;
    [-n, 1.0 - n, 2.0 - n].iter().any(|e| (m - e).abs() < 1e-12)
}

impl SmmsData {
    pub fn new(chart: Arc<Chart>, v: &str, m: f64, mu: f64) -> Result<SmmsData> {
        let v = chart.parse(v)?;
        let s = SmmsData { chart, v, m, mu, scale: None };
        s.require_admissible()?;
        Ok(s)
    }

    /// Builds the data without rejecting excluded values of `m`; tractor-level
    /// operations on the result still refuse to run.
    pub fn new_unchecked(chart: Arc<Chart>, v: Expr, m: f64, mu: f64, scale: Option<Expr>) -> SmmsData {
        SmmsData { chart, v, m, mu, scale }
    }

    pub fn with_scale(mut self, s: &str) -> Result<SmmsData> {
        self.scale = Some(self.chart.parse(s)?);
        Ok(self)
    }

    pub fn with_scale_expr(mut self, s: Option<Expr>) -> SmmsData {
        self.scale = s;
        self
    }

    pub fn dim(&self) -> usize {
        self.chart.dim()
    }

    pub fn require_admissible(&self) -> Result<()> {
        if is_excluded(self.m, self.dim()) {
            return Err(Error::ExcludedDimension { m: self.m, n: self.dim() });
        }
        Ok(())
    }

    /// Checks `v > 0` and metric positivity on a sample.
    pub fn validate(&self, spec: SampleSpec) -> Result<()> {
        for p in sample_points(&self.chart, spec)? {
            self.chart.metric_at(&p)?;
            let v = self.v.eval_f64(&p)?;
            if v <= 0.0 {
                return Err(Error::NonPositiveDensity { point: p, value: v });
            }
        }
        Ok(())
    }

    pub fn frame(&self, point: &[f64], order: usize) -> Result<SmmsFrame> {
        SmmsFrame::new(self, point, order)
    }
}

/// Jets of an SMMS at one point, with lazily computed weighted curvature.
pub struct SmmsFrame {
    pub geo: Frame,
    pub v: Jet,
    pub m: f64,
    pub mu: f64,
    pub scale_expr: Option<Expr>,
    n: usize,
    dv: OnceCell<Vec<Jet>>,
    hess_v: OnceCell<JetTensor>,
    p_w: OnceCell<JetTensor>,
    j_w: OnceCell<Jet>,
    ric_be: OnceCell<JetTensor>,
    r_w: OnceCell<Jet>,
    y: OnceCell<Jet>,
    ytilde: OnceCell<Jet>,
}

impl SmmsFrame {
    pub fn new(smms: &SmmsData, point: &[f64], order: usize) -> Result<SmmsFrame> {
        let geo = Frame::new(&smms.chart, smms.scale.as_ref(), point, order)?;
        let mut v = geo.eval(&smms.v)?;
        if let Some(s) = geo.scale() {
            v = v.mul(&s.exp());
        }
        if v.value() <= 0.0 {
            return Err(Error::NonPositiveDensity { point: point.to_vec(), value: v.value() });
        }
        let n = geo.dim();
        Ok(SmmsFrame {
            geo,
            v,
            m: smms.m,
            mu: smms.mu,
            scale_expr: smms.scale.clone(),
            n,
            dv: OnceCell::new(),
            hess_v: OnceCell::new(),
            p_w: OnceCell::new(),
            j_w: OnceCell::new(),
            ric_be: OnceCell::new(),
            r_w: OnceCell::new(),
            y: OnceCell::new(),
            ytilde: OnceCell::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    fn nf(&self) -> f64 {
        self.n as f64
    }

    pub fn c(&self, x: f64) -> Jet {
        self.geo.constant(x)
    }

    pub fn dv(&self) -> &Vec<Jet> {
        self.dv.get_or_init(|| self.geo.grad(&self.v))
    }

    pub fn grad_v(&self) -> Vec<Jet> {
        raise(self.dv(), &self.geo.ginv)
    }

    pub fn hess_v(&self) -> &JetTensor {
        self.hess_v.get_or_init(|| self.geo.hessian(&self.v))
    }

    pub fn lap_v(&self) -> Jet {
        trace2(self.hess_v(), &self.geo.ginv)
    }

    pub fn v_inv(&self) -> Jet {
        self.v.recip()
    }

    /// `∇φ` as a covector, with `φ = −m log v`.
    pub fn dphi(&self) -> Vec<Jet> {
        if self.m == 0.0 {
            return self.dv().iter().map(Jet::zero_like).collect();
        }
        let k = self.v_inv().scale(-self.m);
        self.dv().iter().map(|d| d.mul(&k)).collect()
    }

    /// `Δ_φ u = Δu − ⟨∇u, ∇φ⟩`.
    pub fn weighted_laplacian(&self, u: &Jet) -> Jet {
        let lap = self.geo.laplacian(u);
        if self.m == 0.0 {
            return lap;
        }
        lap.sub(&self.geo.inner_forms(&self.geo.grad(u), &self.dphi()))
    }

    /// `δ_φ T = δT + m v⁻¹ T(…, ∇v, …)` contracting `slot`.
    pub fn weighted_divergence(&self, t: &JetTensor, slot: usize) -> JetTensor {
        let d = self.geo.divergence(t, slot);
        if self.m == 0.0 {
            return d;
        }
        let k = self.v_inv().scale(self.m);
        let gv: Vec<Jet> = self.grad_v().iter().map(|x| x.mul(&k)).collect();
        d.add(&insert(t, slot, &gv))
    }

    /// `δ_φ α` for a covector `α`.
    pub fn weighted_div_form(&self, alpha: &[Jet]) -> Jet {
        let t = Tensor::lower(self.n, 1, |ix| alpha[ix[0]].clone());
        self.weighted_divergence(&t, 0).data[0].clone()
    }

    /// `Ric_φ^m = Ric − m v⁻¹ ∇²v`.
    pub fn bakry_emery(&self) -> &JetTensor {
        self.ric_be.get_or_init(|| {
            let ric = self.geo.ricci();
            if self.m == 0.0 {
                return ric.clone();
            }
            ric.sub(&self.hess_v().scale(&self.v_inv().scale(self.m)))
        })
    }

    /// `R_φ^m = R − 2m v⁻¹Δv − m(m−1) v⁻²|∇v|²`.
    pub fn weighted_scalar(&self) -> &Jet {
        self.r_w.get_or_init(|| {
            let r = self.geo.scalar_curvature().clone();
            if self.m == 0.0 {
                return r;
            }
            let vi = self.v_inv();
            let grad2 = self.geo.inner_forms(self.dv(), self.dv());
            r.sub(&self.lap_v().mul(&vi).scale(2.0 * self.m))
                .sub(&grad2.mul(&vi).mul(&vi).scale(self.m * (self.m - 1.0)))
        })
    }

    /// `J^W = (R_φ^m + mμv⁻²) / (2(m+n−1))`.
    pub fn j_w(&self) -> &Jet {
        self.j_w.get_or_init(|| {
            let vi = self.v_inv();
            let mu_term = vi.mul(&vi).scale(self.m * self.mu);
            self.weighted_scalar()
                .add(&mu_term)
                .scale(1.0 / (2.0 * (self.m + self.nf() - 1.0)))
        })
    }

    /// `P^W = (Ric_φ^m − J^W g) / (m+n−2)`.
    pub fn p_w(&self) -> &JetTensor {
        self.p_w.get_or_init(|| {
            self.bakry_emery()
                .sub(&self.geo.g.scale(self.j_w()))
                .scale(&self.c(1.0 / (self.m + self.nf() - 2.0)))
        })
    }

    /// `y = −(Δv + J v)/n`, the bottom slot of `J = (1/n) D v`.
    pub fn y(&self) -> &Jet {
        self.y.get_or_init(|| {
            self.lap_v()
                .add(&self.geo.schouten_trace().mul(&self.v))
                .scale(-1.0 / self.nf())
        })
    }

    /// `|J|² = 2vy + |∇v|²`.
    pub fn j_norm2(&self) -> Jet {
        self.v.mul(self.y()).scale(2.0).add(&self.geo.inner_forms(self.dv(), self.dv()))
    }

    /// `μ − (m−1)|J|²`.
    pub fn flat_defect(&self) -> Jet {
        self.j_norm2().scale(-(self.m - 1.0)).add_scalar(self.mu)
    }

    /// `ỹ = y + (m+2n−2)(μ−(m−1)|J|²) / (2(m+n−1)(m+n−2)v)`.
    pub fn ytilde(&self) -> &Jet {
        self.ytilde.get_or_init(|| {
            let (m, n) = (self.m, self.nf());
            let k = (m + 2.0 * n - 2.0) / (2.0 * (m + n - 1.0) * (m + n - 2.0));
            self.y().add(&self.flat_defect().mul(&self.v_inv()).scale(k))
        })
    }

    /// `A^W = Rm − P^W∧g`.
    pub fn a_w(&self) -> JetTensor {
        self.geo.riemann().sub(&kulkarni_nomizu(self.p_w(), &self.geo.g))
    }

    /// `dP^W(x,y,z) = ∇_x P^W(y,z) − ∇_y P^W(x,z)`.
    pub fn dp_w(&self) -> JetTensor {
        exterior_d(&self.geo.nabla(self.p_w()))
    }

    /// `vP^W + ∇²v + ỹ g`.
    pub fn q_tilde(&self) -> JetTensor {
        self.p_w()
            .scale(&self.v)
            .add(self.hess_v())
            .add(&self.geo.g.scale(self.ytilde()))
    }
}

/// Pointwise `(Ric_φ^m, R_φ^m)`.
pub fn bakry_emery(smms: &SmmsData, point: &[f64]) -> Result<TensorValue> {
    Ok(smms.frame(point, 2)?.bakry_emery().values())
}

pub fn weighted_scalar(smms: &SmmsData, point: &[f64]) -> Result<f64> {
    Ok(smms.frame(point, 2)?.weighted_scalar().value())
}

/// Weighted Schouten data at a point.
#[derive(Clone, Debug)]
pub struct WeightedSchouten {
    pub p_w: TensorValue,
    pub j_w: f64,
    pub y: f64,
    pub ytilde: f64,
}

pub fn weighted_schouten(smms: &SmmsData, point: &[f64]) -> Result<WeightedSchouten> {
    smms.require_admissible()?;
    let f = smms.frame(point, 2)?;
    Ok(WeightedSchouten {
        p_w: f.p_w().values(),
        j_w: f.j_w().value(),
        y: f.y().value(),
        ytilde: f.ytilde().value(),
    })
}

pub fn weighted_weyl(smms: &SmmsData, point: &[f64]) -> Result<TensorValue> {
    smms.require_admissible()?;
    Ok(smms.frame(point, 2)?.a_w().values())
}

/// `Δ_φ u` for a chart expression `u`, treated as a weight-0 function.
pub fn weighted_laplacian(smms: &SmmsData, u: &Expr, point: &[f64]) -> Result<f64> {
    let f = smms.frame(point, 2)?;
    Ok(f.weighted_laplacian(&f.geo.eval(u)?).value())
}

/// `δ_φ α` for a 1-form with chart-expression components.
pub fn weighted_divergence(smms: &SmmsData, alpha: &[Expr], point: &[f64]) -> Result<f64> {
    let f = smms.frame(point, 1)?;
    let a: Vec<Jet> = alpha.iter().map(|e| f.geo.eval(e)).collect::<Result<_>>()?;
    Ok(f.weighted_div_form(&a).value())
}

/// Evaluates a weight-1 density given in base scale within a frame's scale.
pub fn density_in_scale(f: &Frame, e: &Expr) -> Result<Jet> {
    let mut u = f.eval(e)?;
    if let Some(s) = f.scale() {
        u = u.mul(&s.exp());
    }
    Ok(u)
}

/// Formula and direct values of the transformed curvature under
/// `(g, v) ↦ (u⁻²g, u⁻¹v)`.
#[derive(Clone, Debug)]
pub struct ConformalTransform {
    pub ric_formula: TensorValue,
    pub ric_direct: TensorValue,
    pub scalar_formula: f64,
    pub scalar_direct: f64,
    pub transformed: SmmsData,
}

impl ConformalTransform {
    pub fn residual(&self) -> f64 {
        normalized_residual(&self.ric_formula.data, &self.ric_direct.data).max(normalized_residual(
            &[self.scalar_formula],
            &[self.scalar_direct],
        ))
    }
}

/// The same SMMS written in the scale `u⁻² g`.
pub fn rescaled_by(smms: &SmmsData, u: &Expr) -> Result<SmmsData> {
    let s = smms.chart.parse(&format!("-log({})", u.source()))?;
    Ok(SmmsData { scale: Some(s), ..smms.clone() })
}

pub fn conformal_transform(smms: &SmmsData, u: &Expr, point: &[f64]) -> Result<ConformalTransform> {
    let f = smms.frame(point, 2)?;
    let uj = density_in_scale(&f.geo, u)?;
    if uj.value() <= 0.0 {
        return Err(Error::Invalid(format!("u is not positive at {point:?}")));
    }
    let (m, n) = (f.m, f.nf());
    let ui = uj.recip();
    let du = f.geo.grad(&uj);
    let grad2 = f.geo.inner_forms(&du, &du);
    let lap_phi = f.weighted_laplacian(&uj);
    let ric = f
        .bakry_emery()
        .add(&f.geo.hessian(&uj).scale(&ui.scale(m + n - 2.0)))
        .add(&f.geo.g.scale(&lap_phi.mul(&ui).sub(&grad2.mul(&ui).mul(&ui).scale(m + n - 1.0))));
    let scalar_rhs = f
        .weighted_scalar()
        .add(&lap_phi.mul(&ui).scale(2.0 * (m + n - 1.0)))
        .sub(&grad2.mul(&ui).mul(&ui).scale((m + n) * (m + n - 1.0)));
    // The right-hand side equals u⁻²R̂ with R̂ taken in the new scale.
    let scalar_formula = scalar_rhs.value() * uj.value() * uj.value();

    let transformed = rescaled_by(smms, u)?;
    let g = transformed.frame(point, 2)?;
    Ok(ConformalTransform {
        ric_formula: ric.values(),
        ric_direct: g.bakry_emery().values(),
        scalar_formula,
        scalar_direct: g.weighted_scalar().value(),
        transformed,
    })
}

/// Residuals of the conformally quasi-Einstein system.
#[derive(Clone, Debug, Default)]
pub struct QeResiduals {
    pub res_tf: f64,
    pub res_lambda: f64,
    pub res_mu: f64,
    pub worst_point: Vec<f64>,
}

impl QeResiduals {
    pub fn max(&self) -> f64 {
        self.res_tf.max(self.res_lambda).max(self.res_mu)
    }
}

/// Raw residuals of the three equations at one point; `u` is a weight-1
/// density.
pub fn qe_residuals_at(smms: &SmmsData, u: &Expr, lambda: f64, point: &[f64]) -> Result<[f64; 3]> {
    let f = smms.frame(point, 2)?;
    let uj = density_in_scale(&f.geo, u)?;
    qe_residuals_frame(&f, &uj, lambda)
}

pub fn qe_residuals_frame(f: &SmmsFrame, u: &Jet, lambda: f64) -> Result<[f64; 3]> {
    let (m, n, mu) = (f.m, f.nf(), f.mu);
    let g = &f.geo;
    let v = &f.v;
    let (uv, vv) = (u.value(), v.value());
    let ric = g.ricci().values();
    let hu = g.hessian(u).values();
    let hv = f.hess_v().values();
    let gv = g.g.values();
    let giv = g.ginv.values();
    let nn = f.n * f.n;
    let terms = [
        ric.data.iter().map(|r| uv * vv * r).collect::<Vec<_>>(),
        hu.data.iter().map(|h| (m + n - 2.0) * vv * h).collect(),
        hv.data.iter().map(|h| -m * uv * h).collect(),
    ];
    let total: Vec<f64> = (0..nn).map(|i| terms.iter().map(|t| t[i]).sum()).collect();
    let tr: f64 = (0..nn).map(|i| giv.data[i] * total[i]).sum();
    let tf: Vec<f64> = (0..nn).map(|i| total[i] - tr / n * gv.data[i]).collect();
    let res_tf = tf.iter().fold(0.0f64, |a, x| a.max(x.abs()));

    let r = g.scalar_curvature().value();
    let lu = g.laplacian(u).value();
    let lv = f.lap_v().value();
    let du = g.grad(u);
    let gu2 = g.inner_forms(&du, &du).value();
    let guv = g.inner_forms(&du, f.dv()).value();
    let gv2 = g.inner_forms(f.dv(), f.dv()).value();

    let lam_terms = [
        -n * lambda * vv * vv,
        uv * uv * vv * vv * r,
        (m + 2.0 * n - 2.0) * uv * vv * vv * lu,
        -m * uv * uv * vv * lv,
        -(m + n - 1.0) * n * vv * vv * gu2,
        m * n * uv * vv * guv,
    ];
    let mu_terms = [
        -n * mu * uv * uv,
        uv * uv * vv * vv * r,
        (m + n - 2.0) * uv * vv * vv * lu,
        -(m - n) * uv * uv * vv * lv,
        -(m + n - 2.0) * n * uv * vv * guv,
        n * (m - 1.0) * uv * uv * gv2,
    ];
    let res = |t: &[f64]| t.iter().sum::<f64>().abs();
    Ok([res_tf, res(&lam_terms), res(&mu_terms)])
}

pub fn qe_residuals(smms: &SmmsData, u: &Expr, lambda: f64, spec: SampleSpec) -> Result<QeResiduals> {
    let mut out = QeResiduals::default();
    let mut worst = -1.0;
    for p in sample_points(&smms.chart, spec)? {
        let [a, b, c] = qe_residuals_at(smms, u, lambda, &p)?;
        out.res_tf = out.res_tf.max(a);
        out.res_lambda = out.res_lambda.max(b);
        out.res_mu = out.res_mu.max(c);
        if a.max(b).max(c) > worst {
            worst = a.max(b).max(c);
            out.worst_point = p;
        }
    }
    Ok(out)
}

/// The dual configuration under `(u,v,m,λ,μ) ↦ (v,u,2−m−n,μ,λ)`.
#[derive(Clone, Debug)]
pub struct Dual {
    pub smms: SmmsData,
    /// The density `v` of the original, now playing the role of the scale.
    pub scale_density: Expr,
    /// The quasi-Einstein constant of the dual, equal to the original `μ`.
    pub lambda: f64,
    /// Set when the dual `m` lies in the excluded set; the quasi-Einstein
    /// system still makes sense but tractor operations will refuse the data.
    pub excluded: Option<Error>,
}

pub fn duality_map(smms: &SmmsData, u: &Expr, lambda: f64) -> Dual {
    let n = smms.dim();
    let m_dual = 2.0 - smms.m - n as f64;
    let dual = SmmsData::new_unchecked(smms.chart.clone(), u.clone(), m_dual, lambda, smms.scale.clone());
    let excluded = dual.require_admissible().err();
    Dual { smms: dual, scale_density: smms.v.clone(), lambda: smms.mu, excluded }
}

/// `L₂σ = −Δ_φσ + ((m+n−2)/2) J^W σ`.
pub fn conformal_laplacian(f: &SmmsFrame, sigma: &Jet) -> Jet {
    let k = (f.m + f.nf() - 2.0) / 2.0;
    f.weighted_laplacian(sigma).neg().add(&f.j_w().mul(sigma).scale(k))
}

/// The weighted Paneitz-type operator
/// `L₄ = Δ_φ² + δ_φ(4P^W − (m+n−2)J^W g)(∇σ) + ((m+n−4)/2)Q` with
/// `Q = −Δ_φJ^W − 2|P^W|² − 2mv⁻²ỹ² + ((m+n)/2)(J^W)²`.
pub fn paneitz(f: &SmmsFrame, sigma: &Jet) -> Jet {
    let (m, n) = (f.m, f.nf());
    let g = &f.geo;
    let lap = f.weighted_laplacian(sigma);
    let lap2 = f.weighted_laplacian(&lap);
    let ds = g.grad(sigma);
    let ginv = &g.ginv;
    let pw = f.p_w();
    let jw = f.j_w();
    let ds_up = raise(&ds, ginv);
    let nn = f.n;
    let middle: Vec<Jet> = (0..nn)
        .map(|i| {
            let mut acc = ds[i].mul(jw).scale(-(m + n - 2.0));
            for j in 0..nn {
                acc.fma_assign(&pw.data[i * nn + j].scale(4.0), &ds_up[j]);
            }
            acc
        })
        .collect();
    let div = f.weighted_div_form(&middle);
    let pw_up = Tensor::lower(nn, 2, |ix| {
        let mut acc = pw.data[0].zero_like();
        for a in 0..nn {
            for b in 0..nn {
                acc.fma_assign(&ginv.data[ix[0] * nn + a], &ginv.data[ix[1] * nn + b].mul(&pw.data[a * nn + b]));
            }
        }
        acc
    });
    let pw2 = crate::jet::dot(&pw.data, &pw_up.data);
    let vi = f.v_inv();
    let yt = f.ytilde();
    let q = f
        .weighted_laplacian(jw)
        .neg()
        .sub(&pw2.scale(2.0))
        .sub(&yt.mul(yt).mul(&vi).mul(&vi).scale(2.0 * m))
        .add(&jw.mul(jw).scale((m + n) / 2.0));
    lap2.add(&div).add(&q.mul(sigma).scale((m + n - 4.0) / 2.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chart::Chart;
    use crate::test_support::sphere;

    fn euclid() -> Arc<Chart> {
        Arc::new(Chart::euclidean(3, 1.5))
    }

    #[test]
    fn weighted_laplacian_oracle() {
        let s = SmmsData::new(euclid(), "x1 + 2", 2.0, 0.0).unwrap();
        let u = s.chart.parse("x1").unwrap();
        assert!((weighted_laplacian(&s, &u, &[0.0, 0.0, 0.0]).unwrap() - 1.0).abs() < 1e-14);
        let alpha = vec![s.chart.parse("1").unwrap(), s.chart.parse("0").unwrap(), s.chart.parse("0").unwrap()];
        assert!((weighted_divergence(&s, &alpha, &[0.0, 0.0, 0.0]).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn weighted_scalar_oracle() {
        let s = SmmsData::new(euclid(), "x1 + 2", 2.0, 0.0).unwrap();
        assert!((weighted_scalar(&s, &[0.0; 3]).unwrap() + 0.5).abs() < 1e-14);
    }

    #[test]
    fn bakry_emery_forms_agree() {
        let c = Arc::new(sphere(3));
        let s = SmmsData::new(c, "1 + 0.3*x1 + 0.1*x2*x3", 3.0, 0.0).unwrap();
        let p = [0.2, -0.4, 0.3];
        let f = s.frame(&p, 2).unwrap();
        let phi = f.v.ln().scale(-f.m);
        let dphi = f.geo.grad(&phi);
        let h = f.geo.hessian(&phi);
        let phi_form = Tensor::lower(3, 2, |ix| {
            f.geo.ricci().at(ix).add(h.at(ix)).sub(&dphi[ix[0]].mul(&dphi[ix[1]]).scale(1.0 / f.m)).value()
        })
        .data;
        assert!(normalized_residual(&f.bakry_emery().values().data, &phi_form) < 1e-12);
    }

    #[test]
    fn flat_sphere_weighted_schouten() {
        let c = Arc::new(sphere(3));
        let s = SmmsData::new(c.clone(), "1", 2.0, -1.0).unwrap();
        let p = [0.5, 0.1, -0.7];
        let w = weighted_schouten(&s, &p).unwrap();
        assert!((w.j_w - 0.5).abs() < 1e-12);
        let g = c.metric_at(&p).unwrap();
        let half: Vec<f64> = (0..9).map(|i| 0.5 * g[(i / 3, i % 3)]).collect();
        assert!(normalized_residual(&w.p_w.data, &half) < 1e-12);
        assert!(weighted_weyl(&s, &p).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn excluded_m_rejected() {
        let err = SmmsData::new(Arc::new(sphere(3)), "1", -3.0, 0.0).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("{-n, 1-n, 2-n}"), "{msg}");
        assert!(msg.contains("-3"), "{msg}");
    }

    #[test]
    fn conformal_transform_matches_direct() {
        let c = Arc::new(sphere(3));
        let s = SmmsData::new(c.clone(), "1 + 0.2*x2", 2.0, 0.4).unwrap();
        let u = c.parse("2 + 0.3*x1 - 0.1*x2*x3").unwrap();
        let t = conformal_transform(&s, &u, &[0.3, 0.1, -0.2]).unwrap();
        assert!(t.residual() < 1e-10, "{}", t.residual());
    }

    #[test]
    fn round_sphere_qe_data() {
        let c = Arc::new(sphere(3));
        let s = SmmsData::new(c.clone(), "1", 2.0, 2.0).unwrap();
        let u = c.parse("1").unwrap();
        let r = qe_residuals(&s, &u, 2.0, SampleSpec::new(10, 1)).unwrap();
        assert!(r.max() < 1e-12);
    }

    #[test]
    fn ricci_flat_scale_on_sphere() {
        let c = Arc::new(sphere(3));
        let s = SmmsData::new(c.clone(), "1", 0.0, 0.0).unwrap();
        let u = c.parse("1 + 2*x1/(1 + x1^2 + x2^2 + x3^2)").unwrap();
        let r = qe_residuals(&s, &u, 0.0, SampleSpec::new(20, 3)).unwrap();
        assert!(r.res_tf < 1e-12 && r.res_lambda < 1e-12, "{r:?}");
    }

    #[test]
    fn duality_is_an_involution() {
        let c = Arc::new(sphere(3));
        let s = SmmsData::new(c.clone(), "1", 2.0, 2.0).unwrap();
        let u = c.parse("1").unwrap();
        let d = duality_map(&s, &u, 2.0);
        assert_eq!(d.smms.m, -3.0);
        assert!(d.excluded.is_some());
        let back = duality_map(&d.smms, &d.scale_density, d.lambda);
        assert_eq!(back.smms.m, 2.0);
        assert_eq!(back.smms.mu, 2.0);
        assert_eq!(back.lambda, 2.0);
        assert_eq!(back.smms.v, s.v);
        assert_eq!(back.scale_density, u);
    }

    fn random_config(seed: u64) -> (SmmsData, Vec<f64>) {
        use rand::Rng;
        let mut r = crate::sampling::rng(seed);
        let mut k = || r.gen_range(-0.3..0.3);
        let v = format!("1.5 + {}*x1 + {}*x2*x3 + {}*x3^2", k(), k(), k());
        let mu = 3.0 * k();
        let p = vec![k(), k(), k()];
        (SmmsData::new(Arc::new(sphere(3)), &v, 3.0, mu).unwrap(), p)
    }

    #[test]
    fn trace_identities() {
        for seed in 0..5 {
            let (s, p) = random_config(seed);
            let f = s.frame(&p, 2).unwrap();
            let (m, n) = (f.m, 3.0);
            let tr_p = trace2(f.p_w(), &f.geo.ginv).value();
            let vi = 1.0 / f.v.value();
            let defect = f.flat_defect().value();
            let expect = f.geo.schouten_trace().value()
                - m * n * defect * vi * vi / (2.0 * (m + n - 1.0) * (m + n - 2.0));
            assert!((tr_p - expect).abs() < 1e-10, "{tr_p} {expect}");
            assert!((f.j_w().value() - m * vi * f.ytilde().value() - tr_p).abs() < 1e-10);
            let lemma = f.geo.schouten_trace().value()
                + m * vi * (f.y().value() + defect * vi / (2.0 * (m + n - 1.0)));
            assert!((f.j_w().value() - lemma).abs() < 1e-10);
            let tr_a = crate::tensor::trace02(&f.a_w(), &f.geo.ginv).values();
            let q = f.q_tilde().values();
            let rhs: Vec<f64> = q.data.iter().map(|x| m * vi * x).collect();
            assert!(normalized_residual(&tr_a.data, &rhs) < 1e-10);
        }
    }

    #[test]
    fn m_zero_reduces_to_riemannian() {
        let s = SmmsData::new(Arc::new(sphere(3)), "2 + x1", 0.0, 0.7).unwrap();
        let f = s.frame(&[0.1, 0.4, -0.2], 2).unwrap();
        assert!(normalized_residual(&f.p_w().values().data, &f.geo.schouten().values().data) < 1e-12);
        assert!((f.j_w().value() - f.geo.schouten_trace().value()).abs() < 1e-12);
        assert!(normalized_residual(&f.a_w().values().data, &f.geo.weyl().values().data) < 1e-12);
    }

    #[test]
    fn weighted_scalar_is_not_trace() {
        let (s, p) = random_config(11);
        let f = s.frame(&p, 2).unwrap();
        let tr = trace2(f.bakry_emery(), &f.geo.ginv).value();
        assert!((tr - f.weighted_scalar().value()).abs() > 1e-3);
    }

    #[test]
    fn constant_rescale_keeps_bakry_emery() {
        let (s, p) = random_config(4);
        let u = s.chart.parse("3").unwrap();
        let t = conformal_transform(&s, &u, &p).unwrap();
        let f = s.frame(&p, 2).unwrap();
        assert!(normalized_residual(&t.ric_direct.data, &f.bakry_emery().values().data) < 1e-12);
        assert!(t.residual() < 1e-10);
    }

    #[test]
    fn weighted_divergence_is_adjoint() {
        let c = Arc::new(Chart::conformally_flat("c", &["x1", "x2"], "1 + 0.2*x1^2", "1", &[(-1.0, 1.0); 2]).unwrap());
        let s = SmmsData::new(c.clone(), "2 + x1 + 0.5*x2", 2.0, 0.0).unwrap();
        let u = c.parse("sin(x1) + x2^2").unwrap();
        let bump = "(1 - x1^2)^3*(1 - x2^2)^3";
        let alpha = [c.parse(&format!("{bump}*x2")).unwrap(), c.parse(&format!("{bump}*(1 + x1)")).unwrap()];
        let k = 128;
        let h = 2.0 / k as f64;
        let mut total = 0.0;
        let mut scale = 0.0;
        for i in 0..k {
            for j in 0..k {
                let p = [-1.0 + (i as f64 + 0.5) * h, -1.0 + (j as f64 + 0.5) * h];
                let f = s.frame(&p, 1).unwrap();
                let a: Vec<Jet> = alpha.iter().map(|e| f.geo.eval(e).unwrap()).collect();
                let uj = f.geo.eval(&u).unwrap();
                let vol = f.v.value().powi(2) * (1.0 + 0.2 * p[0] * p[0]) * h * h;
                let pair = f.geo.inner_forms(&a, &f.geo.grad(&uj)).value();
                let div = f.weighted_div_form(&a).value() * uj.value();
                total += (pair + div) * vol;
                scale += pair.abs() * vol;
            }
        }
        assert!(total.abs() / scale < 1e-4, "{total} {scale}");
    }

    #[test]
    fn qe_constant_relation() {
        for (v, m, mu, lambda) in [("1", 2.0, 2.0, 2.0)] {
            let s = SmmsData::new(Arc::new(sphere(3)), v, m, mu).unwrap();
            for p in sample_points(&s.chart, SampleSpec::new(8, 2)).unwrap() {
                let f = s.frame(&p, 2).unwrap();
                let vi = 1.0 / f.v.value();
                let q = f.weighted_scalar().value() + m * mu * vi * vi - (m + 3.0) * lambda;
                assert!(q.abs() < 1e-10);
            }
        }
    }

    fn covariance_residual(order: usize, weight: f64) -> f64 {
        let c = Arc::new(sphere(3));
        let base = SmmsData::new(c.clone(), "1.2 + 0.3*x1 - 0.2*x2*x3", 2.0, 0.6).unwrap();
        let s = "0.3*x1 - 0.2*x2^2 + 0.1*x3";
        let moved = base.clone().with_scale(s).unwrap();
        let sigma = c.parse("1 + 0.4*x2 + 0.2*x1*x3").unwrap();
        let p = [0.2, -0.1, 0.3];
        let apply = |f: &SmmsFrame, sig: &Jet| if order == 2 { conformal_laplacian(f, sig) } else { paneitz(f, sig) };
        let f0 = base.frame(&p, order).unwrap();
        let old = apply(&f0, &f0.geo.eval(&sigma).unwrap()).value();
        let f1 = moved.frame(&p, order).unwrap();
        let sj = f1.geo.scale().unwrap().clone();
        let sig1 = f1.geo.eval(&sigma).unwrap().mul(&sj.scale(weight).exp());
        let new = apply(&f1, &sig1).value();
        let target = (weight - order as f64) * sj.value();
        (new - target.exp() * old).abs() / (1.0 + old.abs())
    }

    #[test]
    fn conformal_laplacian_covariant() {
        assert!(covariance_residual(2, -(2.0 + 3.0 - 2.0) / 2.0) < 1e-10);
    }

    #[test]
    fn paneitz_covariant() {
        let r = covariance_residual(4, -(2.0 + 3.0 - 4.0) / 2.0);
        assert!(r < 1e-9, "{r}");
    }

    #[test]
    fn sphere_conformal_laplacian_of_one() {
        let s = SmmsData::new(Arc::new(sphere(3)), "1", 0.0, 0.0).unwrap();
        let f = s.frame(&[0.3, 0.2, 0.1], 2).unwrap();
        assert!((conformal_laplacian(&f, &f.c(1.0)).value() - 0.75).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn lambda_scales_quadratically(c in 0.2f64..5.0, x in -0.8f64..0.8, y in -0.8f64..0.8) {
                let ch = Arc::new(sphere(3));
                let s = SmmsData::new(ch.clone(), "1", 2.0, 2.0).unwrap();
                let u = ch.parse(&format!("{c}")).unwrap();
                let r = qe_residuals_at(&s, &u, 2.0 * c * c, &[x, y, 0.1]).unwrap();
                prop_assert!(r.iter().all(|x| *x < 1e-8 * (1.0 + c * c)));
            }

            #[test]
            fn trace_of_weighted_schouten(seed in 0u64..1000) {
                let (s, p) = random_config(seed);
                let f = s.frame(&p, 2).unwrap();
                let tr_p = trace2(f.p_w(), &f.geo.ginv).value();
                prop_assert!((f.j_w().value() - f.m / f.v.value() * f.ytilde().value() - tr_p).abs() < 1e-8);
            }

            #[test]
            fn conformal_transform_agrees(seed in 0u64..1000, a in -0.3f64..0.3, b in -0.3f64..0.3) {
                let (s, p) = random_config(seed);
                let u = s.chart.parse(&format!("2 + {a}*x1 + {b}*x2*x3")).unwrap();
                prop_assert!(conformal_transform(&s, &u, &p).unwrap().residual() < 1e-7);
            }
        }
    }
}
