//! Named pointwise identities between weighted curvature quantities and the
//! W-tractor calculus.
//!
//! Each check evaluates a left side from the definitions and a right side
//! from a closed formula, at sampled points, and reports the worst residual
//! `|lhs − rhs|∞ / (1 + max |term|)`.

use crate::error::{Error, Result};
use crate::jet::Jet;
use crate::sampling::{rng, sample_points, SampleSpec};
use crate::smms::{SmmsData, SmmsFrame};
use crate::tensor::{
    insert, kulkarni_nomizu, normalized_residual, trace02, trace2, wedge_form_tensor, wedge_forms, JetTensor, Tensor,
};
use crate::tractor::{
    curvature_commutator, density_jet, ginv_at, h_at, h_jet, jtilde, partial_star_1,
    partial_star_2, partial_star_2_adjoint, tractor_d_w, w_connection, wedge, ConnectionKind, TractorField,
    TractorJet,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const IDENTITY_NAMES: [&str; 11] = [
    "lemma_J",
    "lemma_P",
    "lemma_dP",
    "lemma_trA",
    "lemma_divA",
    "lemma_divdP",
    "lemma_algebra",
    "lemma_traceT",
    "bgg_conn",
    "bgg_curv",
    "partial_star_curv",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub name: String,
    pub points_sampled: usize,
    pub max_residual: f64,
    pub worst_point: Vec<f64>,
}

fn derivative_order(name: &str) -> Option<usize> {
    Some(match name {
        "lemma_J" | "lemma_P" | "lemma_trA" => 2,
        "lemma_dP" | "lemma_divA" | "lemma_traceT" | "bgg_conn" | "bgg_curv" | "partial_star_curv" => 3,
        "lemma_divdP" | "lemma_algebra" => 4,
        _ => return None,
    })
}

/// The probe tractor used by identities that act on an arbitrary `I`:
/// `D^W` of a seeded cubic density plus a seeded constant tractor.
pub fn probe_tractor(smms: &SmmsData, seed: u64) -> Result<TractorField> {
    let mut r = rng(seed ^ 0x9e37_79b9);
    let mut k = || r.gen_range(-0.5..0.5);
    let x = smms.chart.coords();
    let n = x.len();
    let mut u = format!("1 + {}", k());
    for a in 0..n {
        u += &format!(" + {}*{}", k(), x[a]);
        u += &format!(" + {}*{}*{}", k(), x[a], x[(a + 1) % n]);
        u += &format!(" + {}*{}^3", k(), x[a]);
    }
    let c = |v: f64| smms.chart.parse(&format!("{v}"));
    let constant = TractorField::Components {
        sigma: c(k())?,
        omega: (0..n).map(|_| c(k())).collect::<Result<_>>()?,
        rho: c(k())?,
        weight: 0.0,
    };
    Ok(TractorField::Combination(vec![
        (1.0, TractorField::DW { weight: 1.0, density: smms.chart.parse(&u)? }),
        (1.0, constant),
    ]))
}

/// Residual of one identity at one point.
pub fn identity_residual_at(smms: &SmmsData, name: &str, probe: &TractorField, point: &[f64]) -> Result<f64> {
    let order = derivative_order(name).ok_or_else(|| unknown(name))?;
    let f = smms.frame(point, order)?;
    let (lhs, rhs) = sides(&f, name, probe)?;
    Ok(normalized_residual(&lhs, &rhs))
}

fn unknown(name: &str) -> Error {
    Error::Invalid(format!("unknown identity '{name}'; known: {}", IDENTITY_NAMES.join(", ")))
}

pub fn check_identity(smms: &SmmsData, name: &str, spec: SampleSpec) -> Result<IdentityReport> {
    derivative_order(name).ok_or_else(|| unknown(name))?;
    smms.require_admissible()?;
    let probe = probe_tractor(smms, spec.seed)?;
    let points = sample_points(&smms.chart, spec)?;
    let res: Vec<f64> = points
        .par_iter()
        .map(|p| identity_residual_at(smms, name, &probe, p))
        .collect::<Result<_>>()?;
    let (worst, max) = res
        .iter()
        .enumerate()
        .fold((0, 0.0f64), |(bi, bv), (i, &r)| if r > bv { (i, r) } else { (bi, bv) });
    Ok(IdentityReport {
        name: name.to_string(),
        points_sampled: points.len(),
        max_residual: max,
        worst_point: points.get(worst).cloned().unwrap_or_default(),
    })
}

/// Runs every identity in [`IDENTITY_NAMES`].
pub fn check_all(smms: &SmmsData, spec: SampleSpec) -> Result<Vec<IdentityReport>> {
    IDENTITY_NAMES.iter().map(|n| check_identity(smms, n, spec)).collect()
}

type Sides = (Vec<f64>, Vec<f64>);

fn vals(t: &JetTensor) -> Vec<f64> {
    t.values().data
}

fn jvals(v: &[Jet]) -> Vec<f64> {
    v.iter().map(Jet::value).collect()
}

fn sides(f: &SmmsFrame, name: &str, probe: &TractorField) -> Result<Sides> {
    match name {
        "lemma_J" => Ok(lemma_j(f)),
        "lemma_P" => Ok(lemma_p(f)),
        "lemma_dP" => Ok(lemma_dp(f)),
        "lemma_trA" => Ok(lemma_tra(f)),
        "lemma_divA" => Ok(lemma_diva(f)),
        "lemma_divdP" => Ok(lemma_divdp(f)),
        "lemma_algebra" => lemma_algebra(f, &probe.eval(f)?),
        "lemma_traceT" => lemma_trace_t(f, &probe.eval(f)?),
        "bgg_conn" => bgg_conn(f, &probe.eval(f)?),
        "bgg_curv" => bgg_curv(f, &probe.eval(f)?),
        "partial_star_curv" => partial_star_curv(f),
        _ => Err(unknown(name)),
    }
}

/// Shared scalars: `(m, n, v⁻¹, (μ−(m−1)|J|²)/(2(m+n−1)v))`.
fn basics(f: &SmmsFrame) -> (f64, f64, Jet, Jet) {
    let (m, n) = (f.m, f.dim() as f64);
    let vi = f.v_inv();
    let psi = f.flat_defect().mul(&vi).scale(1.0 / (2.0 * (m + n - 1.0)));
    (m, n, vi, psi)
}

fn lemma_j(f: &SmmsFrame) -> Sides {
    let (m, _, vi, psi) = basics(f);
    let rhs = f.geo.schouten_trace().add(&vi.mul(&f.y().add(&psi)).scale(m));
    (vec![f.j_w().value()], vec![rhs.value()])
}

fn lemma_p(f: &SmmsFrame) -> Sides {
    let (m, n, vi, psi) = basics(f);
    let g = &f.geo.g;
    let inner = f.hess_v().add(&g.scale(&f.y().add(&psi)));
    let rhs = f
        .geo
        .schouten()
        .scale(&f.c((n - 2.0) / (m + n - 2.0)))
        .sub(&inner.scale(&vi.scale(m / (m + n - 2.0))));
    let tr = trace2(f.p_w(), &f.geo.ginv);
    let tr_a = f.j_w().sub(&vi.mul(f.ytilde()).scale(m));
    let tr_b = f
        .geo
        .schouten_trace()
        .sub(&f.flat_defect().mul(&vi).mul(&vi).scale(m * n / (2.0 * (m + n - 1.0) * (m + n - 2.0))));
    let mut lhs = vals(f.p_w());
    lhs.extend([tr.value(), tr.value()]);
    let mut r = vals(&rhs);
    r.extend([tr_a.value(), tr_b.value()]);
    (lhs, r)
}

fn d_of(j: &Jet, n: usize) -> Vec<Jet> {
    (0..n).map(|i| j.diff(i)).collect()
}

fn lemma_dp(f: &SmmsFrame) -> Sides {
    let (m, n, vi, _) = basics(f);
    let nn = f.dim();
    let g = &f.geo.g;
    let dv = f.dv();
    let gv = f.grad_v();
    let hv = f.hess_v();
    let y = f.y();
    let dy = d_of(y, nn);
    // d((μ−(m−1)|J|²)/(2(m+n−1)v²)), multiplied by v.
    let q = f.flat_defect().mul(&vi).mul(&vi).scale(1.0 / (2.0 * (m + n - 1.0)));
    let vdq: Vec<Jet> = d_of(&q, nn).iter().map(|x| x.mul(&f.v)).collect();
    let dvy: Vec<Jet> = dv.iter().map(|x| x.mul(y).mul(&vi)).collect();
    let vi_dv: Vec<Jet> = dv.iter().map(|x| x.mul(&vi)).collect();
    let k0 = f.c((n - 2.0) / (m + n - 2.0));
    let k1 = vi.scale(m / (m + n - 2.0));
    let lhs = f.dp_w();

    let rm_form = insert(f.geo.riemann(), 2, &gv).scale(&f.c(-1.0))
        .add(&wedge_form_tensor(&dy, g))
        .sub(&wedge_form_tensor(&vi_dv, hv))
        .sub(&wedge_form_tensor(&dvy, g))
        .add(&wedge_form_tensor(&vdq, g));
    let rhs_rm = f.geo.cotton().scale(&k0).sub(&rm_form.scale(&k1));

    let p = f.geo.schouten();
    let p_dv: Vec<Jet> = (0..nn).map(|a| dot_slot(p, &gv, a)).collect();
    let dy_p: Vec<Jet> = dy.iter().zip(&p_dv).map(|(a, b)| a.sub(b)).collect();
    let q0 = p.scale(&f.v).add(hv).add(&g.scale(y));
    let weyl_form = insert(&f.geo.weyl(), 2, &gv).scale(&f.c(-1.0))
        .add(&wedge_form_tensor(&dy_p, g))
        .sub(&wedge_form_tensor(&vi_dv, &q0))
        .add(&wedge_form_tensor(&vdq, g));
    let rhs_weyl = f.geo.cotton().scale(&k0).sub(&weyl_form.scale(&k1));

    let div = f.weighted_divergence(f.p_w(), 1);
    let dj = d_of(f.j_w(), nn);
    let div_rhs: Vec<Jet> = dj
        .iter()
        .zip(dv)
        .map(|(a, b)| a.add(&b.mul(f.ytilde()).mul(&vi).mul(&vi).scale(m)))
        .collect();

    let lv = vals(&lhs);
    let mut l = lv.clone();
    l.extend(lv);
    l.extend(vals(&div));
    let mut r = vals(&rhs_rm);
    r.extend(vals(&rhs_weyl));
    r.extend(jvals(&div_rhs));
    (l, r)
}

/// `T(x, e_a) X^a` for a covariant 2-tensor, leaving slot 0 free.
fn dot_slot(t: &JetTensor, x: &[Jet], a: usize) -> Jet {
    let n = t.n;
    let mut acc = x[0].zero_like();
    for b in 0..n {
        acc.fma_assign(&t.data[a * n + b], &x[b]);
    }
    acc
}

fn lemma_tra(f: &SmmsFrame) -> Sides {
    let (m, n, vi, _) = basics(f);
    let a = f.a_w();
    let lhs = trace02(&a, &f.geo.ginv);
    let rhs = f.q_tilde().scale(&vi.scale(m));
    // Decomposition of A^W into Weyl, trace-free Ricci and scalar parts.
    let g = &f.geo.g;
    let tf = f.geo.schouten().scale(&f.v).add(f.hess_v()).add(&g.scale(f.y()));
    let id = f.flat_defect().mul(&vi).mul(&vi).scale(m / (2.0 * (m + n - 1.0) * (m + n - 2.0)));
    let decomposed = f
        .geo
        .weyl()
        .add(&kulkarni_nomizu(&tf.scale(&vi.scale(m / (m + n - 2.0))), g))
        .add(&kulkarni_nomizu(g, g).scale(&id));
    let mut l = vals(&lhs);
    l.extend(vals(&a));
    let mut r = vals(&rhs);
    r.extend(vals(&decomposed));
    (l, r)
}

fn lemma_diva(f: &SmmsFrame) -> Sides {
    let (m, n, vi, _) = basics(f);
    // Contracting slot 2 gives the 2-form in slots (0, 1) with value slot 2.
    let lhs = f.weighted_divergence(&f.a_w(), 2);
    let dv_scaled: Vec<Jet> = f.dv().iter().map(|x| x.mul(&vi).mul(&vi).scale(m)).collect();
    let rhs = f
        .dp_w()
        .scale(&f.c(m + n - 3.0))
        .sub(&wedge_form_tensor(&dv_scaled, &f.q_tilde()));
    (vals(&lhs), vals(&rhs))
}

fn lemma_divdp(f: &SmmsFrame) -> Sides {
    let (m, _, vi, _) = basics(f);
    let nn = f.dim();
    let lhs = f.weighted_divergence(&f.dp_w(), 2);
    let gv = f.grad_v();
    let dyt = d_of(f.ytilde(), nn);
    let beta: Vec<Jet> = (0..nn).map(|a| dyt[a].sub(&dot_slot(f.p_w(), &gv, a))).collect();
    let k = vi.mul(&vi).scale(-m);
    let dv: Vec<Jet> = f.dv().iter().map(|x| x.mul(&k)).collect();
    (vals(&lhs), vals(&wedge_forms(&dv, &beta)))
}

fn lower(f: &SmmsFrame, x: &[Jet]) -> Vec<Jet> {
    let n = f.dim();
    (0..n)
        .map(|a| {
            let mut acc = x[0].zero_like();
            for b in 0..n {
                acc.fma_assign(&f.geo.g.data[a * n + b], &x[b]);
            }
            acc
        })
        .collect()
}

fn lemma_algebra(f: &SmmsFrame, i: &TractorJet) -> Result<Sides> {
    let (m, n, vi, _) = basics(f);
    let nn = f.dim();
    let dw = w_connection(f, i)?;
    let t = Tensor::lower(nn, 2, |ix| lower(f, &dw[ix[0]].omega)[ix[1]].clone());
    let lhs = f.weighted_divergence(&t, 1);
    let tr = trace2(&t, &f.geo.ginv);
    let pair = h_jet(f, i, &jtilde(f)?);
    let alpha_up: Vec<Jet> = crate::tensor::raise(&dw.iter().map(|d| d.sigma.clone()).collect::<Vec<_>>(), &f.geo.ginv);
    let pj = f.p_w().sub(&f.geo.g.scale(f.j_w()));
    let rhs: Vec<f64> = (0..nn)
        .map(|a| {
            tr.diff(a).value() - (m + n - 1.0) * dw[a].rho.value()
                + m * vi.value() * pair.diff(a).value()
                + dot_slot(&pj, &alpha_up, a).value()
        })
        .collect();
    Ok((vals(&lhs), rhs))
}

fn lemma_trace_t(f: &SmmsFrame, i: &TractorJet) -> Result<Sides> {
    let (m, n, vi, _) = basics(f);
    let dw = w_connection(f, i)?;
    let tr: f64 = (0..f.dim()).map(|a| dw[a].omega[a].value()).sum();
    let lhs = tr + m * vi.value() * h_jet(f, i, &jtilde(f)?).value();
    let omega = lower(f, &i.omega);
    let rhs = (m + n) * i.rho.value() + f.weighted_div_form(&omega).value() + i.sigma.value() * f.j_w().value();
    Ok((vec![lhs], vec![rhs]))
}

fn bgg_conn(f: &SmmsFrame, i: &TractorJet) -> Result<Sides> {
    let (m, n, vi, _) = basics(f);
    let nn = f.dim();
    let ginv = ginv_at(f);
    let dw: Vec<DVector<f64>> = w_connection(f, i)?.iter().map(TractorJet::values).collect();
    let mut lhs = partial_star_1(&dw, &ginv);
    lhs[nn + 1] += m * vi.value() * h_jet(f, i, &jtilde(f)?).value();
    let grad_sigma = f.geo.grad_vec(&i.sigma);
    let omega = lower(f, &i.omega);
    let mut rhs = DVector::zeros(nn + 2);
    for k in 0..nn {
        rhs[1 + k] = i.omega[k].value() - grad_sigma[k].value();
    }
    rhs[nn + 1] = f.weighted_div_form(&omega).value() + i.sigma.value() * f.j_w().value() + (m + n) * i.rho.value();
    Ok((lhs.as_slice().to_vec(), rhs.as_slice().to_vec()))
}

fn bgg_curv(f: &SmmsFrame, i: &TractorJet) -> Result<Sides> {
    let (m, _, vi, _) = basics(f);
    let nn = f.dim();
    let ginv = ginv_at(f);
    let curv = curvature_commutator(f, ConnectionKind::W)?;
    let iv = i.values();
    let phi: Vec<Vec<DVector<f64>>> = curv.iter().map(|row| row.iter().map(|r| r * &iv).collect()).collect();
    let star = partial_star_2(&phi, &ginv);
    let djt = w_connection(f, &jtilde(f)?)?;
    let h = h_at(f);
    let mut lhs = Vec::new();
    let mut rhs = Vec::new();
    for k in 0..nn {
        lhs.extend(star[k].iter().copied());
        let mut v = DVector::zeros(nn + 2);
        v[nn + 1] = m * vi.value() * djt[k].values().dot(&(&h * &iv));
        rhs.extend(v.iter().copied());
    }
    Ok((lhs, rhs))
}

fn partial_star_curv(f: &SmmsFrame) -> Result<Sides> {
    let (m, _, vi, _) = basics(f);
    let nn = f.dim();
    let ginv = ginv_at(f);
    let curv = curvature_commutator(f, ConnectionKind::W)?;
    let star = partial_star_2_adjoint(&curv, &ginv);
    let djt = w_connection(f, &jtilde(f)?)?;
    let h = h_at(f);
    let x = TractorJet::x(f).values();
    let mut lhs = Vec::new();
    let mut rhs = Vec::new();
    for k in 0..nn {
        lhs.extend(star[k].iter().copied());
        let w: DMatrix<f64> = wedge(&h, &djt[k].values(), &x) * (m * vi.value());
        rhs.extend(w.iter().copied());
    }
    Ok((lhs, rhs))
}

/// Maximum absolute residuals of the two quasi-Einstein pair equations for
/// the normal connection, plus the λ-function
/// `λ = −(m+n−1)|I|² + m⟨X,I⟩⟨I,J⟩/⟨X,J⟩` sampled where `⟨X,J⟩ ≠ 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QePairReport {
    pub res1: f64,
    pub res2: f64,
    pub lambda_mean: f64,
    pub lambda_spread: f64,
    pub points_sampled: usize,
}

pub fn qe_pair_residuals(smms: &SmmsData, i: &TractorField, j: &TractorField, spec: SampleSpec) -> Result<QePairReport> {
    let points = sample_points(&smms.chart, spec)?;
    let per: Vec<(f64, f64, Option<f64>)> = points
        .par_iter()
        .map(|p| qe_pair_at(&smms.frame(p, 3)?, i, j))
        .collect::<Result<_>>()?;
    let res1 = per.iter().fold(0.0f64, |a, r| a.max(r.0));
    let res2 = per.iter().fold(0.0f64, |a, r| a.max(r.1));
    let lambdas: Vec<f64> = per.iter().filter_map(|r| r.2).collect();
    let mean = if lambdas.is_empty() { f64::NAN } else { lambdas.iter().sum::<f64>() / lambdas.len() as f64 };
    let spread = lambdas.iter().fold(0.0f64, |a, l| a.max((l - mean).abs()));
    Ok(QePairReport { res1, res2, lambda_mean: mean, lambda_spread: spread, points_sampled: points.len() })
}

fn qe_pair_at(f: &SmmsFrame, i: &TractorField, j: &TractorField) -> Result<(f64, f64, Option<f64>)> {
    let (m, n) = (f.m, f.dim() as f64);
    let ij = i.eval(f)?;
    let jj = j.eval(f)?;
    if (i.weight() - j.weight()).abs() > 1e-12 {
        return Err(Error::WeightMismatch { left: i.weight(), right: j.weight() });
    }
    let x = TractorJet::x(f);
    let di = crate::tractor::normal_connection(f, &ij)?;
    let dj = crate::tractor::normal_connection(f, &jj)?;
    let xi = h_jet(f, &x, &ij);
    let xj = h_jet(f, &x, &jj);
    let ip = h_jet(f, &ij, &jj);
    let a = m + n - 2.0;
    let mut res1 = 0.0f64;
    let mut res2 = 0.0f64;
    for k in 0..f.dim() {
        let di_j = h_jet(f, &di[k], &jj).value();
        let dj_i = h_jet(f, &dj[k], &ij).value();
        let e1 = di[k].values() * (a * xj.value()) - dj[k].values() * (m * xi.value())
            - x.values() * ((a * di_j - m * dj_i) / n);
        res1 = res1.max(e1.amax());
        let e2 = m * n * a * ip.value() * (xj.value() * xi.diff(k).value() - xi.value() * xj.diff(k).value())
            - m * a * (2.0 * m + n - 2.0) * xi.value() * xj.value() * ip.diff(k).value()
            + 2.0 * (m - 1.0) * (m + n - 1.0) * a * xi.value() * xj.value() * di_j
            + 2.0 * m * (m - 1.0) * (m + n - 1.0) * xi.value() * xj.value() * dj_i;
        res2 = res2.max(e2.abs());
    }
    let lambda = (xj.value().abs() > 1e-6).then(|| {
        -(m + n - 1.0) * h_jet(f, &ij, &ij).value() + m * xi.value() * ip.value() / xj.value()
    });
    Ok((res1, res2, lambda))
}

/// Outcome of testing whether `I = (1/(m+n)) D^W u` is a W-parallel section of
/// the W-subbundle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    /// `max |∇^W_i I|` over points and coordinate directions.
    pub nabla_w_residual: f64,
    /// `max |⟨I, J̃⟩|`.
    pub membership_residual: f64,
    /// Mean of `−(m+n−1)|I|²`.
    pub lambda_est: f64,
    /// Population variance of the pointwise λ values.
    pub lambda_variance: f64,
    pub points_sampled: usize,
}

pub fn check_equivalence(smms: &SmmsData, u: &crate::Expr, spec: SampleSpec) -> Result<EquivalenceReport> {
    smms.require_admissible()?;
    let points = sample_points(&smms.chart, spec)?;
    let per: Vec<(f64, f64, f64)> = points
        .par_iter()
        .map(|p| {
            let f = smms.frame(p, 3)?;
            let (m, n) = (f.m, f.dim() as f64);
            let i = tractor_d_w(&f, 1.0, &density_jet(&f, u, 1.0)?)?.scale(1.0 / (m + n));
            let nab = w_connection(&f, &i)?.iter().fold(0.0f64, |a, d| a.max(d.values().amax()));
            let mem = h_jet(&f, &i, &jtilde(&f)?).value().abs();
            let lambda = -(m + n - 1.0) * h_jet(&f, &i, &i).value();
            Ok((nab, mem, lambda))
        })
        .collect::<Result<_>>()?;
    let count = per.len().max(1) as f64;
    let mean = per.iter().map(|r| r.2).sum::<f64>() / count;
    Ok(EquivalenceReport {
        nabla_w_residual: per.iter().fold(0.0, |a, r| a.max(r.0)),
        membership_residual: per.iter().fold(0.0, |a, r| a.max(r.1)),
        lambda_est: mean,
        lambda_variance: per.iter().map(|r| (r.2 - mean).powi(2)).sum::<f64>() / count,
        points_sampled: per.len(),
    })
}

/// `⟨I, J̃⟩` at each sample point for a tractor field.
pub fn membership_profile(smms: &SmmsData, i: &TractorField, spec: SampleSpec) -> Result<Vec<f64>> {
    sample_points(&smms.chart, spec)?
        .par_iter()
        .map(|p| {
            let f = smms.frame(p, 2)?;
            Ok(h_jet(&f, &i.eval(&f)?, &jtilde(&f)?).value())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chart::Chart;
    use crate::models::{make_flat_sphere, make_gaussian_scales, make_qe_pairs, make_sphere_with};
    use crate::test_support::{generic_chart, random_smms};
    use proptest::prelude::*;
    use std::sync::Arc;

    #[test]
    fn euclidean_identities_trivial() {
        let s = SmmsData::new(Arc::new(Chart::euclidean(3, 1.0)), "1", 2.0, 0.0).unwrap();
        for r in check_all(&s, SampleSpec::new(8, 3)).unwrap() {
            assert!(r.max_residual < 1e-10, "{}: {}", r.name, r.max_residual);
            assert_eq!(r.points_sampled, 8);
        }
    }

    #[test]
    fn sphere_with_generic_density() {
        let b = make_sphere_with(3, "1 + 0.1*x1", 2.0, 0.7).unwrap();
        for r in check_all(&b.smms, SampleSpec::new(50, 11)).unwrap() {
            assert!(r.max_residual < 1e-7, "{}: {}", r.name, r.max_residual);
            assert!(b.smms.chart.contains(&r.worst_point));
        }
    }

    #[test]
    fn div_dp_with_nonconstant_curvature() {
        let c = Chart::conformally_flat("bump", &["x1", "x2", "x3"], "1 + 0.5*x1^2", "1 - (x1^2 + x2^2 + x3^2)", &[(-1.0, 1.0); 3])
            .unwrap();
        let s = SmmsData::new(Arc::new(c), "1 + 0.2*x2 + 0.1*x1*x3", 2.5, 0.4).unwrap();
        let r = check_identity(&s, "lemma_divdP", SampleSpec::new(20, 2)).unwrap();
        assert!(r.max_residual < 1e-6, "{}", r.max_residual);
        let f = s.frame(&r.worst_point, 4).unwrap();
        assert!(f.dp_w().values().max_abs() > 1e-3);
    }

    #[test]
    fn unknown_identity_is_an_error() {
        let (s, _) = random_smms(0, 2.0);
        let e = check_identity(&s, "lemma_Q", SampleSpec::new(2, 0)).unwrap_err();
        assert!(e.to_string().contains("lemma_Q"));
    }

    #[test]
    fn printed_scalar_coefficient_is_detected() {
        // The scalar part of the A^W decomposition with v in place of v².
        let (s, p) = random_smms(5, 2.0);
        let f = s.frame(&p, 2).unwrap();
        let (m, n) = (f.m, 3.0);
        let vi = f.v_inv();
        let g = &f.geo.g;
        let tf = f.geo.schouten().scale(&f.v).add(f.hess_v()).add(&g.scale(f.y()));
        let id = f.flat_defect().mul(&vi).scale(m / (2.0 * (m + n - 1.0) * (m + n - 2.0)));
        let printed = f
            .geo
            .weyl()
            .add(&kulkarni_nomizu(&tf.scale(&vi.scale(m / (m + n - 2.0))), g))
            .add(&kulkarni_nomizu(g, g).scale(&id));
        assert!(normalized_residual(&vals(&f.a_w()), &vals(&printed)) > 1e-3);
        assert!(identity_residual_at(&s, "lemma_trA", &TractorField::X, &p).unwrap() < 1e-12);
    }

    #[test]
    fn codifferential_sign_matters_for_curvature_identity() {
        let (s, p) = random_smms(6, 2.0);
        let f = s.frame(&p, 3).unwrap();
        let i = probe_tractor(&s, 4).unwrap().eval(&f).unwrap();
        let (lhs, rhs) = bgg_curv(&f, &i).unwrap();
        let flipped: Vec<f64> = lhs.iter().map(|x| -x).collect();
        assert!(normalized_residual(&lhs, &rhs) < 1e-12);
        assert!(normalized_residual(&flipped, &rhs) > 1e-3);
    }

    #[test]
    fn qe_pairs_on_sphere() {
        let b = make_sphere_with(3, "1", 2.0, 0.0).unwrap();
        let spec = SampleSpec::new(24, 9);
        for pair in make_qe_pairs(3, 2.0).unwrap() {
            let r = qe_pair_residuals(&b.smms, &pair.i, &pair.j, spec).unwrap();
            match pair.name.as_str() {
                "I0,I0" => {
                    assert!(r.res1 < 1e-8 && r.res2 < 1e-8, "{r:?}");
                    assert!((r.lambda_mean - 2.0).abs() < 1e-10 && r.lambda_spread < 1e-10);
                }
                "I1,I2" => assert!(r.res1 < 1e-8 && r.res2 < 1e-8, "{r:?}"),
                "I0+I1,I0" => {
                    assert!(r.res1 < 1e-8, "{r:?}");
                    // λ = −m(1+X₁) varies, so the second equation fails for m ≠ 0.
                    assert!(r.res2 > 1e-3 && r.lambda_spread > 0.1, "{r:?}");
                }
                "I0+bump,I0" => assert!(r.res1 > 1e-3, "{r:?}"),
                other => panic!("unexpected pair {other}"),
            }
        }
        let b0 = make_sphere_with(3, "1", 0.0, 0.0).unwrap();
        let pair = make_qe_pairs(3, 0.0).unwrap().into_iter().find(|p| p.name == "I0+I1,I0").unwrap();
        let r = qe_pair_residuals(&b0.smms, &pair.i, &pair.j, spec).unwrap();
        assert!(r.res1 < 1e-8 && r.res2 < 1e-8);
    }

    #[test]
    fn equivalence_on_flat_sphere() {
        let b = make_flat_sphere(3, 2.0).unwrap();
        let spec = SampleSpec::new(20, 1);
        let x1 = b.scale("X1").unwrap();
        let r = check_equivalence(&b.smms, x1, spec).unwrap();
        assert!(r.nabla_w_residual < 1e-8 && r.membership_residual < 1e-8, "{r:?}");
        assert!((r.lambda_est + 4.0).abs() < 1e-8 && r.lambda_variance < 1e-16);
        // The constant scale is not quasi-Einstein here: ∇^W I = (0, 0.4 g, 0).
        let one = b.scale("one").unwrap();
        let r = check_equivalence(&b.smms, one, spec).unwrap();
        assert!((r.lambda_est - 0.8).abs() < 1e-10, "{r:?}");
        assert!(r.nabla_w_residual > 0.1 && r.membership_residual > 0.5);
    }

    #[test]
    fn equivalence_on_gaussian_model() {
        let b = make_gaussian_scales(3, 2.0).unwrap();
        for name in ["linear", "bowl", "mixed"] {
            let r = check_equivalence(&b.smms, b.scale(name).unwrap(), SampleSpec::new(16, 2)).unwrap();
            assert!(r.nabla_w_residual < 1e-7 && r.membership_residual < 1e-7, "{name}: {r:?}");
            let want = b.expected(&format!("lambda_{name}")).unwrap();
            assert!((r.lambda_est - want).abs() < 1e-9 && r.lambda_variance < 1e-14, "{name}: {r:?}");
        }
    }

    #[test]
    fn equivalence_on_euclidean_affine_scale() {
        let c = Arc::new(Chart::euclidean(3, 1.0));
        let s = SmmsData::new(c.clone(), "1", 2.0, 0.0).unwrap();
        let r = check_equivalence(&s, &c.parse("1 + 0.5*x1").unwrap(), SampleSpec::new(12, 0)).unwrap();
        assert!(r.nabla_w_residual < 1e-10 && r.membership_residual < 1e-10);
        assert!((r.lambda_est + 1.0).abs() < 1e-12);
        let quad = check_equivalence(&s, &c.parse("(1 + x1^2 + x2^2 + x3^2)/2").unwrap(), SampleSpec::new(12, 0)).unwrap();
        assert!(quad.nabla_w_residual > 1e-2);
    }

    #[test]
    fn non_qe_witness() {
        let c = Arc::new(generic_chart());
        let s = SmmsData::new(c.clone(), "1", 2.0, 0.0).unwrap();
        let r = check_equivalence(&s, &c.parse("1 + x1^3").unwrap(), SampleSpec::new(12, 0)).unwrap();
        assert!(r.nabla_w_residual > 1e-3);
    }

    #[test]
    fn reports_are_deterministic() {
        let (s, _) = random_smms(2, 1.5);
        let a = check_identity(&s, "lemma_algebra", SampleSpec::new(6, 8)).unwrap();
        let b = check_identity(&s, "lemma_algebra", SampleSpec::new(6, 8)).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn identities_hold_on_random_data(seed in 0u64..1000, mi in 0usize..6) {
            let m = [-7.0, -0.5, 0.0, 0.5, 2.0, 3.5][mi];
            let (s, p) = random_smms(seed, m);
            let probe = probe_tractor(&s, seed).unwrap();
            for name in IDENTITY_NAMES {
                let r = identity_residual_at(&s, name, &probe, &p).unwrap();
                prop_assert!(r < 1e-9, "{} at m = {}: {}", name, m, r);
            }
        }
    }
}
