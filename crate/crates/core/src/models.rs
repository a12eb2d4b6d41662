//! Canonical example configurations with their expected constants.

use crate::chart::{coord_names, sum_of_squares, Chart};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::geometry::Frame;
use crate::sampling::{sample_points, SampleSpec};
use crate::smms::SmmsData;
use crate::tensor::trace2;
use crate::tractor::{h_jet, TractorField};
use std::sync::Arc;

/// An expected constant together with where it comes from.
#[derive(Clone, Debug)]
pub struct Expected {
    pub name: String,
    pub value: f64,
    pub note: String,
}

#[derive(Clone, Debug)]
pub struct ModelBundle {
    pub name: String,
    pub smms: SmmsData,
    pub tractors: Vec<(String, TractorField)>,
    pub scales: Vec<(String, Expr)>,
    pub expected: Vec<Expected>,
}

impl ModelBundle {
    pub fn tractor(&self, name: &str) -> Option<&TractorField> {
        self.tractors.iter().find(|(k, _)| k == name).map(|(_, t)| t)
    }

    pub fn scale(&self, name: &str) -> Option<&Expr> {
        self.scales.iter().find(|(k, _)| k == name).map(|(_, s)| s)
    }

    pub fn expected(&self, name: &str) -> Option<f64> {
        self.expected.iter().find(|e| e.name == name).map(|e| e.value)
    }

    fn expect(&mut self, name: &str, value: f64, note: &str) {
        self.expected.push(Expected { name: name.into(), value, note: note.into() });
    }
}

/// The round unit sphere in stereographic coordinates, `g = 4(1+|x|²)⁻²δ`,
/// on the ball `|x| < 3`.
pub fn sphere_chart(n: usize) -> Chart {
    let names = coord_names(n);
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let r2 = sum_of_squares(&names);
    Chart::conformally_flat("sphere", &refs, &format!("4/(1 + {r2})^2"), &format!("9 - ({r2})"), &vec![(-3.0, 3.0); n])
        .expect("sphere chart is well formed")
}

/// The ambient coordinates `X_1 … X_{n+1}` of the unit sphere, pulled back
/// to the stereographic chart.
pub fn ambient_coordinates(n: usize) -> Vec<String> {
    let r2 = sum_of_squares(&coord_names(n));
    let mut out: Vec<String> = (1..=n).map(|i| format!("2*x{i}/(1 + {r2})")).collect();
    out.push(format!("(1 - ({r2}))/(1 + {r2})"));
    out
}

/// The sphere with `v`, `m`, `μ` and the parallel basis `I0 … I{n+1}`, where
/// `I0 = (1, 0, −½)` and `I_i = (X_i, ∇X_i, ½X_i)` in the round scale.
pub fn make_sphere_with(n: usize, v: &str, m: f64, mu: f64) -> Result<ModelBundle> {
    let chart = Arc::new(sphere_chart(n));
    let smms = SmmsData::new(chart.clone(), v, m, mu)?;
    let mut bundle = ModelBundle {
        name: format!("sphere{n}"),
        smms,
        tractors: Vec::new(),
        scales: Vec::new(),
        expected: Vec::new(),
    };
    let mut densities = vec![("1".to_string(), "one".to_string())];
    for (i, x) in ambient_coordinates(n).into_iter().enumerate() {
        densities.push((x, format!("X{}", i + 1)));
    }
    for (i, (src, name)) in densities.iter().enumerate() {
        let e = chart.parse(src)?;
        bundle.scales.push((name.clone(), e.clone()));
        bundle.tractors.push((format!("I{i}"), TractorField::scale_tractor_of(e, n)));
        bundle.expect(&format!("norm_I{i}"), if i == 0 { -1.0 } else { 1.0 }, "orthonormal parallel basis of the round sphere");
    }
    bundle.expect("parallel_dimension", (n + 2) as f64, "the sphere is the flat model");
    Ok(bundle)
}

/// The round sphere with `v = 1`, `m = 0`.
pub fn make_sphere(n: usize) -> Result<ModelBundle> {
    make_sphere_with(n, "1", 0.0, 0.0)
}

/// The sphere with `J = I0` and `μ = −(m−1)`, for which the W-connection is flat.
pub fn make_flat_sphere(n: usize, m: f64) -> Result<ModelBundle> {
    let mut b = make_sphere_with(n, "1", m, -(m - 1.0))?;
    b.name = format!("flat_sphere{n}");
    b.expect("qw_dimension", (n + 1) as f64, "parallel tractors orthogonal to I0");
    b.expect("lambda_I0", m + n as f64 - 1.0, "−(m+n−1)|I0|² for the dual configuration");
    Ok(b)
}

/// The flat-scale image of the flat sphere configuration: Euclidean ball of
/// radius 2 with `v = (1+|x|²)/2` and `μ = −(m−1)`.
///
/// The W-parallel scales are `u = a(1−|x|²) + b·x` with
/// `|I|² = |b|² + 4a²` and `λ = −(m+n−1)|I|²`.
pub fn make_gaussian_scales(n: usize, m: f64) -> Result<ModelBundle> {
    let chart = Arc::new(Chart::euclidean(n, 2.0));
    let r2 = sum_of_squares(&coord_names(n));
    let smms = SmmsData::new(chart.clone(), &format!("(1 + {r2})/2"), m, -(m - 1.0))?;
    let mut b = ModelBundle {
        name: format!("gaussian{n}"),
        smms,
        tractors: Vec::new(),
        scales: Vec::new(),
        expected: Vec::new(),
    };
    for (name, src, norm) in [
        ("one", "1".to_string(), 0.0),
        ("half_r2", format!("({r2})/2"), 0.0),
        ("gaussian", format!("(1 + {r2})/2"), -1.0),
    ] {
        let e = chart.parse(&src)?;
        b.tractors.push((name.into(), TractorField::scale_tractor_of(e, n)));
        b.expect(&format!("norm_{name}"), norm, "tractor metric of (1/n)Du in the flat scale");
    }
    let lam = |norm: f64| -(m + n as f64 - 1.0) * norm;
    for (name, src, norm) in [
        ("linear", "x1".to_string(), 1.0),
        ("bowl", format!("1 - ({r2})"), 4.0),
        ("mixed", format!("0.5*(1 - ({r2})) + 0.3*x2"), 1.09),
    ] {
        b.scales.push((name.into(), chart.parse(&src)?));
        b.expect(&format!("lambda_{name}"), lam(norm), "−(m+n−1)(|b|² + 4a²)");
    }
    Ok(b)
}

/// A candidate quasi-Einstein pair on the sphere.
#[derive(Clone, Debug)]
pub struct QePair {
    pub name: String,
    pub i: TractorField,
    pub j: TractorField,
    /// Whether both pair equations hold for this `m`.
    pub expected_pass: bool,
}

/// Pairs built from the sphere's parallel basis plus one non-parallel witness.
///
/// For parallel `I`, `J` the second pair equation holds exactly when
/// `λ = −(m+n−1)|I|² + m⟨X,I⟩⟨I,J⟩/⟨X,J⟩` is constant, which for
/// `(I0+I1, I0)` requires `m = 0`.
pub fn make_qe_pairs(n: usize, m: f64) -> Result<Vec<QePair>> {
    let s = make_sphere(n)?;
    let t = |k: &str| s.tractor(k).cloned().expect("basis tractor");
    let sum = |a: TractorField, b: TractorField| TractorField::Combination(vec![(1.0, a), (1.0, b)]);
    let zero = s.smms.chart.parse("0")?;
    let bump = TractorField::Components {
        sigma: s.smms.chart.parse("0.2*x1^2")?,
        omega: vec![zero.clone(); n],
        rho: zero,
        weight: 0.0,
    };
    Ok(vec![
        QePair { name: "I0,I0".into(), i: t("I0"), j: t("I0"), expected_pass: true },
        QePair { name: "I0+I1,I0".into(), i: sum(t("I0"), t("I1")), j: t("I0"), expected_pass: m == 0.0 },
        QePair { name: "I1,I2".into(), i: t("I1"), j: t("I2"), expected_pass: true },
        QePair { name: "I0+bump,I0".into(), i: sum(t("I0"), bump), j: t("I0"), expected_pass: false },
    ])
}

/// Result of checking that `u⁻²(g ⊕ v²h)` is Einstein.
#[derive(Clone, Debug)]
pub struct WarpedReport {
    /// `max |Ric − λ ḡ|` with `λ = −(m+n−1)|I|²`.
    pub residual: f64,
    /// `λ` from the tractor side.
    pub lambda_tractor: f64,
    /// `tr Ric / dim` averaged over the sample.
    pub lambda_product: f64,
    pub points: usize,
}

/// A model fiber of dimension `k` with `Ric_h = c h`, on coordinates `y1 … yk`.
fn fiber_chart(k: usize, c: f64) -> Result<Chart> {
    let names: Vec<String> = (1..=k).map(|i| format!("y{i}")).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let r2 = sum_of_squares(&names);
    if k == 1 || c == 0.0 {
        if k == 1 && c != 0.0 {
            return Err(Error::Invalid("a one-dimensional fiber is Ricci flat".into()));
        }
        return Chart::conformally_flat("fiber", &refs, "1", &format!("1 - ({r2})"), &vec![(-1.0, 1.0); k]);
    }
    let r = ((k as f64 - 1.0) / c.abs()).sqrt();
    if c > 0.0 {
        Chart::conformally_flat("fiber", &refs, &format!("4*{}/(1 + {r2})^2", r * r), &format!("4 - ({r2})"), &vec![(-2.0, 2.0); k])
    } else {
        Chart::conformally_flat("fiber", &refs, &format!("4*{}/(1 - ({r2}))^2", r * r), &format!("0.8 - ({r2})"), &vec![(-1.0, 1.0); k])
    }
}

/// Builds `(M × F, u⁻²(g ⊕ v²h))` for an Einstein fiber of dimension `m` and
/// compares its Ricci tensor with `λ = −(m+n−1)|I|²`, `I = (1/(m+n)) D^W u`.
pub fn warped_product_check(
    base: &SmmsData,
    u: &Expr,
    fiber_dim: usize,
    fiber_einstein_const: f64,
    spec: SampleSpec,
) -> Result<WarpedReport> {
    if fiber_dim == 0 || (base.m - fiber_dim as f64).abs() > 1e-12 {
        return Err(Error::Invalid(format!("fiber dimension {fiber_dim} must be a positive integer equal to m = {}", base.m)));
    }
    let fiber = fiber_chart(fiber_dim, fiber_einstein_const)?;
    let n = base.dim();
    let total = n + fiber_dim;
    let mut coords: Vec<String> = base.chart.coords().to_vec();
    coords.extend(fiber.coords().iter().cloned());
    let (bx, be) = base.chart.metric_exprs();
    let (fx, fe) = fiber.metric_exprs();
    let (us, vs) = (u.source(), base.v.source());
    let metric: Vec<Vec<String>> = (0..total)
        .map(|i| {
            (0..total)
                .map(|j| {
                    if i < n && j < n {
                        format!("({})/({us})^2", bx[be[i * n + j]].source())
                    } else if i >= n && j >= n {
                        let k = fiber_dim;
                        format!("({vs})^2*({})/({us})^2", fx[fe[(i - n) * k + (j - n)]].source())
                    } else {
                        "0".into()
                    }
                })
                .collect()
        })
        .collect();
    let mut bounds = base.chart.bounds().to_vec();
    bounds.extend_from_slice(fiber.bounds());
    let refs: Vec<&str> = coords.iter().map(String::as_str).collect();
    let base_domains: Vec<String> = base.chart.domains().iter().map(|d| d.source().to_string()).collect();
    let mut product = Chart::new("warped", &refs, &metric, &base_domains[0], &bounds)?;
    for d in base_domains.iter().skip(1).chain(fiber.domains().iter().map(|d| d.source().to_string()).collect::<Vec<_>>().iter()) {
        product = product.with_domain(d)?;
    }
    let base_unscaled = base.clone().with_scale_expr(None);
    let mut residual = 0.0f64;
    let mut lambda_tractor = 0.0;
    let mut lambda_sum = 0.0;
    let points = sample_points(&product, spec)?;
    for (idx, p) in points.iter().enumerate() {
        let f = base_unscaled.frame(&p[..n], 2)?;
        let field = TractorField::weighted_scale_tractor(u.clone(), base.m, n);
        let t = field.eval(&f)?;
        let lam = -(base.m + n as f64 - 1.0) * h_jet(&f, &t, &t).value();
        if idx == 0 {
            lambda_tractor = lam;
        }
        let frame = Frame::new(&product, None, p, 2)?;
        let ric = frame.ricci().values();
        let g = frame.g.values();
        for (r, gv) in ric.data.iter().zip(&g.data) {
            residual = residual.max((r - lam * gv).abs());
        }
        lambda_sum += trace2(frame.ricci(), &frame.ginv).value() / total as f64;
    }
    Ok(WarpedReport { residual, lambda_tractor, lambda_product: lambda_sum / points.len() as f64, points: points.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identities::{check_equivalence, qe_pair_residuals};
    use crate::smms::{duality_map, qe_residuals};
    use crate::tractor::{normal_connection, TractorJet};

    fn bundle_values(b: &ModelBundle, names: &[String], p: &[f64]) -> Vec<TractorJet> {
        let f = b.smms.frame(p, 3).unwrap();
        names.iter().map(|k| b.tractor(k).unwrap().eval(&f).unwrap()).collect()
    }

    #[test]
    fn sphere_basis_is_orthonormal_and_parallel() {
        for n in [3, 4] {
            let b = make_sphere(n).unwrap();
            let names: Vec<String> = (0..n + 2).map(|i| format!("I{i}")).collect();
            for p in sample_points(&b.smms.chart, SampleSpec::new(if n == 3 { 50 } else { 10 }, 1)).unwrap() {
                let f = b.smms.frame(&p, 3).unwrap();
                let ts = bundle_values(&b, &names, &p);
                for (i, a) in ts.iter().enumerate() {
                    for (j, c) in ts.iter().enumerate() {
                        let want = if i != j { 0.0 } else { b.expected(&format!("norm_I{i}")).unwrap() };
                        assert!((h_jet(&f, a, c).value() - want).abs() < 1e-9);
                    }
                    let nab = normal_connection(&f, a).unwrap();
                    assert!(nab.iter().all(|d| d.max_abs() < 1e-8));
                }
            }
            assert_eq!(b.expected("parallel_dimension"), Some((n + 2) as f64));
        }
    }

    #[test]
    fn null_combination_gives_the_ricci_flat_scale() {
        let b = make_sphere(3).unwrap();
        let x1 = b.scale("X1").unwrap();
        let sum = TractorField::Combination(vec![(1.0, b.tractor("I0").unwrap().clone()), (1.0, b.tractor("I1").unwrap().clone())]);
        for p in sample_points(&b.smms.chart, SampleSpec::new(10, 2)).unwrap() {
            let f = b.smms.frame(&p, 2).unwrap();
            let sigma = sum.eval(&f).unwrap().sigma.value();
            assert!((sigma - 1.0 - x1.eval_f64(&p).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn gaussian_bundle_constants() {
        let m = 2.0;
        let b = make_gaussian_scales(3, m).unwrap();
        let spec = SampleSpec::new(12, 4);
        let flat = SmmsData::new(b.smms.chart.clone(), "1", m, 0.0).unwrap();
        for (name, t) in &b.tractors {
            for p in sample_points(&flat.chart, SampleSpec::new(5, 1)).unwrap() {
                let f = flat.frame(&p, 2).unwrap();
                let v = t.eval(&f).unwrap();
                assert!((h_jet(&f, &v, &v).value() - b.expected(&format!("norm_{name}")).unwrap()).abs() < 1e-10);
            }
        }
        for (name, u) in &b.scales {
            let r = check_equivalence(&b.smms, u, spec).unwrap();
            assert!(r.nabla_w_residual < 1e-7 && r.membership_residual < 1e-7, "{name}: {r:?}");
            assert!((r.lambda_est - b.expected(&format!("lambda_{name}")).unwrap()).abs() < 1e-8, "{name}");
            assert!(r.lambda_variance < 1e-14);
        }
    }

    #[test]
    fn qe_pairs_behave_as_tagged() {
        let spec = SampleSpec::new(20, 3);
        for m in [0.0, 2.0] {
            let s = make_sphere_with(3, "1", m, 0.0).unwrap().smms;
            for pair in make_qe_pairs(3, m).unwrap() {
                let r = qe_pair_residuals(&s, &pair.i, &pair.j, spec).unwrap();
                let pass = r.res1 < 1e-7 && r.res2 < 1e-7;
                assert_eq!(pass, pair.expected_pass, "m = {m}, {}: {r:?}", pair.name);
                if pair.name == "I0,I0" {
                    assert!((r.lambda_mean - 2.0).abs() < 1e-10);
                }
                if pair.name.contains("bump") {
                    assert!(r.res1 > 1e-3);
                }
            }
        }
    }

    #[test]
    fn flat_sphere_dual_data() {
        let m = 2.0;
        let b = make_flat_sphere(3, m).unwrap();
        let lambda = b.expected("lambda_I0").unwrap();
        assert_eq!(lambda, m + 2.0);
        let one = b.scale("one").unwrap();
        let d = duality_map(&b.smms, one, lambda);
        assert_eq!((d.smms.m, d.smms.mu, d.lambda), (2.0 - m - 3.0, lambda, b.smms.mu));
        let back = duality_map(&d.smms, &d.scale_density, d.lambda);
        assert_eq!((back.smms.m, back.smms.mu, back.lambda), (m, b.smms.mu, lambda));
        assert_eq!(back.smms.v, b.smms.v);
        assert_eq!(&back.scale_density, one);
    }

    #[test]
    fn round_qe_data_under_duality() {
        let b = make_sphere_with(3, "1", 2.0, 2.0).unwrap();
        let one = b.scale("one").unwrap();
        let spec = SampleSpec::new(10, 1);
        assert!(qe_residuals(&b.smms, one, 2.0, spec).unwrap().max() < 1e-8);
        let d = duality_map(&b.smms, one, 2.0);
        assert!(qe_residuals(&d.smms, &d.scale_density, d.lambda, spec).unwrap().max() < 1e-8);
    }

    #[test]
    fn warped_products() {
        let spec = SampleSpec::new(20, 7);
        let flat = SmmsData::new(Arc::new(Chart::euclidean(3, 1.0)), "1", 2.0, 0.0).unwrap();
        let one = flat.chart.parse("1").unwrap();
        let r = warped_product_check(&flat, &one, 2, 0.0, spec).unwrap();
        assert!(r.residual < 1e-12 && r.lambda_tractor.abs() < 1e-12);
        let s = make_sphere_with(3, "1", 2.0, 2.0).unwrap();
        let r = warped_product_check(&s.smms, s.scale("one").unwrap(), 2, 2.0, spec).unwrap();
        assert!(r.residual < 1e-6, "{r:?}");
        assert!((r.lambda_tractor - 2.0).abs() < 1e-6);
        assert!((r.lambda_product - r.lambda_tractor).abs() < 1e-6);
        assert!(warped_product_check(&s.smms, s.scale("one").unwrap(), 0, 2.0, spec).is_err());
        assert!(warped_product_check(&s.smms, s.scale("one").unwrap(), 3, 2.0, spec).is_err());
    }

    #[test]
    fn mismatched_fiber_is_not_einstein() {
        let s = make_sphere_with(3, "1", 2.0, 2.0).unwrap();
        let r = warped_product_check(&s.smms, s.scale("one").unwrap(), 2, 1.0, SampleSpec::new(5, 7)).unwrap();
        assert!(r.residual > 0.1);
    }
}
