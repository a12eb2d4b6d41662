//! Pointwise Riemannian geometry of a chart metric.
//!
//! Curvature follows the sign convention
//! `R(x,z)s = −∇_x∇_z s + ∇_z∇_x s + ∇_{[x,z]} s` with
//! `Rm(x,y,z,w) = g(R(x,y)z, w)`, so the round sphere has
//! `Rm(x,y,x,y) > 0` and `Ric = Σ Rm(e_i,·,e_i,·)`.

use crate::chart::Chart;
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::jet::{Jet, JetSpace};
use crate::tensor::{decode, kulkarni_nomizu, trace2, JetTensor, Tensor, TensorValue};
use nalgebra::DMatrix;
use std::cell::OnceCell;

/// Jets of the metric and its connection at one point, in a chosen scale
/// `g = e^{2s} g_chart`.
pub struct Frame {
    n: usize,
    order: usize,
    point: Vec<f64>,
    args: Vec<Jet>,
    scale: Option<Jet>,
    pub g: JetTensor,
    pub ginv: JetTensor,
    gamma: Vec<Jet>,
    riemann: OnceCell<JetTensor>,
    ricci: OnceCell<JetTensor>,
    scalar: OnceCell<Jet>,
    schouten: OnceCell<JetTensor>,
}

impl Frame {
    /// Expands the geometry at `point` with Taylor order `order` for the metric.
    /// Curvature is then known to order `order − 2`.
    pub fn new(chart: &Chart, scale: Option<&Expr>, point: &[f64], order: usize) -> Result<Frame> {
        let n = chart.dim();
        if point.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: point.len() });
        }
        if !chart.contains(point) {
            return Err(Error::OutsideDomain { point: point.to_vec() });
        }
        let space = JetSpace::get(n, order);
        let args: Vec<Jet> = (0..n).map(|i| Jet::variable(space, i, point[i])).collect();
        let (exprs, entries) = chart.metric_exprs();
        let vals: Vec<Jet> = exprs.iter().map(|e| e.eval(&args, point)).collect::<std::result::Result<_, _>>()?;
        let mut g = Tensor::lower(n, 2, |ix| vals[entries[ix[0] * n + ix[1]]].clone());
        let scale = match scale {
            Some(s) => Some(s.eval(&args, point)?),
            None => None,
        };
        if let Some(s) = &scale {
            let e2s = s.scale(2.0).exp();
            g = g.scale(&e2s);
        }
        let g0 = DMatrix::from_fn(n, n, |i, j| g.data[i * n + j].value());
        if g0.clone().cholesky().is_none() {
            return Err(Error::DegenerateMetric { point: point.to_vec() });
        }
        let ginv = jet_inverse(&g, &g0);
        let gamma = christoffel_jets(&g, &ginv, order);
        Ok(Frame {
            n,
            order,
            point: point.to_vec(),
            args,
            scale,
            g,
            ginv,
            gamma,
            riemann: OnceCell::new(),
            ricci: OnceCell::new(),
            scalar: OnceCell::new(),
            schouten: OnceCell::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn point(&self) -> &[f64] {
        &self.point
    }

    /// The conformal factor exponent `s` of this frame's scale, if any.
    pub fn scale(&self) -> Option<&Jet> {
        self.scale.as_ref()
    }

    pub fn constant(&self, c: f64) -> Jet {
        self.args[0].constant_like(c)
    }

    /// Evaluates a chart expression as a jet at this point.
    pub fn eval(&self, e: &Expr) -> Result<Jet> {
        Ok(e.eval(&self.args, &self.point)?)
    }

    /// `Γ^k_ij`.
    pub fn gamma(&self, k: usize, i: usize, j: usize) -> &Jet {
        &self.gamma[(k * self.n + i) * self.n + j]
    }

    pub fn metric_tensor(&self) -> JetTensor {
        self.g.clone()
    }

    pub fn grad(&self, f: &Jet) -> Vec<Jet> {
        (0..self.n).map(|i| f.diff(i)).collect()
    }

    /// Contravariant gradient `g^{ij} ∂_j f`.
    pub fn grad_vec(&self, f: &Jet) -> Vec<Jet> {
        crate::tensor::raise(&self.grad(f), &self.ginv)
    }

    /// `g(a, b)` for covectors.
    pub fn inner_forms(&self, a: &[Jet], b: &[Jet]) -> Jet {
        let n = self.n;
        let mut acc = a[0].zero_like();
        for i in 0..n {
            for j in 0..n {
                acc.fma_assign(&self.ginv.data[i * n + j], &a[i].mul(&b[j]));
            }
        }
        acc
    }

    /// `∇²f`.
    pub fn hessian(&self, f: &Jet) -> JetTensor {
        let df = self.grad(f);
        let n = self.n;
        Tensor::lower(n, 2, |ix| {
            let mut h = df[ix[1]].diff(ix[0]);
            for k in 0..n {
                h = h.sub(&self.gamma(k, ix[0], ix[1]).mul(&df[k]));
            }
            h
        })
    }

    /// `Δf = tr ∇²f`.
    pub fn laplacian(&self, f: &Jet) -> Jet {
        trace2(&self.hessian(f), &self.ginv)
    }

    /// Covariant derivative; the new derivative slot comes first.
    pub fn nabla(&self, t: &JetTensor) -> JetTensor {
        let n = self.n;
        let rank = t.rank();
        let mut upper = vec![false];
        upper.extend_from_slice(&t.upper);
        let mut src = vec![0usize; rank];
        let data = (0..n.pow(rank as u32 + 1))
            .map(|flat| {
                let a = flat / n.pow(rank as u32);
                let rest = flat % n.pow(rank as u32);
                let mut d = t.data[rest].diff(a);
                decode(rest, n, rank, &mut src);
                for slot in 0..rank {
                    let orig = src[slot];
                    for c in 0..n {
                        src[slot] = c;
                        let tc = &t.data[t.idx(&src)];
                        if t.upper[slot] {
                            d.fma_assign(self.gamma(orig, a, c), tc);
                        } else {
                            d = d.sub(&self.gamma(c, a, orig).mul(tc));
                        }
                    }
                    src[slot] = orig;
                }
                d
            })
            .collect();
        Tensor { n, upper, weight: t.weight, data }
    }

    /// `Σ ∇_{e_a} T(…, e_a, …)` with the derivative contracted against `slot`
    /// of a covariant tensor.
    pub fn divergence(&self, t: &JetTensor, slot: usize) -> JetTensor {
        let nt = self.nabla(t);
        let n = self.n;
        let rank = t.rank();
        let mut upper = t.upper.clone();
        upper.remove(slot);
        let mut full = vec![0usize; rank + 1];
        Tensor::from_fn(n, upper, |ix| {
            let mut acc = nt.data[0].zero_like();
            for a in 0..n {
                for b in 0..n {
                    full[0] = a;
                    let mut k = 0;
                    for s in 0..rank {
                        full[s + 1] = if s == slot {
                            b
                        } else {
                            k += 1;
                            ix[k - 1]
                        };
                    }
                    acc.fma_assign(&self.ginv.data[a * n + b], &nt.data[nt.idx(&full)]);
                }
            }
            acc
        })
    }

    /// `Rm(i,j,k,l) = g(R(∂_i,∂_j)∂_k, ∂_l)`.
    pub fn riemann(&self) -> &JetTensor {
        self.riemann.get_or_init(|| {
            let n = self.n;
            let dgamma: Vec<Jet> = (0..n * n * n * n)
                .map(|f| {
                    let a = f % n;
                    self.gamma[f / n].diff(a)
                })
                .collect();
            let dg = |p: usize, i: usize, j: usize, a: usize| &dgamma[((p * n + i) * n + j) * n + a];
            // rc[p][k][i][j]: component p of the commutator ∇_i∇_j∂_k − ∇_j∇_i∂_k.
            let mut rc = Vec::with_capacity(n.pow(4));
            for p in 0..n {
                for k in 0..n {
                    for i in 0..n {
                        for j in 0..n {
                            let mut r = dg(p, j, k, i).sub(dg(p, i, k, j));
                            for q in 0..n {
                                r.fma_assign(self.gamma(p, i, q), self.gamma(q, j, k));
                                r = r.sub(&self.gamma(p, j, q).mul(self.gamma(q, i, k)));
                            }
                            rc.push(r);
                        }
                    }
                }
            }
            Tensor::lower(n, 4, |ix| {
                let (i, j, k, l) = (ix[0], ix[1], ix[2], ix[3]);
                let mut acc = rc[0].zero_like();
                for p in 0..n {
                    acc.fma_assign(&self.g.data[l * n + p], &rc[((p * n + k) * n + i) * n + j]);
                }
                acc.neg()
            })
        })
    }

    pub fn ricci(&self) -> &JetTensor {
        self.ricci.get_or_init(|| crate::tensor::trace02(self.riemann(), &self.ginv))
    }

    pub fn scalar_curvature(&self) -> &Jet {
        self.scalar.get_or_init(|| trace2(self.ricci(), &self.ginv))
    }

    /// Schouten scalar `J = R / (2(n−1))`.
    pub fn schouten_trace(&self) -> Jet {
        self.scalar_curvature().scale(1.0 / (2.0 * (self.n as f64 - 1.0)))
    }

    /// `P = (Ric − J g)/(n−2)`.
    pub fn schouten(&self) -> &JetTensor {
        self.schouten.get_or_init(|| {
            let j = self.schouten_trace();
            self.ricci()
                .sub(&self.g.scale(&j))
                .scale(&self.constant(1.0 / (self.n as f64 - 2.0)))
        })
    }

    /// `W = Rm − P∧g`.
    pub fn weyl(&self) -> JetTensor {
        self.riemann().sub(&kulkarni_nomizu(self.schouten(), &self.g))
    }

    /// Twisted exterior derivative `dP(x,y,z) = ∇_x P(y,z) − ∇_y P(x,z)`.
    pub fn cotton(&self) -> JetTensor {
        exterior_d(&self.nabla(self.schouten()))
    }

    pub fn curvature_suite(&self) -> CurvatureSuite {
        CurvatureSuite {
            riemann: self.riemann().values(),
            ricci: self.ricci().values(),
            scalar: self.scalar_curvature().value(),
            schouten: self.schouten().values(),
            schouten_trace: self.schouten_trace().value(),
            weyl: self.weyl().values(),
            cotton: if self.order >= 3 { Some(self.cotton().values()) } else { None },
        }
    }
}

/// Antisymmetrises the first two slots of `∇T` for a covariant 2-tensor `T`:
/// `(dT)(x,y,z) = ∇_x T(y,z) − ∇_y T(x,z)`.
pub fn exterior_d(nabla_t: &JetTensor) -> JetTensor {
    let n = nabla_t.n;
    Tensor::lower(n, 3, |ix| {
        nabla_t.at(&[ix[0], ix[1], ix[2]]).sub(nabla_t.at(&[ix[1], ix[0], ix[2]]))
    })
}

fn jet_inverse(g: &JetTensor, g0: &DMatrix<f64>) -> JetTensor {
    let n = g.n;
    let inv0 = g0.clone().try_inverse().expect("positive definite metric is invertible");
    let zero = g.data[0].zero_like();
    let mut x = Tensor::lower(n, 2, |ix| zero.constant_like(inv0[(ix[0], ix[1])]));
    let mut correct = 0usize;
    let order = g.data[0].order();
    let matmul = |a: &JetTensor, b: &JetTensor| {
        Tensor::lower(n, 2, |ix| {
            let mut acc = zero.clone();
            for k in 0..n {
                acc.fma_assign(&a.data[ix[0] * n + k], &b.data[k * n + ix[1]]);
            }
            acc
        })
    };
    while correct < order {
        let gx = matmul(g, &x);
        let two_minus = Tensor::lower(n, 2, |ix| {
            let e = &gx.data[ix[0] * n + ix[1]];
            if ix[0] == ix[1] {
                e.neg().add_scalar(2.0)
            } else {
                e.neg()
            }
        });
        x = matmul(&x, &two_minus);
        correct = 2 * correct + 1;
    }
    Tensor { upper: vec![true, true], ..x }
}

fn christoffel_jets(g: &JetTensor, ginv: &JetTensor, order: usize) -> Vec<Jet> {
    let n = g.n;
    if order == 0 {
        return vec![g.data[0].zero_like(); n * n * n];
    }
    let dg: Vec<Jet> = (0..n * n * n).map(|f| g.data[f % (n * n)].diff(f / (n * n))).collect();
    let d = |l: usize, i: usize, j: usize| &dg[l * n * n + i * n + j];
    let first: Vec<Jet> = (0..n * n * n)
        .map(|f| {
            let (l, i, j) = (f / (n * n), (f / n) % n, f % n);
            d(i, j, l).add(d(j, i, l)).sub(d(l, i, j)).scale(0.5)
        })
        .collect();
    (0..n * n * n)
        .map(|f| {
            let (k, i, j) = (f / (n * n), (f / n) % n, f % n);
            let mut acc = first[0].zero_like();
            for l in 0..n {
                acc.fma_assign(&ginv.data[k * n + l], &first[l * n * n + i * n + j]);
            }
            acc
        })
        .collect()
}

/// Curvature tensors at a point.
#[derive(Clone, Debug)]
pub struct CurvatureSuite {
    pub riemann: TensorValue,
    pub ricci: TensorValue,
    pub scalar: f64,
    pub schouten: TensorValue,
    pub schouten_trace: f64,
    pub weyl: TensorValue,
    pub cotton: Option<TensorValue>,
}

/// Christoffel symbols `Γ^k_ij` at `point`, indexed `[k][i][j]`.
pub fn christoffel(chart: &Chart, scale: Option<&Expr>, point: &[f64]) -> Result<Tensor<f64>> {
    let f = Frame::new(chart, scale, point, 1)?;
    let n = f.dim();
    Ok(Tensor::from_fn(n, vec![true, false, false], |ix| f.gamma(ix[0], ix[1], ix[2]).value()))
}

/// Riemann, Ricci, scalar, Schouten, Weyl and Cotton tensors at `point`.
pub fn curvature_suite(chart: &Chart, scale: Option<&Expr>, point: &[f64]) -> Result<CurvatureSuite> {
    Ok(Frame::new(chart, scale, point, 3)?.curvature_suite())
}

/// Gradient, Hessian and Laplacian of a scalar field.
pub struct FieldDerivatives {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub hessian: TensorValue,
    pub laplacian: f64,
}

pub fn field_calculus(chart: &Chart, scale: Option<&Expr>, f: &Expr, point: &[f64]) -> Result<FieldDerivatives> {
    let fr = Frame::new(chart, scale, point, 2)?;
    let u = fr.eval(f)?;
    let hess = fr.hessian(&u);
    Ok(FieldDerivatives {
        value: u.value(),
        gradient: fr.grad(&u).iter().map(Jet::value).collect(),
        laplacian: trace2(&hess, &fr.ginv).value(),
        hessian: hess.values(),
    })
}

/// A single partial derivative `∂^α f` of a chart expression.
pub fn differentiate(f: &Expr, point: &[f64], alpha: &[u8]) -> Result<f64> {
    let order: usize = alpha.iter().map(|&a| a as usize).sum();
    let n = point.len();
    if alpha.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: alpha.len() });
    }
    let space = JetSpace::get(n, order);
    let args: Vec<Jet> = (0..n).map(|i| Jet::variable(space, i, point[i])).collect();
    let j = f.eval(&args, point)?;
    Ok(j.partial(alpha).expect("multi-index within order"))
}

#[cfg(test)]
mod tests {
    use crate::test_support::sphere;
    use super::*;
    use crate::chart::coord_names;
    use crate::tensor::normalized_residual;

    #[test]
    fn round_sphere_curvature() {
        let c = sphere(3);
        let p = [0.3, -0.2, 0.5];
        let s = curvature_suite(&c, None, &p).unwrap();
        assert!((s.scalar - 6.0).abs() < 1e-12);
        assert!((s.schouten_trace - 1.5).abs() < 1e-12);
        let g = c.metric_at(&p).unwrap();
        let half_g: Vec<f64> = (0..9).map(|f| 0.5 * g[(f / 3, f % 3)]).collect();
        assert!(normalized_residual(&s.schouten.data, &half_g) < 1e-12);
        assert!(s.weyl.max_abs() < 1e-12);
        assert!(s.cotton.unwrap().max_abs() < 1e-11);
        // sectional curvature +1 with this sign convention
        let k = s.riemann.at(&[0, 1, 0, 1]) / (g[(0, 0)] * g[(1, 1)]);
        assert!((k - 1.0).abs() < 1e-12);
    }

    #[test]
    fn euclidean_christoffel_vanish() {
        let c = Chart::euclidean(3, 1.0);
        let g = christoffel(&c, None, &[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn polar_laplacian() {
        let c = Chart::new(
            "polar",
            &["r", "t"],
            &[vec!["1".into(), "0".into()], vec!["0".into(), "r^2".into()]],
            "r",
            &[(0.0, 2.0), (-3.0, 3.0)],
        )
        .unwrap();
        let f = c.parse("r^2").unwrap();
        let d = field_calculus(&c, None, &f, &[1.2, 0.4]).unwrap();
        assert!((d.laplacian - 4.0).abs() < 1e-12);
        let gam = christoffel(&c, None, &[1.2, 0.4]).unwrap();
        assert!((gam.at(&[0, 1, 1]) + 1.2).abs() < 1e-14);
        assert!((gam.at(&[1, 0, 1]) - 1.0 / 1.2).abs() < 1e-14);
    }

    #[test]
    fn scaled_frame_matches_direct_metric() {
        let c = Chart::euclidean(3, 2.0);
        let s = c.parse("-log((1 + x1^2 + x2^2 + x3^2)/2)").unwrap();
        let p = [0.4, 0.1, -0.3];
        let a = curvature_suite(&c, Some(&s), &p).unwrap();
        let b = curvature_suite(&sphere(3), None, &p).unwrap();
        assert!(normalized_residual(&a.riemann.data, &b.riemann.data) < 1e-12);
    }

    #[test]
    fn second_derivative_of_quadratic() {
        let v = coord_names(3);
        let f = Expr::parse("x1^2 + 3*x1*x2", &v).unwrap();
        assert_eq!(differentiate(&f, &[1.0, 2.0, 0.0], &[2, 0, 0]).unwrap(), 2.0);
    }

    #[test]
    fn nabla_of_metric_vanishes() {
        let c = sphere(3);
        let f = Frame::new(&c, None, &[0.2, 0.5, -0.4], 3).unwrap();
        let ng = f.nabla(&f.g);
        assert!(ng.values().max_abs() < 1e-13);
        let ngi = f.nabla(&f.ginv);
        assert!(ngi.values().max_abs() < 1e-13);
    }
}
