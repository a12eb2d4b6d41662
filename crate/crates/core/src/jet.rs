//! Truncated multivariate Taylor arithmetic.
//!
//! A [`Jet`] stores the Taylor coefficients `c_α = ∂^α f(p) / α!` of a function
//! of `nvars` variables up to total degree `order`. Arithmetic on jets is exact
//! up to rounding, so chaining operations propagates every mixed partial
//! derivative through the computation. This is the same information a nested
//! forward-mode dual number carries, stored without the duplicated mixed terms.
//!
//! Monomials are stored in graded order, so truncating a jet to a lower order
//! is a prefix slice.

use smallvec::{smallvec, SmallVec};
use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

/// Shared multiplication and differentiation tables for a `(nvars, order)` pair.
#[derive(Debug)]
pub struct JetSpace {
    nvars: usize,
    order: usize,
    monomials: Vec<Vec<u8>>,
    len_by_order: Vec<usize>,
    mul: Vec<(u32, u32, u32)>,
    mul_end_by_order: Vec<usize>,
    deriv: Vec<Vec<(u32, f64)>>,
    factorial_weight: Vec<f64>,
}

fn monomials_of_degree(nvars: usize, degree: usize) -> Vec<Vec<u8>> {
    if nvars == 0 {
        return if degree == 0 { vec![vec![]] } else { vec![] };
    }
    let mut out = Vec::new();
    for first in (0..=degree).rev() {
        for mut rest in monomials_of_degree(nvars - 1, degree - first) {
            let mut m = vec![first as u8];
            m.append(&mut rest);
            out.push(m);
        }
    }
    out
}

impl JetSpace {
    fn build(nvars: usize, order: usize) -> JetSpace {
        let mut monomials = Vec::new();
        let mut len_by_order = Vec::new();
        for d in 0..=order {
            monomials.extend(monomials_of_degree(nvars, d));
            len_by_order.push(monomials.len());
        }
        let index: HashMap<Vec<u8>, usize> =
            monomials.iter().cloned().enumerate().map(|(i, m)| (m, i)).collect();
        let degree = |m: &[u8]| m.iter().map(|&a| a as usize).sum::<usize>();

        let mut mul = Vec::new();
        for (i, a) in monomials.iter().enumerate() {
            for (j, b) in monomials.iter().enumerate() {
                if degree(a) + degree(b) > order {
                    continue;
                }
                let sum: Vec<u8> = a.iter().zip(b).map(|(x, y)| x + y).collect();
                mul.push((i as u32, j as u32, index[&sum] as u32));
            }
        }
        mul.sort_by_key(|&(_, _, k)| degree(&monomials[k as usize]));
        let mut mul_end_by_order = vec![0; order + 1];
        for (d, end) in mul_end_by_order.iter_mut().enumerate() {
            *end = mul
                .iter()
                .take_while(|&&(_, _, k)| degree(&monomials[k as usize]) <= d)
                .count();
        }

        let mut deriv = Vec::with_capacity(nvars);
        for v in 0..nvars {
            let limit = if order == 0 { 0 } else { len_by_order[order - 1] };
            let table = (0..limit)
                .map(|t| {
                    let mut src = monomials[t].clone();
                    src[v] += 1;
                    (index[&src] as u32, src[v] as f64)
                })
                .collect();
            deriv.push(table);
        }

        let factorial_weight = monomials
            .iter()
            .map(|m| m.iter().map(|&a| factorial(a as usize)).product())
            .collect();

        JetSpace {
            nvars,
            order,
            monomials,
            len_by_order,
            mul,
            mul_end_by_order,
            deriv,
            factorial_weight,
        }
    }

    /// Returns the interned space for `nvars` variables truncated at `order`.
    pub fn get(nvars: usize, order: usize) -> &'static JetSpace {
        static SPACES: OnceLock<Mutex<HashMap<(usize, usize), &'static JetSpace>>> =
            OnceLock::new();
        let map = SPACES.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = map.lock().expect("jet space table poisoned");
        guard
            .entry((nvars, order))
            .or_insert_with(|| Box::leak(Box::new(JetSpace::build(nvars, order))))
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Number of coefficients of a jet truncated at `order`.
    pub fn len(&self, order: usize) -> usize {
        self.len_by_order[order]
    }

    fn index_of(&self, alpha: &[u8]) -> Option<usize> {
        let d: usize = alpha.iter().map(|&a| a as usize).sum();
        if d > self.order {
            return None;
        }
        let start = if d == 0 { 0 } else { self.len_by_order[d - 1] };
        (start..self.len_by_order[d]).find(|&i| self.monomials[i] == alpha)
    }
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// Inline storage covers second-order jets in three variables.
type Coeffs = SmallVec<[f64; 10]>;

/// A truncated Taylor expansion at a point.
#[derive(Clone, Debug)]
pub struct Jet {
    space: &'static JetSpace,
    order: usize,
    c: Coeffs,
}

impl Jet {
    pub fn constant(space: &'static JetSpace, value: f64) -> Jet {
        let mut c: Coeffs = smallvec![0.0; space.len(space.order)];
        c[0] = value;
        Jet { space, order: space.order, c }
    }

    /// The coordinate function `x_var` expanded around `x_var = at`.
    pub fn variable(space: &'static JetSpace, var: usize, at: f64) -> Jet {
        let mut j = Jet::constant(space, at);
        if space.order > 0 {
            let mut alpha = vec![0u8; space.nvars];
            alpha[var] = 1;
            let i = space.index_of(&alpha).expect("degree-one monomial");
            j.c[i] = 1.0;
        }
        j
    }

    pub fn zero_like(&self) -> Jet {
        Jet { space: self.space, order: self.order, c: smallvec![0.0; self.c.len()] }
    }

    pub fn constant_like(&self, value: f64) -> Jet {
        let mut j = self.zero_like();
        j.c[0] = value;
        j
    }

    pub fn space(&self) -> &'static JetSpace {
        self.space
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn value(&self) -> f64 {
        self.c[0]
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.c
    }

    /// The partial derivative `∂^α f` at the expansion point.
    pub fn partial(&self, alpha: &[u8]) -> Option<f64> {
        let d: usize = alpha.iter().map(|&a| a as usize).sum();
        if d > self.order || alpha.len() != self.space.nvars {
            return None;
        }
        let i = self.space.index_of(alpha)?;
        Some(self.c[i] * self.space.factorial_weight[i])
    }

    pub fn truncate(&self, order: usize) -> Jet {
        let order = order.min(self.order);
        Jet { space: self.space, order, c: Coeffs::from_slice(&self.c[..self.space.len(order)]) }
    }

    /// Exact partial derivative along variable `var`; the order drops by one.
    pub fn diff(&self, var: usize) -> Jet {
        assert!(self.order > 0, "cannot differentiate an order-0 jet");
        let order = self.order - 1;
        let len = self.space.len(order);
        let table = &self.space.deriv[var];
        let c = (0..len)
            .map(|t| {
                let (src, f) = table[t];
                f * self.c[src as usize]
            })
            .collect();
        Jet { space: self.space, order, c }
    }

    pub fn add(&self, o: &Jet) -> Jet {
        let order = self.order.min(o.order);
        let len = self.space.len(order);
        let c = (0..len).map(|i| self.c[i] + o.c[i]).collect();
        Jet { space: self.space, order, c }
    }

    pub fn sub(&self, o: &Jet) -> Jet {
        let order = self.order.min(o.order);
        let len = self.space.len(order);
        let c = (0..len).map(|i| self.c[i] - o.c[i]).collect();
        Jet { space: self.space, order, c }
    }

    pub fn neg(&self) -> Jet {
        Jet { space: self.space, order: self.order, c: self.c.iter().map(|x| -x).collect() }
    }

    pub fn scale(&self, k: f64) -> Jet {
        Jet { space: self.space, order: self.order, c: self.c.iter().map(|x| k * x).collect() }
    }

    pub fn add_scalar(&self, k: f64) -> Jet {
        let mut j = self.clone();
        j.c[0] += k;
        j
    }

    pub fn mul(&self, o: &Jet) -> Jet {
        let order = self.order.min(o.order);
        let mut c: Coeffs = smallvec![0.0; self.space.len(order)];
        for &(i, j, k) in &self.space.mul[..self.space.mul_end_by_order[order]] {
            c[k as usize] += self.c[i as usize] * o.c[j as usize];
        }
        Jet { space: self.space, order, c }
    }

    /// `self += a * b`, truncated to the lowest order involved.
    pub fn fma_assign(&mut self, a: &Jet, b: &Jet) {
        let order = self.order.min(a.order).min(b.order);
        if order < self.order {
            self.c.truncate(self.space.len(order));
            self.order = order;
        }
        for &(i, j, k) in &self.space.mul[..self.space.mul_end_by_order[order]] {
            self.c[k as usize] += a.c[i as usize] * b.c[j as usize];
        }
    }

    pub fn add_assign(&mut self, o: &Jet) {
        let order = self.order.min(o.order);
        if order < self.order {
            self.c.truncate(self.space.len(order));
            self.order = order;
        }
        for (x, y) in self.c.iter_mut().zip(&o.c) {
            *x += y;
        }
    }

    /// Applies a scalar function given its derivatives `d[k] = f^(k)(x0)` at the
    /// constant term.
    pub fn compose(&self, d: &[f64]) -> Jet {
        let mut h = self.clone();
        h.c[0] = 0.0;
        let k = self.order;
        let mut acc = self.constant_like(d[k] / factorial(k));
        for i in (0..k).rev() {
            acc = acc.mul(&h).add_scalar(d[i] / factorial(i));
        }
        acc
    }

    pub fn recip(&self) -> Jet {
        let x = self.c[0];
        let mut d = Vec::with_capacity(self.order + 1);
        let mut f = 1.0 / x;
        for k in 0..=self.order {
            d.push(f);
            f *= -((k + 1) as f64) / x;
        }
        self.compose(&d)
    }

    pub fn div(&self, o: &Jet) -> Jet {
        self.mul(&o.recip())
    }

    pub fn exp(&self) -> Jet {
        let e = self.c[0].exp();
        self.compose(&vec![e; self.order + 1])
    }

    pub fn ln(&self) -> Jet {
        let x = self.c[0];
        let mut d = vec![x.ln()];
        for k in 1..=self.order {
            let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
            d.push(sign * factorial(k - 1) / x.powi(k as i32));
        }
        self.compose(&d)
    }

    pub fn sin(&self) -> Jet {
        let (s, c) = self.c[0].sin_cos();
        let cycle = [s, c, -s, -c];
        self.compose(&(0..=self.order).map(|k| cycle[k % 4]).collect::<Vec<_>>())
    }

    pub fn cos(&self) -> Jet {
        let (s, c) = self.c[0].sin_cos();
        let cycle = [c, -s, -c, s];
        self.compose(&(0..=self.order).map(|k| cycle[k % 4]).collect::<Vec<_>>())
    }

    pub fn tan(&self) -> Jet {
        self.sin().div(&self.cos())
    }

    pub fn tanh(&self) -> Jet {
        let e2 = self.scale(2.0).exp();
        e2.add_scalar(-1.0).div(&e2.add_scalar(1.0))
    }

    /// `self^p` for real `p`; the constant term must be positive unless `p` is
    /// a non-negative integer.
    pub fn powf(&self, p: f64) -> Jet {
        let x = self.c[0];
        let mut d = Vec::with_capacity(self.order + 1);
        let mut coeff = 1.0;
        for k in 0..=self.order {
            d.push(coeff * x.powf(p - k as f64));
            coeff *= p - k as f64;
        }
        self.compose(&d)
    }

    pub fn powi(&self, p: i32) -> Jet {
        if p < 0 {
            return self.powi(-p).recip();
        }
        let mut result = self.constant_like(1.0);
        let mut base = self.clone();
        let mut e = p as u32;
        while e > 0 {
            if e & 1 == 1 {
                result = result.mul(&base);
            }
            e >>= 1;
            if e > 0 {
                base = base.mul(&base);
            }
        }
        result
    }

    pub fn sqrt(&self) -> Jet {
        self.powf(0.5)
    }
}

/// Sum of products `Σ a_i b_i`.
pub fn dot(a: &[Jet], b: &[Jet]) -> Jet {
    let mut acc = a[0].zero_like();
    for (x, y) in a.iter().zip(b) {
        acc.fma_assign(x, y);
    }
    acc
}
