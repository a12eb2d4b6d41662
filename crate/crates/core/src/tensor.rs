//! Dense tensors over a coordinate basis.

use crate::expr::Scalar;
use crate::jet::Jet;
use serde::Serialize;

/// A rank-`r` tensor with all indices running over `0..n`, stored row-major.
///
/// `upper[k]` marks slot `k` as contravariant. `weight` is the conformal
/// density weight carried alongside the components.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Tensor<T> {
    pub n: usize,
    pub upper: Vec<bool>,
    pub weight: f64,
    pub data: Vec<T>,
}

pub type TensorValue = Tensor<f64>;
pub type JetTensor = Tensor<Jet>;

/// Decodes a flat row-major index into a multi-index.
pub fn decode(mut flat: usize, n: usize, rank: usize, out: &mut [usize]) {
    for k in (0..rank).rev() {
        out[k] = flat % n;
        flat /= n;
    }
}

impl<T: Clone> Tensor<T> {
    pub fn from_fn(n: usize, upper: Vec<bool>, mut f: impl FnMut(&[usize]) -> T) -> Tensor<T> {
        let rank = upper.len();
        let len = n.pow(rank as u32);
        let mut ix = vec![0; rank];
        let data = (0..len)
            .map(|flat| {
                decode(flat, n, rank, &mut ix);
                f(&ix)
            })
            .collect();
        Tensor { n, upper, weight: 0.0, data }
    }

    pub fn lower(n: usize, rank: usize, f: impl FnMut(&[usize]) -> T) -> Tensor<T> {
        Tensor::from_fn(n, vec![false; rank], f)
    }

    pub fn rank(&self) -> usize {
        self.upper.len()
    }

    pub fn idx(&self, ix: &[usize]) -> usize {
        ix.iter().fold(0, |acc, &i| acc * self.n + i)
    }

    pub fn at(&self, ix: &[usize]) -> &T {
        &self.data[self.idx(ix)]
    }

    pub fn with_weight(mut self, w: f64) -> Self {
        self.weight = w;
        self
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Tensor<U> {
        Tensor { n: self.n, upper: self.upper.clone(), weight: self.weight, data: self.data.iter().map(f).collect() }
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn add(&self, o: &Self) -> Self {
        assert_eq!(self.data.len(), o.data.len());
        let data = self.data.iter().zip(&o.data).map(|(a, b)| a.s_add(b)).collect();
        Tensor { n: self.n, upper: self.upper.clone(), weight: self.weight, data }
    }

    pub fn sub(&self, o: &Self) -> Self {
        assert_eq!(self.data.len(), o.data.len());
        let data = self.data.iter().zip(&o.data).map(|(a, b)| a.s_sub(b)).collect();
        Tensor { n: self.n, upper: self.upper.clone(), weight: self.weight, data }
    }

    pub fn scale(&self, k: &T) -> Self {
        let data = self.data.iter().map(|a| a.s_mul(k)).collect();
        Tensor { n: self.n, upper: self.upper.clone(), weight: self.weight, data }
    }

    pub fn values(&self) -> TensorValue {
        self.map(|x| x.value())
    }
}

impl TensorValue {
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

fn sum<T: Scalar>(zero: &T, terms: impl Iterator<Item = T>) -> T {
    terms.fold(zero.constant_like(0.0), |acc, t| acc.s_add(&t))
}

/// `(h∧k)(x,y,z,w) = h(x,z)k(y,w) + h(y,w)k(x,z) − h(x,w)k(y,z) − h(y,z)k(x,w)`.
pub fn kulkarni_nomizu<T: Scalar>(h: &Tensor<T>, k: &Tensor<T>) -> Tensor<T> {
    let n = h.n;
    let a = |t: &Tensor<T>, i: usize, j: usize| t.data[i * n + j].clone();
    Tensor::lower(n, 4, |ix| {
        let (x, y, z, w) = (ix[0], ix[1], ix[2], ix[3]);
        a(h, x, z)
            .s_mul(&a(k, y, w))
            .s_add(&a(h, y, w).s_mul(&a(k, x, z)))
            .s_sub(&a(h, x, w).s_mul(&a(k, y, z)))
            .s_sub(&a(h, y, z).s_mul(&a(k, x, w)))
    })
}

/// `tr A(x, …) = Σ A(e_i, x, e_i, …)`: contracts slots 0 and 2 with `ginv`.
pub fn trace02<T: Scalar>(a: &Tensor<T>, ginv: &Tensor<T>) -> Tensor<T> {
    let n = a.n;
    let rank = a.rank();
    assert!(rank >= 3);
    let rest = rank - 2;
    let zero = &a.data[0];
    Tensor::lower(n, rest, |ix| {
        sum(
            zero,
            (0..n).flat_map(|p| (0..n).map(move |q| (p, q))).map(|(p, q)| {
                let mut full = Vec::with_capacity(rank);
                full.push(p);
                full.push(ix[0]);
                full.push(q);
                full.extend_from_slice(&ix[1..]);
                ginv.data[p * n + q].s_mul(a.at(&full))
            }),
        )
    })
}

/// Full trace `g^{ij} h_ij` of a 2-tensor.
pub fn trace2<T: Scalar>(h: &Tensor<T>, ginv: &Tensor<T>) -> T {
    sum(&h.data[0], (0..h.data.len()).map(|i| ginv.data[i].s_mul(&h.data[i])))
}

/// `(α∧h)(x,y,z) = α(x)h(y,z) − α(y)h(x,z)` for a 1-form and a 2-tensor.
pub fn wedge_form_tensor<T: Scalar>(alpha: &[T], h: &Tensor<T>) -> Tensor<T> {
    let n = h.n;
    Tensor::lower(n, 3, |ix| {
        alpha[ix[0]]
            .s_mul(&h.data[ix[1] * n + ix[2]])
            .s_sub(&alpha[ix[1]].s_mul(&h.data[ix[0] * n + ix[2]]))
    })
}

/// `(α∧β)(x,y) = α(x)β(y) − α(y)β(x)`.
pub fn wedge_forms<T: Scalar>(alpha: &[T], beta: &[T]) -> Tensor<T> {
    Tensor::lower(alpha.len(), 2, |ix| {
        alpha[ix[0]].s_mul(&beta[ix[1]]).s_sub(&alpha[ix[1]].s_mul(&beta[ix[0]]))
    })
}

/// `g^{ij} α_j`.
pub fn raise<T: Scalar>(alpha: &[T], ginv: &Tensor<T>) -> Vec<T> {
    let n = alpha.len();
    (0..n)
        .map(|i| sum(&alpha[0], (0..n).map(|j| ginv.data[i * n + j].s_mul(&alpha[j]))))
        .collect()
}

/// `g_ij X^j`.
pub fn lower_vec<T: Scalar>(x: &[T], g: &Tensor<T>) -> Vec<T> {
    raise(x, g)
}

/// Contracts a vector into slot `slot` of `t`.
pub fn insert<T: Scalar>(t: &Tensor<T>, slot: usize, x: &[T]) -> Tensor<T> {
    let n = t.n;
    let rank = t.rank();
    let mut upper = t.upper.clone();
    upper.remove(slot);
    Tensor::from_fn(n, upper, |ix| {
        let mut full: Vec<usize> = ix.to_vec();
        full.insert(slot, 0);
        sum(
            &x[0],
            (0..n).map(|p| {
                full[slot] = p;
                debug_assert_eq!(full.len(), rank);
                x[p].s_mul(t.at(&full))
            }),
        )
    })
}

/// Reorders slots so that slot `k` of the result is slot `perm[k]` of `t`.
pub fn permute<T: Scalar>(t: &Tensor<T>, perm: &[usize]) -> Tensor<T> {
    let upper = perm.iter().map(|&p| t.upper[p]).collect();
    let mut src = vec![0; perm.len()];
    Tensor::from_fn(t.n, upper, |ix| {
        for (k, &p) in perm.iter().enumerate() {
            src[p] = ix[k];
        }
        t.at(&src).clone()
    })
}

/// Largest absolute entry of `a − b` divided by `1 + max(|a|, |b|)`.
pub fn normalized_residual(a: &[f64], b: &[f64]) -> f64 {
    let scale = a.iter().chain(b).fold(0.0f64, |m, x| m.max(x.abs()));
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    diff / (1.0 + scale)
}
