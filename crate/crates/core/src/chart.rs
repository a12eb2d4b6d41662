//! Coordinate charts carrying a Riemannian metric.

use crate::error::{Error, Result};
use crate::expr::Expr;
use nalgebra::DMatrix;

/// A coordinate patch with a metric given by expressions and domain
/// predicates (all `> 0` inside). `bounds` is a box enclosing the domain, used
/// for sampling.
#[derive(Clone, Debug)]
pub struct Chart {
    name: String,
    coords: Vec<String>,
    entries: Vec<usize>,
    exprs: Vec<Expr>,
    domains: Vec<Expr>,
    bounds: Vec<(f64, f64)>,
}

fn squash(s: &str) -> String {
    s.chars().filter(|c| !c.is_whitespace()).collect()
}

impl Chart {
    /// Builds a chart from a full `n × n` array of metric expressions.
    pub fn new(
        name: &str,
        coords: &[&str],
        metric: &[Vec<String>],
        domain: &str,
        bounds: &[(f64, f64)],
    ) -> Result<Chart> {
        let n = coords.len();
        let coords: Vec<String> = coords.iter().map(|s| s.to_string()).collect();
        if metric.len() != n || metric.iter().any(|row| row.len() != n) {
            return Err(Error::DimensionMismatch { expected: n, got: metric.len() });
        }
        if bounds.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: bounds.len() });
        }
        let mut exprs: Vec<Expr> = Vec::new();
        let mut keys: Vec<String> = Vec::new();
        let mut entries = vec![0; n * n];
        for i in 0..n {
            for j in 0..n {
                if squash(&metric[i][j]) != squash(&metric[j][i]) {
                    return Err(Error::NonSymmetricMetric { i, j });
                }
                let key = squash(&metric[i][j]);
                let slot = match keys.iter().position(|k| *k == key) {
                    Some(p) => p,
                    None => {
                        exprs.push(Expr::parse(&metric[i][j], &coords)?);
                        keys.push(key);
                        exprs.len() - 1
                    }
                };
                entries[i * n + j] = slot;
            }
        }
        let domain = Expr::parse(domain, &coords)?;
        Ok(Chart { name: name.to_string(), coords, entries, exprs, domains: vec![domain], bounds: bounds.to_vec() })
    }

    /// `g = factor · δ`.
    pub fn conformally_flat(
        name: &str,
        coords: &[&str],
        factor: &str,
        domain: &str,
        bounds: &[(f64, f64)],
    ) -> Result<Chart> {
        let n = coords.len();
        let metric: Vec<Vec<String>> = (0..n)
            .map(|i| (0..n).map(|j| if i == j { factor.to_string() } else { "0".into() }).collect())
            .collect();
        Chart::new(name, coords, &metric, domain, bounds)
    }

    /// Flat `ℝⁿ` restricted to the ball of radius `radius`.
    pub fn euclidean(n: usize, radius: f64) -> Chart {
        let names = coord_names(n);
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let r2 = format!("{} - ({})", radius * radius, sum_of_squares(&names));
        Chart::conformally_flat("euclidean", &refs, "1", &r2, &vec![(-radius, radius); n])
            .expect("euclidean chart is well formed")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[String] {
        &self.coords
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn domains(&self) -> &[Expr] {
        &self.domains
    }

    /// Adds a further domain predicate, parsed in this chart's coordinates.
    pub fn with_domain(mut self, predicate: &str) -> Result<Chart> {
        self.domains.push(self.parse(predicate)?);
        Ok(self)
    }

    /// Distinct metric expressions and the `n × n` map into them.
    pub fn metric_exprs(&self) -> (&[Expr], &[usize]) {
        (&self.exprs, &self.entries)
    }

    pub fn parse(&self, source: &str) -> Result<Expr> {
        Ok(Expr::parse(source, &self.coords)?)
    }

    /// The smallest domain predicate value at `point`.
    pub fn domain_value(&self, point: &[f64]) -> Result<f64> {
        let mut out = f64::INFINITY;
        for d in &self.domains {
            out = out.min(d.eval_f64(point)?);
        }
        Ok(out)
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        self.domain_value(point).is_ok_and(|v| v > 0.0)
    }

    pub fn metric_at(&self, point: &[f64]) -> Result<DMatrix<f64>> {
        let n = self.dim();
        let vals: Vec<f64> = self.exprs.iter().map(|e| e.eval_f64(point)).collect::<std::result::Result<_, _>>()?;
        let g = DMatrix::from_fn(n, n, |i, j| vals[self.entries[i * n + j]]);
        if g.clone().cholesky().is_none() {
            return Err(Error::DegenerateMetric { point: point.to_vec() });
        }
        Ok(g)
    }

    /// Half the smallest side of the bounding box.
    pub fn length_scale(&self) -> f64 {
        self.bounds.iter().map(|(a, b)| 0.5 * (b - a)).fold(f64::INFINITY, f64::min)
    }
}

pub fn coord_names(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("x{i}")).collect()
}

pub fn sum_of_squares(names: &[String]) -> String {
    names.iter().map(|c| format!("{c}^2")).collect::<Vec<_>>().join(" + ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_asymmetric_metric() {
        let m = vec![vec!["1".to_string(), "x1".into()], vec!["x2".into(), "1".into()]];
        let err = Chart::new("bad", &["x1", "x2"], &m, "1", &[(-1.0, 1.0); 2]).unwrap_err();
        assert_eq!(err, Error::NonSymmetricMetric { i: 0, j: 1 });
    }

    #[test]
    fn degenerate_metric_reported() {
        let c = Chart::conformally_flat("c", &["x1", "x2"], "x1", "1", &[(-1.0, 1.0); 2]).unwrap();
        assert!(matches!(c.metric_at(&[-0.5, 0.0]), Err(Error::DegenerateMetric { .. })));
        assert!(c.metric_at(&[0.5, 0.0]).is_ok());
    }

    #[test]
    fn euclidean_domain() {
        let c = Chart::euclidean(3, 2.0);
        assert!(c.contains(&[1.0, 1.0, 0.0]));
        assert!(!c.contains(&[2.0, 1.0, 0.0]));
        assert_eq!(c.metric_exprs().0.len(), 2);
    }
}
