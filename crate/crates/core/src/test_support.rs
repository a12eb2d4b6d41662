//! Charts and configurations shared by unit tests.

use crate::chart::Chart;
use crate::smms::SmmsData;
use rand::Rng;
use std::sync::Arc;

pub fn sphere(n: usize) -> Chart {
    crate::models::sphere_chart(n)
}

/// A metric with no conformal symmetry, so Weyl and Cotton do not vanish.
pub fn generic_chart() -> Chart {
    let m = [
        ["1 + 0.2*x2^2", "0.1*x3", "0"],
        ["0.1*x3", "1 + 0.1*x1*x3", "0.1*x1"],
        ["0", "0.1*x1", "1 + 0.3*x1^2"],
    ];
    let metric: Vec<Vec<String>> = m.iter().map(|r| r.iter().map(|s| s.to_string()).collect()).collect();
    Chart::new("generic", &["x1", "x2", "x3"], &metric, "1 - (x1^2 + x2^2 + x3^2)", &[(-1.0, 1.0); 3]).unwrap()
}

/// A seeded SMMS on the generic chart with a random density and `μ`, plus a
/// point inside the domain.
pub fn random_smms(seed: u64, m: f64) -> (SmmsData, Vec<f64>) {
    let mut r = crate::sampling::rng(seed);
    let mut k = || r.gen_range(-0.3..0.3);
    let v = format!("1.5 + {}*x1 + {}*x2*x3 + {}*x3^2 + {}*x1*x2^2", k(), k(), k(), k());
    let mu = 3.0 * k();
    let p = vec![k(), k(), k()];
    (SmmsData::new(Arc::new(generic_chart()), &v, m, mu).unwrap(), p)
}
