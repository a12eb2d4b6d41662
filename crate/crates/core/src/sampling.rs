//! Deterministic low-discrepancy sampling of chart domains.

use crate::chart::Chart;
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Points whose domain predicate is at most this are rejected.
pub const DOMAIN_MARGIN: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSpec {
    pub count: usize,
    pub seed: u64,
}

impl SampleSpec {
    pub fn new(count: usize, seed: u64) -> SampleSpec {
        SampleSpec { count, seed }
    }
}

const PRIMES: [u32; 8] = [2, 3, 5, 7, 11, 13, 17, 19];

fn radical_inverse(mut i: u64, base: u32) -> f64 {
    let b = base as f64;
    let mut inv = 1.0 / b;
    let mut out = 0.0;
    while i > 0 {
        out += (i % base as u64) as f64 * inv;
        i /= base as u64;
        inv /= b;
    }
    out
}

/// Halton points in the chart's bounding box, shifted by a seeded random
/// rotation and filtered by the domain predicate.
pub fn sample_points(chart: &Chart, spec: SampleSpec) -> Result<Vec<Vec<f64>>> {
    let n = chart.dim();
    assert!(n <= PRIMES.len(), "sampling supports at most {} dimensions", PRIMES.len());
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let shift: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
    let bounds = chart.bounds();
    let mut out = Vec::with_capacity(spec.count);
    let max_tries = 1000 * spec.count.max(1) as u64;
    let mut i = 1u64;
    while out.len() < spec.count && i <= max_tries {
        let p: Vec<f64> = (0..n)
            .map(|k| {
                let u = (radical_inverse(i, PRIMES[k]) + shift[k]).fract();
                bounds[k].0 + u * (bounds[k].1 - bounds[k].0)
            })
            .collect();
        i += 1;
        if chart.domain_value(&p).is_ok_and(|d| d > DOMAIN_MARGIN) {
            out.push(p);
        }
    }
    if out.len() < spec.count {
        return Err(Error::SamplingExhausted { wanted: spec.count, got: out.len() });
    }
    Ok(out)
}

/// A seeded generator for auxiliary random choices.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
