//! Suite runners. Each returns its rows in a fixed order.

use std::time::Instant;
use tractorlab::holonomy::{
    default_base, flatness_classify, holonomy_algebra, loop_family, qw_dimension, singular_set_probe,
    transport_matrix, HolonomyOptions, SingularKind, TransportOptions,
};
use tractorlab::identities::{check_equivalence, check_identity, qe_pair_residuals, IDENTITY_NAMES};
use tractorlab::models::{make_qe_pairs, warped_product_check};
use tractorlab::sampling::{sample_points, SampleSpec};
use tractorlab::tractor::{h_jet, normal_connection, ConnectionKind, TractorField};
use tractorlab::{Error, Expr};

use crate::config::{sphere_dim, Setup};
use crate::report::{HolonomySummary, Row, SingularSummary};
use crate::CliError;

const DRIFT_TOL: f64 = 1e-9;
const CLOSURE_TOL: f64 = 1e-6;
const CASE_TOL: f64 = 1e-6;
const DEFECT_TOL: f64 = 1e-7;
const SINGULAR_TOL: f64 = 1e-7;
const LAPLACIAN_MIN: f64 = 0.1;
const GRAM_TOL: f64 = 1e-9;
const PARALLEL_TOL: f64 = 1e-8;
const PAIR_TOL: f64 = 1e-7;
const LAMBDA_TOL: f64 = 1e-7;
const EINSTEIN_TOL: f64 = 1e-6;
/// Sample points for the singular-set search per configured sample.
const PROBE_FACTOR: usize = 200;

#[derive(Default)]
pub struct Outputs {
    pub rows: Vec<Row>,
    pub holonomy: Option<HolonomySummary>,
    pub singular: Vec<SingularSummary>,
}

pub fn run_suite(name: &str, s: &Setup, out: &mut Outputs) -> Result<(), CliError> {
    match name {
        "identities" => identities(s, out),
        "equivalence" => equivalence(s, out),
        "holonomy" => holonomy(s, out),
        "singularity_sets" => singularity_sets(s, out),
        "models" => models(s, out),
        other => Err(CliError::Config(format!("unknown suite '{other}'"))),
    }
}

fn identities(s: &Setup, out: &mut Outputs) -> Result<(), CliError> {
    for name in IDENTITY_NAMES {
        let t = Instant::now();
        let r = check_identity(&s.smms, name, s.spec)?;
        out.rows.push(
            Row::check("identities", name, r.max_residual, s.config.tolerance)
                .at(&r.worst_point)
                .timed(t.elapsed().as_secs_f64()),
        );
    }
    Ok(())
}

/// Candidate densities: configured expressions, else the model's scales, else `1`.
fn candidate_scales(s: &Setup) -> Result<Vec<(String, Expr)>, CliError> {
    if !s.config.scales.is_empty() {
        return s
            .config
            .scales
            .iter()
            .map(|src| Ok((src.clone(), s.smms.chart.parse(src)?)))
            .collect();
    }
    if let Some(m) = &s.model {
        if !m.scales.is_empty() {
            return Ok(m.scales.clone());
        }
    }
    Ok(vec![("1".into(), s.smms.chart.parse("1")?)])
}

fn equivalence(s: &Setup, out: &mut Outputs) -> Result<(), CliError> {
    for (label, u) in candidate_scales(s)? {
        let t = Instant::now();
        let r = check_equivalence(&s.smms, &u, s.spec)?;
        out.rows.push(
            Row::check("equivalence", &label, r.nabla_w_residual.max(r.membership_residual), s.config.tolerance)
                .note(format!("lambda {:.12}, variance {:.3e}", r.lambda_est, r.lambda_variance))
                .timed(t.elapsed().as_secs_f64()),
        );
    }
    Ok(())
}

fn holonomy(s: &Setup, out: &mut Outputs) -> Result<(), CliError> {
    let smms = &s.smms;
    let n = smms.dim();
    let opts = HolonomyOptions {
        transport: TransportOptions::with_steps(s.config.transport_steps),
        ..HolonomyOptions::default()
    };
    let base = default_base(&smms.chart, s.spec.seed)?;

    let t = Instant::now();
    let probe = loop_family(&smms.chart, &base, 1, opts.loop_fraction, s.spec.seed ^ 0xd1f7)?;
    let drift = transport_matrix(smms, ConnectionKind::W, &probe[0], opts.transport)?.metric_drift;
    out.rows.push(
        Row::check("holonomy", "transport_metric_drift", drift, DRIFT_TOL).at(&base).timed(t.elapsed().as_secs_f64()),
    );

    let t = Instant::now();
    let flat = flatness_classify(smms, s.spec)?;
    let row = if flat.flat {
        Row::check("holonomy", "flatness", flat.case_defect, CASE_TOL).note(format!("flat, case {}", flat.case.unwrap_or(0)))
    } else {
        Row {
            max_residual: Some(flat.curvature_max),
            threshold: None,
            pass: true,
            ..Row::check("holonomy", "flatness", 0.0, 1.0)
        }
        .note("not flat")
    };
    out.rows.push(row.timed(t.elapsed().as_secs_f64()));
    if flat.flat && flat.case == Some(3) {
        let t = Instant::now();
        let mut worst = (0.0f64, base.clone());
        for p in sample_points(&smms.chart, s.spec)? {
            let d = smms.frame(&p, 2)?.flat_defect().value().abs();
            if d >= worst.0 {
                worst = (d, p);
            }
        }
        out.rows.push(
            Row::check("holonomy", "flat_defect", worst.0, DEFECT_TOL).at(&worst.1).timed(t.elapsed().as_secs_f64()),
        );
    }

    let t = Instant::now();
    let alg = holonomy_algebra(smms, ConnectionKind::W, &base, s.spec, &opts)?;
    let mut row = Row::check("holonomy", "algebra_closure", alg.closure_residual, CLOSURE_TOL)
        .at(&base)
        .note(format!("dim {}", alg.dim));
    if alg.ambiguous {
        row.pass = false;
        row.note = Some(format!("dim {}, rank cutoff ambiguous (gap under 10x)", alg.dim));
    }
    out.rows.push(row.timed(t.elapsed().as_secs_f64()));

    let t = Instant::now();
    let qw = qw_dimension(smms, &base, s.spec.seed, &opts)?;
    let fixed = qw.singular_values.iter().rev().take(qw.dim).fold(0.0f64, |a, x| a.max(*x));
    let mut row = Row::check("holonomy", "qw_dimension", fixed, opts.null_tol).at(&base).note(format!("dim {}", qw.dim));
    if qw.ambiguous || qw.dim > n + 1 {
        row.pass = false;
        row.note = Some(format!("dim {}, null-space cutoff ambiguous", qw.dim));
    }
    out.rows.push(row.timed(t.elapsed().as_secs_f64()));

    out.holonomy = Some(HolonomySummary {
        base,
        algebra_dim: alg.dim,
        algebra_singular_values: alg.singular_values,
        flat: flat.flat,
        flat_case: flat.case,
        sectional_curvature: flat.sectional_curvature,
        qw_dim: qw.dim,
        qw_singular_values: qw.singular_values,
    });
    Ok(())
}

fn candidate_tractors(s: &Setup) -> Result<Vec<(String, TractorField)>, CliError> {
    let n = s.smms.dim();
    if let Some(m) = &s.model {
        if !s.config.tractors.is_empty() {
            return Ok(s.config.tractors.iter().map(|k| (k.clone(), m.tractor(k).cloned().unwrap())).collect());
        }
        if !m.tractors.is_empty() && s.config.scales.is_empty() {
            return Ok(m.tractors.clone());
        }
    }
    Ok(candidate_scales(s)?
        .into_iter()
        .map(|(label, u)| (format!("D^W({label})"), TractorField::weighted_scale_tractor(u, s.smms.m, n)))
        .collect())
}

fn singularity_sets(s: &Setup, out: &mut Outputs) -> Result<(), CliError> {
    let spec = SampleSpec::new(s.config.samples * PROBE_FACTOR, s.spec.seed);
    for (label, field) in candidate_tractors(s)? {
        let t = Instant::now();
        let r = match singular_set_probe(&s.smms, &field, spec) {
            Ok(r) => r,
            Err(Error::Invalid(msg)) => {
                out.singular.push(SingularSummary { tractor: label, kind: Some("skipped".into()), note: Some(msg), ..Default::default() });
                continue;
            }
            Err(Error::Ambiguous(msg)) => {
                out.rows.push(
                    Row { max_residual: None, threshold: None, pass: false, ..Row::check("singularity_sets", &label, 0.0, 1.0) }
                        .note(msg)
                        .timed(t.elapsed().as_secs_f64()),
                );
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let row = match r.kind {
            SingularKind::Empty => {
                let mut row = Row::check("singularity_sets", &label, r.parallel_residual, SINGULAR_TOL);
                row.pass &= r.min_abs_u > 0.0;
                row.note(format!("|I|^2 < 0, min |u| {:.3e}", r.min_abs_u))
            }
            SingularKind::Points => {
                let mut row = Row::check("singularity_sets", &label, r.max_gradient_at_zeros, SINGULAR_TOL);
                row.pass &= !r.zeros.is_empty() && r.min_laplacian_at_zeros > LAPLACIAN_MIN;
                if let Some(z) = r.zeros.first() {
                    row = row.at(z);
                }
                row.note(format!("|I|^2 = 0, {} isolated zero(s)", r.zeros.len()))
            }
            SingularKind::Hypersurface => {
                let mut row = Row::check(
                    "singularity_sets",
                    &label,
                    r.gradient_defect.max(r.umbilicity_residual),
                    SINGULAR_TOL,
                );
                row.pass &= r.level_points > 0;
                row.note(format!("|I|^2 > 0, {} level-set points", r.level_points))
            }
        };
        out.rows.push(row.timed(t.elapsed().as_secs_f64()));
        out.singular.push(SingularSummary {
            tractor: label,
            kind: Some(format!("{:?}", r.kind).to_lowercase()),
            norm2: Some(r.norm2),
            zeros: r.zeros,
            note: None,
        });
    }
    Ok(())
}

fn models(s: &Setup, out: &mut Outputs) -> Result<(), CliError> {
    let Some(model) = &s.model else {
        eprintln!("models suite: inline manifold has no model table, nothing to check");
        return Ok(());
    };
    if let Some(n) = sphere_dim(&model.name) {
        let t = Instant::now();
        let names: Vec<String> = (0..n + 2).map(|i| format!("I{i}")).collect();
        let (mut gram, mut nabla) = ((0.0f64, vec![]), (0.0f64, vec![]));
        for p in sample_points(&model.smms.chart, s.spec)? {
            let f = model.smms.frame(&p, 3)?;
            let ts = names.iter().map(|k| model.tractor(k).unwrap().eval(&f)).collect::<Result<Vec<_>, _>>()?;
            for (i, a) in ts.iter().enumerate() {
                for (j, b) in ts.iter().enumerate() {
                    let want = if i != j { 0.0 } else { model.expected(&format!("norm_I{i}")).unwrap_or(1.0) };
                    let d = (h_jet(&f, a, b).value() - want).abs();
                    if d >= gram.0 {
                        gram = (d, p.clone());
                    }
                }
                let d = normal_connection(&f, a)?.iter().fold(0.0f64, |m, x| m.max(x.max_abs()));
                if d >= nabla.0 {
                    nabla = (d, p.clone());
                }
            }
        }
        let secs = t.elapsed().as_secs_f64();
        out.rows.push(Row::check("models", "basis_gram", gram.0, GRAM_TOL).at(&gram.1).timed(secs));
        out.rows.push(Row::check("models", "basis_parallel", nabla.0, PARALLEL_TOL).at(&nabla.1).timed(secs));
        for pair in make_qe_pairs(n, s.smms.m)? {
            let t = Instant::now();
            let r = qe_pair_residuals(&s.smms, &pair.i, &pair.j, s.spec)?;
            let res = r.res1.max(r.res2);
            let mut row = Row::check("models", &format!("qe_pair:{}", pair.name), res, PAIR_TOL);
            row.pass = (res < PAIR_TOL) == pair.expected_pass;
            let tag = if pair.expected_pass { "expected to hold" } else { "expected to fail" };
            out.rows.push(row.note(tag).timed(t.elapsed().as_secs_f64()));
        }
    }
    if model.name.starts_with("gaussian") {
        for (name, u) in &model.scales {
            let t = Instant::now();
            let r = check_equivalence(&model.smms, u, s.spec)?;
            let want = model.expected(&format!("lambda_{name}")).unwrap_or(f64::NAN);
            let res = (r.lambda_est - want).abs().max(r.nabla_w_residual);
            out.rows.push(
                Row::check("models", &format!("gaussian_lambda:{name}"), res, LAMBDA_TOL)
                    .note(format!("lambda {:.12}, expected {want}", r.lambda_est))
                    .timed(t.elapsed().as_secs_f64()),
            );
        }
    }
    if model.name == "warped32" {
        let t = Instant::now();
        let one = model.scale("one").expect("sphere models carry the unit scale");
        let r = warped_product_check(&model.smms, one, 2, 2.0, SampleSpec::new(s.config.samples.min(20), s.spec.seed))?;
        let res = r.residual.max((r.lambda_product - r.lambda_tractor).abs());
        out.rows.push(
            Row::check("models", "warped_einstein", res, EINSTEIN_TOL)
                .note(format!("lambda {:.9}", r.lambda_tractor))
                .timed(t.elapsed().as_secs_f64()),
        );
    }
    Ok(())
}
