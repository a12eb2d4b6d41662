//! Names of every suite and check with a one-line description.

use tractorlab::identities::IDENTITY_NAMES;

pub const SUITES: [(&str, &str); 5] = [
    ("identities", "pointwise identities between weighted curvature and the W-tractor calculus"),
    ("equivalence", "scale tractors of candidate densities: W-parallel and orthogonal to J~"),
    ("holonomy", "transport norm drift, holonomy algebra closure, flatness, dim Q^W"),
    ("singularity_sets", "zero sets of <X, I> for W-parallel tractors I"),
    ("models", "expected constants of the named model configurations"),
];

fn identity_description(name: &str) -> &'static str {
    match name {
        "lemma_J" => "J^W in terms of J, y and the flatness defect",
        "lemma_P" => "P^W in terms of P, the Hessian of v and the defect",
        "lemma_dP" => "dP^W in terms of dP, Rm(grad v) and P^W",
        "lemma_trA" => "traces of A^W and its g-wedge-g coefficient",
        "lemma_divA" => "weighted divergence of A^W against dP^W",
        "lemma_divdP" => "weighted divergence of dP^W against A^W and P^W",
        "lemma_algebra" => "weighted divergence of the W-derivative of a tractor",
        "lemma_traceT" => "trace of the W-derivative of a tractor",
        "bgg_conn" => "codifferential of the W-derivative of a tractor",
        "bgg_curv" => "codifferential of the W-curvature acting on a tractor",
        "partial_star_curv" => "codifferential of the W-curvature as an adjoint-valued form",
        _ => "",
    }
}

/// Lines printed by `list-checks`.
pub fn listing() -> Vec<String> {
    let mut out = Vec::new();
    for (suite, about) in SUITES {
        out.push(format!("{suite:<18} {about}"));
        if suite == "identities" {
            for name in IDENTITY_NAMES {
                out.push(format!("  {name:<16} {}", identity_description(name)));
            }
        }
    }
    out
}
