//! Central-difference check of the autodiff forces, per term.

use super::{MaterialParams, PotentialSet, Result, SdfCollider, Term, TermSet};
use crate::mesh::Mesh;

/// Difference step relative to the mean rest edge length.
pub const RELATIVE_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TermCheck {
    pub term: Term,
    /// `max |F_ad - F_fd| / max(|F_ad|, |F_fd|)` over all components
    pub max_rel_error: f64,
    /// largest autodiff force component (dyn)
    pub max_force: f64,
}

/// `-∂Φ/∂x` by central differences with step `h`.
pub fn fd_forces(set: &PotentialSet, positions: &[[f64; 3]], h: f64) -> Result<Vec<[f64; 3]>> {
    Ok(fd_forces_with_bound(set, positions, h)?.0)
}

/// Finite-difference forces and a bound on their rounding error,
/// `8 ε max|Φ| / h`.
fn fd_forces_with_bound(set: &PotentialSet, positions: &[[f64; 3]], h: f64) -> Result<(Vec<[f64; 3]>, f64)> {
    let mut largest = 0.0f64;
    let mut out = vec![[0.0; 3]; positions.len()];
    let mut x = positions.to_vec();
    for i in 0..x.len() {
        for a in 0..3 {
            let orig = x[i][a];
            x[i][a] = orig + h;
            let up = set.energy(&x)?.total();
            x[i][a] = orig - h;
            let down = set.energy(&x)?.total();
            x[i][a] = orig;
            largest = largest.max(up.abs()).max(down.abs());
            out[i][a] = -(up - down) / (2.0 * h);
        }
    }
    Ok((out, 8.0 * f64::EPSILON * largest / h))
}

/// Max-norm relative difference; zero when both sides vanish.
pub fn relative_error(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    let mut diff = 0.0f64;
    let mut scale = 0.0f64;
    for (p, q) in a.iter().zip(b) {
        for (x, y) in p.iter().zip(q) {
            diff = diff.max((x - y).abs());
            scale = scale.max(x.abs()).max(y.abs());
        }
    }
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Compares autodiff forces of each term of `terms` separately with the
/// Richardson extrapolation `(4 D(h) - D(2h)) / 3` of central differences.
/// Where the autodiff forces vanish identically the relative error is
/// undefined; it is reported as zero when the difference quotients are
/// within their own error estimate and as one otherwise.
pub fn check_terms(
    mesh: &Mesh,
    params: &MaterialParams,
    collider: Option<&SdfCollider>,
    terms: TermSet,
    positions: &[[f64; 3]],
) -> Result<Vec<TermCheck>> {
    let h = RELATIVE_STEP * mesh.mean_rest_edge_length().max(f64::MIN_POSITIVE);
    let mut out = Vec::new();
    for term in terms.iter() {
        let set = PotentialSet::new(mesh, params, collider, TermSet::empty().with(term))?;
        let ad = set.evaluate(positions)?;
        let (fine, noise) = fd_forces_with_bound(&set, positions, h)?;
        let (coarse, _) = fd_forces_with_bound(&set, positions, 2.0 * h)?;
        let fd: Vec<[f64; 3]> = fine
            .iter()
            .zip(&coarse)
            .map(|(f, c)| [0, 1, 2].map(|a| (4.0 * f[a] - c[a]) / 3.0))
            .collect();
        let max_force = ad.max_force();
        let max_rel_error = if max_force == 0.0 {
            let largest = |v: &[[f64; 3]]| v.iter().flat_map(|p| p.iter()).fold(0.0f64, |m, x| m.max(x.abs()));
            let spread = fine
                .iter()
                .zip(&coarse)
                .flat_map(|(f, c)| (0..3).map(move |a| (f[a] - c[a]).abs()))
                .fold(0.0f64, f64::max);
            if largest(&fine) <= 2.0 * spread + noise {
                0.0
            } else {
                1.0
            }
        } else {
            relative_error(&ad.forces, &fd)
        };
        out.push(TermCheck { term, max_rel_error, max_force });
    }
    Ok(out)
}
