//! Evaluates every potential term on a sagging, pinned grid.

use graphcloth::energy::{MaterialParams, PotentialSet, SdfCollider, Term, TermSet};
use graphcloth::mesh::Mesh;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut mesh = Mesh::grid(8, 8, 1.0);
    let boundary = mesh.boundary_mask();
    mesh.set_pinned(boundary)?;
    for p in &mut mesh.positions {
        let (u, v) = (p[0] / 8.0, p[1] / 8.0);
        p[2] = -1.5 * (std::f64::consts::PI * u).sin() * (std::f64::consts::PI * v).sin();
    }

    let params = MaterialParams::default();
    let collider = SdfCollider::sphere([4.0, 4.0, -5.0], 3.7);
    let set = PotentialSet::new(&mesh, &params, Some(&collider), TermSet::all())?;
    let report = set.evaluate(&mesh.positions)?;

    println!("Φ = {:.6e} erg", report.total);
    for term in Term::ALL {
        println!("  {:<8} {:.6e}", term.to_string(), report.terms.get(term));
    }
    let masked = report.masked_forces();
    let free_max = masked.iter().flatten().fold(0.0f64, |m, f| m.max(f.abs()));
    println!("max |F| {:.4e} dyn over all vertices, {free_max:.4e} over free ones", report.max_force());
    println!("self-collision rest length R = {:.4} cm", set.self_rest_length().unwrap_or(0.0));
    Ok(())
}
