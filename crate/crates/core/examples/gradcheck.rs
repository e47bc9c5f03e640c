//! Compares autodiff forces of each term with finite differences of the
//! energy on a perturbed grid.

use graphcloth::energy::check::check_terms;
use graphcloth::energy::{MaterialParams, SdfCollider, TermSet};
use graphcloth::mesh::Mesh;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut mesh = Mesh::grid(5, 5, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for p in &mut mesh.positions {
        for c in p.iter_mut() {
            *c += 0.2 * (rng.gen::<f64>() - 0.5);
        }
    }
    let params = MaterialParams { self_rest_length: Some(2.5), ..Default::default() };
    let collider = SdfCollider::sphere([2.5, 2.5, -3.0], 3.05);
    let positions = mesh.positions.clone();
    let checks = check_terms(&mesh, &params, Some(&collider), TermSet::all(), &positions)?;
    for c in &checks {
        println!("{:<8} max relative error {:.3e}, max |F| {:.3e} dyn", c.term.to_string(), c.max_rel_error, c.max_force);
    }
    Ok(())
}
