//! Colliders from a TOML scene file, spatial-hash pairs and self-collision
//! pairs with ring exclusion.

use graphcloth::energy::hash::close_pairs;
use graphcloth::energy::sdf::load_colliders;
use graphcloth::energy::{MaterialParams, PotentialSet, Term, TermSet};
use graphcloth::mesh::Mesh;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SCENE: &str = r#"
[[shape]]
type = "sphere"
center = [0.0, 0.0, -2.0]
radius = 1.5

[[shape]]
type = "plane"
normal = [0.0, 0.0, 1.0]
offset = -3.0
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("scene.toml");
    std::fs::write(&path, SCENE)?;
    let scene = load_colliders(&path)?;
    for p in [[0.0, 0.0, 0.0], [0.0, 0.0, -1.0], [5.0, 0.0, -3.5]] {
        let (d, n) = scene.query(p);
        println!("sdf at {p:?}: {d:+.3} cm, gradient {n:.3?}");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let points: Vec<[f64; 3]> = (0..200).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
    println!("random cloud: {} pairs closer than 0.1", close_pairs(&points, 0.1).len());

    // a sheet folded onto itself
    let mut mesh = Mesh::grid(12, 4, 0.5);
    for p in &mut mesh.positions {
        if p[0] > 3.0 {
            p[0] = 6.0 - p[0];
            p[2] = 0.3;
        }
    }
    let set = PotentialSet::new(&mesh, &MaterialParams::default(), None, TermSet::elastic().with(Term::SelfCollision))?;
    let pairs = set.self_collision_pairs(&mesh.positions);
    let energy = set.energy(&mesh.positions)?;
    println!("folded sheet: {} self-collision pairs, Φ_sc {:.4e} erg", pairs.len(), energy.self_collision);
    Ok(())
}
