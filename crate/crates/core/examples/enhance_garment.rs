//! Subdivides a coarse draped sheet and resolves the fine detail with a
//! trained integrator, with gravity and a sphere collider enabled at
//! inference. Usage: `enhance_garment [checkpoint path]`; without one a
//! small model is trained first.

use graphcloth::checkpoint::Checkpoint;
use graphcloth::energy::{MaterialParams, PotentialSet, SdfCollider, TermSet};
use graphcloth::integrator::neural_solve;
use graphcloth::mesh::{save_obj, subdivide_midpoint, Mesh};
use graphcloth::train::{generate_synthetic_dataset, train, NetworkConfig, SyntheticOptions, TrainConfig};

fn checkpoint() -> Result<Checkpoint, Box<dyn std::error::Error>> {
    if let Some(path) = std::env::args().nth(1) {
        return Ok(Checkpoint::load(path)?);
    }
    let opts = SyntheticOptions { rings: 1, ..Default::default() };
    let data = generate_synthetic_dataset(4, 1, &opts)?;
    let network = NetworkConfig { latent: 8, iterations: 2, ..Default::default() };
    let config = TrainConfig { epochs: 3, lr: 1e-3, rings: 1, batch_size: 2, ..Default::default() };
    Ok(train(&data, &MaterialParams::default(), &network, &config)?.checkpoint)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ckpt = checkpoint()?;

    // coarse sheet draped over a sphere, flat at rest
    let mut coarse = Mesh::grid(6, 6, 2.0);
    for p in &mut coarse.positions {
        let (x, y) = (p[0] - 6.0, p[1] - 6.0);
        p[2] = -0.04 * (x * x + y * y);
    }
    let mut fine = subdivide_midpoint(&coarse, 2)?;
    let boundary = fine.boundary_mask();
    fine.set_pinned(boundary)?;

    let collider = SdfCollider::sphere([6.0, 6.0, -6.1], 6.0);
    let set = PotentialSet::new(&fine, &MaterialParams::default(), Some(&collider), TermSet::all())?;
    let report = neural_solve(&fine, &set, &ckpt.model, ckpt.k)?;
    for (k, phi) in report.potentials.iter().enumerate() {
        println!("k = {k}: Φ {phi:.6e} erg");
    }

    let dir = std::path::Path::new("target/enhance_garment");
    std::fs::create_dir_all(dir)?;
    report.save_csv(dir.join("enhanced.csv"))?;
    fine.positions = report.positions;
    save_obj(&fine, dir.join("enhanced.obj"))?;
    println!("{} fine triangles written to {}", fine.triangles().len(), dir.display());
    Ok(())
}
