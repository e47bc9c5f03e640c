//! Relaxes a deformed patch with gradient descent and Adam at several
//! learning rates.

use graphcloth::energy::{MaterialParams, PotentialSet, TermSet};
use graphcloth::integrator::{adam_solve, gd_solve};
use graphcloth::optim::AdamParams;
use graphcloth::train::{generate_synthetic_dataset, SyntheticOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let opts = SyntheticOptions { rings: 2, ..Default::default() };
    let sample = generate_synthetic_dataset(1, 5, &opts)?.remove(0);
    let set = PotentialSet::new(&sample.fine, &MaterialParams::default(), None, TermSet::elastic())?;

    let mut runs = Vec::new();
    for lr in [1e-1, 1.0, 10.0] {
        runs.push(gd_solve(&sample.fine, &set, lr, 20)?);
    }
    for lr in [1e-2, 1e-3, 1e-4] {
        runs.push(adam_solve(&sample.fine, &set, AdamParams::with_lr(lr), 20)?);
    }
    println!("Φ0 = {:.4e} erg on {} vertices", runs[0].initial_potential(), sample.fine.num_vertices());
    for r in &runs {
        let note = if r.diverged { " (diverged)" } else { "" };
        println!("{:<14} Φ after {:>2} iterations {:.4e}{note}", r.method, r.iterations, r.final_potential());
    }
    Ok(())
}
