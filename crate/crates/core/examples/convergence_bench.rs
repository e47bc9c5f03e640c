//! Neural integrator against gradient descent and Adam at matched
//! iteration counts, written as a convergence CSV. Usage:
//! `convergence_bench <checkpoint path>`.

use graphcloth::checkpoint::Checkpoint;
use graphcloth::cli::write_convergence_csv;
use graphcloth::energy::{MaterialParams, PotentialSet, TermSet};
use graphcloth::integrator::{adam_solve, gd_solve, neural_solve};
use graphcloth::optim::AdamParams;
use graphcloth::train::{generate_synthetic_dataset, SyntheticOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args().nth(1).ok_or("usage: convergence_bench <checkpoint>")?;
    let ckpt = Checkpoint::load(path)?;
    let opts = SyntheticOptions { rings: 3, ..Default::default() };
    let sample = generate_synthetic_dataset(1, 99, &opts)?.remove(0);
    let set = PotentialSet::new(&sample.fine, &MaterialParams::default(), None, TermSet::elastic())?;
    let k = ckpt.k;

    let mut runs = vec![("neural".to_string(), neural_solve(&sample.fine, &set, &ckpt.model, k)?)];
    for lr in [1e-1, 1.0, 10.0] {
        runs.push((format!("gd_lr{lr:e}"), gd_solve(&sample.fine, &set, lr, k)?));
    }
    for lr in [1e-2, 1e-3, 1e-4] {
        runs.push((format!("adam_lr{lr:e}"), adam_solve(&sample.fine, &set, AdamParams::with_lr(lr), k)?));
    }
    print!("{}", write_convergence_csv(&runs, k + 1));
    Ok(())
}
