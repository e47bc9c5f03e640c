//! Trains a small neural integrator on synthetic patches and saves the
//! checkpoint. Usage: `train_integrator [checkpoint path]`.

use graphcloth::checkpoint::Checkpoint;
use graphcloth::energy::MaterialParams;
use graphcloth::train::{generate_synthetic_dataset, train, NetworkConfig, SyntheticOptions, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "target/example.ckpt".into());
    let opts = SyntheticOptions { rings: 2, ..Default::default() };
    let data = generate_synthetic_dataset(8, 1, &opts)?;
    let network = NetworkConfig { latent: 16, iterations: 3, ..Default::default() };
    let config = TrainConfig { epochs: 10, lr: 1e-3, rings: 2, batch_size: 4, seed: 1, ..Default::default() };

    let outcome = train(&data, &MaterialParams::default(), &network, &config)?;
    for (epoch, loss) in outcome.log.mean_loss.iter().enumerate() {
        println!("epoch {epoch:>2}: mean Φ(X^K) {loss:.4e}");
    }
    outcome.checkpoint.save(&path)?;
    let back = Checkpoint::load(&path)?;
    assert_eq!(back, outcome.checkpoint);
    println!("saved {path} (best epoch {}, K = {})", back.meta.best_epoch, back.k);
    Ok(())
}
