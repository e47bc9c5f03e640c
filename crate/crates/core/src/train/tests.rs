use super::*;
use crate::gnn::GraphNetWeights;
use crate::integrator::neural_solve;

fn tiny_options() -> SyntheticOptions {
    SyntheticOptions { rings: 1, levels: 1, ..Default::default() }
}

fn tiny_network() -> NetworkConfig {
    NetworkConfig { latent: 8, iterations: 2, ..Default::default() }
}

fn tiny_model(sample: &PatchSample, seed: u64) -> NeuralIntegrator {
    let scales = dataset_scales(std::slice::from_ref(sample), &MaterialParams::default(), TermSet::elastic(), 0.1).unwrap();
    NeuralIntegrator::init(tiny_network().graph_config(), 3, scales, seed).unwrap()
}

#[test]
fn generated_samples_are_valid_and_reproducible() {
    let opts = SyntheticOptions { rings: 2, ..Default::default() };
    let a = generate_synthetic_dataset(20, 7, &opts).unwrap();
    let b = generate_synthetic_dataset(20, 7, &opts).unwrap();
    let c = generate_synthetic_dataset(20, 8, &opts).unwrap();
    let mut non_rest = 0;
    for ((x, y), z) in a.iter().zip(&b).zip(&c) {
        x.validate(2).unwrap();
        assert_eq!(x.fine.triangles().len(), 16 * x.coarse.triangles().len());
        assert_eq!(x.fine.positions, y.fine.positions);
        assert_eq!(x.coarse.rest_positions(), y.coarse.rest_positions());
        assert_ne!(x.coarse.positions, z.coarse.positions);
        let set = PotentialSet::new(&x.coarse, &MaterialParams::default(), None, TermSet::elastic()).unwrap();
        if set.energy(&x.coarse.positions).unwrap().total() > 0.0 {
            non_rest += 1;
        }
    }
    assert!(non_rest * 100 >= 95 * a.len(), "{non_rest} of {}", a.len());
    assert!(generate_synthetic_dataset(0, 1, &opts).is_err());
}

#[test]
fn zero_network_on_rest_sample_has_zero_loss() {
    let coarse = Mesh::grid(2, 2, 1.0).with_pinned(vec![false; 9]).unwrap();
    let sample = PatchSample::from_coarse("rest".into(), coarse, 1).unwrap();
    let mut model = tiny_model(&sample, 1);
    model.weights = GraphNetWeights::zeros(&model.weights.config()).unwrap();
    let loss = rollout_loss(&sample, &model, &MaterialParams::default(), &TrainConfig::default()).unwrap();
    assert_eq!(loss, 0.0);
}

#[test]
fn single_step_loss_is_potential_after_one_update() {
    let sample = generate_synthetic_dataset(1, 3, &tiny_options()).unwrap().remove(0);
    let model = tiny_model(&sample, 2);
    let params = MaterialParams::default();
    let config = TrainConfig { k: 1, ..Default::default() };
    let loss = rollout_loss(&sample, &model, &params, &config).unwrap();
    let set = PotentialSet::new(&sample.fine, &params, None, TermSet::elastic()).unwrap();
    let report = neural_solve(&sample.fine, &set, &model, 1).unwrap();
    assert!((loss - report.final_potential()).abs() <= 1e-12 * loss.abs(), "{loss} vs {}", report.final_potential());
    assert!(loss >= 0.0);
}

/// Loss with the force inputs after `X^0` held at `frozen`.
fn frozen_loss(p: &Prepared<'_>, model: &NeuralIntegrator, k: usize, frozen: &[Vec<[f64; 3]>]) -> f64 {
    let tape = Tape::new();
    p.record(&tape, model, k, false, Some(frozen)).unwrap().0.item()
}

#[test]
fn loss_gradient_matches_finite_differences() {
    let sample = generate_synthetic_dataset(1, 4, &tiny_options()).unwrap().remove(0);
    let mut model = tiny_model(&sample, 3);
    let params = MaterialParams::default();
    let p = Prepared::new(&sample, &params, TermSet::elastic(), &model.scales).unwrap();
    for k in [1, 3] {
        let (loss, grad) = p.loss_and_gradient(&model, k).unwrap();
        let tape = Tape::new();
        let frozen = p.record(&tape, &model, k, false, None).unwrap().2;
        drop(tape);
        assert!(loss >= 0.0);
        assert!(grad.iter().any(|g| *g != 0.0), "gradient vanished");
        let theta = model.weights.to_flat();
        let largest = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        let big: Vec<usize> = (0..theta.len()).filter(|&i| grad[i].abs() > 1e-3 * largest).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..5 {
            let i = big[rng.gen_range(0..big.len())];
            let h = 1e-6 * theta[i].abs().max(1.0);
            let mut q = theta.clone();
            q[i] += h;
            model.weights.set_flat(&q).unwrap();
            let up = frozen_loss(&p, &model, k, &frozen);
            q[i] -= 2.0 * h;
            model.weights.set_flat(&q).unwrap();
            let down = frozen_loss(&p, &model, k, &frozen);
            model.weights.set_flat(&theta).unwrap();
            let fd = (up - down) / (2.0 * h);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs());
            assert!(rel < 1e-3, "k={k} theta[{i}]: fd {fd} vs ad {}", grad[i]);
        }
    }
}

#[test]
fn training_reduces_loss_and_is_deterministic() {
    let data = generate_synthetic_dataset(4, 5, &tiny_options()).unwrap();
    let params = MaterialParams::default();
    let config = TrainConfig { k: 3, epochs: 6, batch_size: 2, lr: 3e-3, seed: 9, levels: 1, ..Default::default() };
    let a = train(&data, &params, &tiny_network(), &config).unwrap();
    let b = train(&data, &params, &tiny_network(), &config).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.checkpoint, b.checkpoint);
    assert_eq!(a.log.mean_loss.len(), 7);
    let first = a.log.mean_loss[0];
    let last = *a.log.mean_loss.last().unwrap();
    assert!(last < first, "{:?}", a.log.mean_loss);
    assert_eq!((a.checkpoint.k, a.checkpoint.model.history), (3, 3));
    assert!(a.checkpoint.meta.best_loss <= last);

    // pinned vertices stay put with trained weights
    let set = PotentialSet::new(&data[0].fine, &params, None, TermSet::elastic()).unwrap();
    let report = neural_solve(&data[0].fine, &set, &a.checkpoint.model, 5).unwrap();
    for (i, (p, q)) in report.positions.iter().zip(&data[0].fine.positions).enumerate() {
        if data[0].fine.pinned()[i] {
            assert_eq!(p, q);
        }
    }
}

#[test]
fn dataset_directory_round_trip() {
    let data = generate_synthetic_dataset(3, 6, &tiny_options()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(dir.path(), &data).unwrap();
    let back = load_dataset(dir.path(), 1).unwrap();
    assert_eq!(back.len(), 3);
    for (a, b) in data.iter().zip(&back) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.coarse.positions, b.coarse.positions);
        assert_eq!(a.coarse.rest_positions(), b.coarse.rest_positions());
        assert_eq!(a.coarse.pinned(), b.coarse.pinned());
        assert_eq!(a.fine.positions, b.fine.positions);
    }
}

#[test]
fn empty_dataset_and_bad_config_are_rejected() {
    let params = MaterialParams::default();
    assert!(matches!(train(&[], &params, &tiny_network(), &TrainConfig::default()), Err(TrainError::EmptyDataset)));
    let data = generate_synthetic_dataset(1, 1, &tiny_options()).unwrap();
    let config = TrainConfig { batch_size: 0, ..Default::default() };
    assert!(train(&data, &params, &tiny_network(), &config).is_err());
    let config = TrainConfig { terms: TermSet::all(), ..Default::default() };
    assert!(train(&data, &params, &tiny_network(), &config).is_err());
}

#[test]
fn training_log_csv() {
    let log = TrainingLog { mean_loss: vec![2.0, 1.5], skipped_batches: 0 };
    let mut buf = Vec::new();
    log.write_csv(&mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap(), "epoch,mean_loss\n0,2e0\n1,1.5e0\n");
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
