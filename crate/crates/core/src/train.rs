//! Unsupervised training of the integrator on subdivided cloth patches.
//!
//! A rollout of `K` learned steps starts from the linearly subdivided coarse
//! state; the loss is the training potential summed over the `K` visited
//! states. Forces fed to the network are treated as constants, so the
//! gradient reaches θ through the displacements, the edge features and the
//! potential itself.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Tape, Tensor, Var};
use crate::checkpoint::{Checkpoint, CheckpointError, TrainingMeta};
use crate::energy::{EnergyError, MaterialParams, PotentialSet, Term, TermSet};
use crate::gnn::GraphNetConfig;
use crate::integrator::{gd_solve, FeatureScales, IntegratorError, NeuralIntegrator, StepContext};
use crate::mesh::{
    compute_area_weights, extract_patch, load_obj_with_rest, load_pins, save_obj, save_pins, save_rest_obj,
    subdivide_midpoint, Mesh, MeshError,
};
use crate::optim::{Adam, AdamParams};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Integrator(#[from] IntegratorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("sample '{id}': {msg}")]
    Sample { id: String, msg: String },
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// How the potentials of the `K` rollout states are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossWeighting {
    #[default]
    Uniform,
}

/// Architecture of the graph network; input widths follow from `H`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub latent: usize,
    /// message-passing iterations `M`
    pub iterations: usize,
    pub hidden_layers: usize,
    /// one processor pair shared by all iterations
    pub tied: bool,
    /// network output unit as a fraction of the mean rest edge length
    pub displacement_scale: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig { latent: 128, iterations: 10, hidden_layers: 2, tied: false, displacement_scale: 0.1 }
    }
}

impl NetworkConfig {
    pub fn graph_config(&self) -> GraphNetConfig {
        GraphNetConfig {
            latent: self.latent,
            iterations: self.iterations,
            hidden_layers: self.hidden_layers,
            tied: self.tied,
            ..GraphNetConfig::new(1, 1)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent == 0 || self.iterations == 0 {
            return Err(TrainError::InvalidConfig("latent width and iterations must be positive".into()));
        }
        if !(self.displacement_scale > 0.0 && self.displacement_scale.is_finite()) {
            return Err(TrainError::InvalidConfig("displacement_scale must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// rollout length
    pub k: usize,
    /// history length `H`
    pub history: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub loss_weighting: LossWeighting,
    pub seed: u64,
    /// dataset directory; synthetic patches are generated when absent
    pub dataset: Option<PathBuf>,
    /// number of synthetic patches
    pub synthetic: usize,
    /// coarse patch radius in edge hops
    pub rings: usize,
    /// subdivision levels from coarse to fine
    pub levels: usize,
    /// potentials in the loss
    pub terms: TermSet,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k: 5,
            history: 3,
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epochs: 200,
            batch_size: 4,
            loss_weighting: LossWeighting::Uniform,
            seed: 0,
            dataset: None,
            synthetic: 256,
            rings: 4,
            levels: 2,
            terms: TermSet::elastic(),
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamParams {
        AdamParams { lr: self.lr, beta1: self.beta1, beta2: self.beta2, eps: self.eps }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if self.k == 0 || self.history == 0 {
            return bad("k and history must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.rings == 0 {
            return bad("rings must be at least 1".into());
        }
        if self.terms.is_empty() {
            return bad("at least one training term is required".into());
        }
        if self.terms.contains(Term::Contact) {
            return bad("contact cannot be a training term: patches carry no collider".into());
        }
        self.adam().validate().map_err(TrainError::InvalidConfig)
    }
}

/// One training patch: the coarse state and its subdivided fine mesh.
#[derive(Debug, Clone)]
pub struct PatchSample {
    pub id: String,
    pub coarse: Mesh,
    /// positions are the initial state `X^0`, boundary pinned
    pub fine: Mesh,
}

impl PatchSample {
    pub fn from_coarse(id: String, coarse: Mesh, levels: usize) -> Result<Self> {
        let mut fine = subdivide_midpoint(&coarse, levels)?;
        let boundary = fine.boundary_mask();
        fine.set_pinned(boundary)?;
        let sample = PatchSample { id, coarse, fine };
        sample.validate(levels)?;
        Ok(sample)
    }

    pub fn validate(&self, levels: usize) -> Result<()> {
        let fail = |msg: String| Err(TrainError::Sample { id: self.id.clone(), msg });
        let factor = 4usize.pow(levels as u32);
        if self.fine.triangles().len() != factor * self.coarse.triangles().len() {
            return fail(format!("fine mesh does not have {factor}x the coarse triangles"));
        }
        let boundary = self.fine.boundary_mask();
        if boundary.iter().zip(self.fine.pinned()).any(|(&b, &p)| b && !p) {
            return fail("boundary vertex not pinned".into());
        }
        Ok(())
    }
}

/// Knobs of the synthetic patch generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticOptions {
    pub rings: usize,
    pub levels: usize,
    /// gradient-descent relaxation steps applied to the deformed coarse grid
    pub relax_iterations: usize,
    pub params: MaterialParams,
}

impl Default for SyntheticOptions {
    fn default() -> Self {
        SyntheticOptions { rings: 4, levels: 2, relax_iterations: 30, params: MaterialParams::default() }
    }
}

/// Largest stable gradient-descent step for the stretch term, from a
/// Gershgorin bound on its Hessian.
fn safe_gd_step(mesh: &Mesh, k_s: f64) -> Result<f64> {
    let w = compute_area_weights(mesh)?;
    let mut load = vec![0.0; mesh.num_vertices()];
    for (e, &[a, b]) in mesh.edges().iter().enumerate() {
        load[a] += w.edge_area[e];
        load[b] += w.edge_area[e];
    }
    let bound = 2.0 * k_s / w.total_area * load.iter().fold(0.0f64, |m, &v| m.max(v));
    Ok(1.0 / bound)
}

fn generate_one(index: usize, seed: u64, opts: &SyntheticOptions) -> Result<PatchSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let q = 2 * opts.rings;
    let spacing = rng.gen_range(0.8..1.2);
    let mut grid = Mesh::grid(q, q, spacing);

    // random in-plane rest geometry
    let rest: Vec<[f64; 3]> = grid
        .rest_positions()
        .iter()
        .map(|p| {
            let j = 0.15 * spacing;
            [p[0] + rng.gen_range(-j..j), p[1] + rng.gen_range(-j..j), 0.0]
        })
        .collect();
    grid.set_rest_positions(rest.clone())?;

    // compress in-plane and raise random bumps
    let (cx, cy) = (rng.gen_range(0.75..0.97), rng.gen_range(0.75..0.97));
    let extent = q as f64 * spacing;
    let bumps: Vec<([f64; 2], f64, f64)> = (0..3)
        .map(|_| {
            let c = [rng.gen_range(0.0..extent), rng.gen_range(0.0..extent)];
            (c, rng.gen_range(-0.4..0.4) * spacing, rng.gen_range(0.15..0.35) * extent)
        })
        .collect();
    grid.positions = rest
        .iter()
        .map(|p| {
            let z: f64 = bumps
                .iter()
                .map(|(c, a, w)| a * (-((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)) / (w * w)).exp())
                .sum::<f64>()
                + rng.gen_range(-0.05..0.05) * spacing;
            [p[0] * cx, p[1] * cy, z]
        })
        .collect();

    // relax under gravity with a few random pins
    let n = grid.num_vertices();
    let mut pins = vec![false; n];
    for _ in 0..rng.gen_range(2..6) {
        pins[rng.gen_range(0..n)] = true;
    }
    grid.set_pinned(pins)?;
    let relax_terms = TermSet::elastic().with(Term::Gravity);
    let set = PotentialSet::new(&grid, &opts.params, None, relax_terms)?;
    let lr = safe_gd_step(&grid, opts.params.stretch_stiffness)?;
    let relaxed = gd_solve(&grid, &set, lr, opts.relax_iterations)?;
    grid.positions = relaxed.positions;

    let center = opts.rings * (q + 1) + opts.rings;
    let patch = extract_patch(&grid, center, opts.rings)?;
    PatchSample::from_coarse(format!("sample_{index:04}"), patch.mesh, opts.levels)
}

/// `count` random patches; the same seed always yields the same dataset.
pub fn generate_synthetic_dataset(count: usize, seed: u64, opts: &SyntheticOptions) -> Result<Vec<PatchSample>> {
    if count == 0 {
        return Err(TrainError::InvalidConfig("dataset size must be at least 1".into()));
    }
    (0..count).into_par_iter().map(|i| generate_one(i, seed, opts)).collect()
}

const MANIFEST: &str = "manifest.txt";

/// Writes one directory per sample (`coarse.obj`, `rest.obj`, `pins.txt`)
/// and a manifest listing them.
pub fn save_dataset(dir: impl AsRef<Path>, samples: &[PatchSample]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut manifest = String::from("# one sample directory per line\n");
    for s in samples {
        let sub = dir.join(&s.id);
        fs::create_dir_all(&sub)?;
        save_obj(&s.coarse, sub.join("coarse.obj"))?;
        save_rest_obj(&s.coarse, sub.join("rest.obj"))?;
        save_pins(s.coarse.pinned(), sub.join("pins.txt"))?;
        manifest.push_str(&s.id);
        manifest.push('\n');
    }
    fs::write(dir.join(MANIFEST), manifest)?;
    Ok(())
}

pub fn load_dataset(dir: impl AsRef<Path>, levels: usize) -> Result<Vec<PatchSample>> {
    let dir = dir.as_ref();
    let manifest = fs::read_to_string(dir.join(MANIFEST))?;
    let mut samples = Vec::new();
    for line in manifest.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let sub = dir.join(line);
        let mut coarse = load_obj_with_rest(sub.join("coarse.obj"), sub.join("rest.obj"))?;
        let pins = load_pins(sub.join("pins.txt"), coarse.num_vertices())?;
        coarse.set_pinned(pins)?;
        samples.push(PatchSample::from_coarse(line.to_string(), coarse, levels)?);
    }
    if samples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    Ok(samples)
}

/// Feature scales from a dataset: mean fine rest edge length, RMS of the
/// free initial force components, and `displacement_scale` edge lengths per
/// output unit.
pub fn dataset_scales(
    samples: &[PatchSample],
    params: &MaterialParams,
    terms: TermSet,
    displacement_scale: f64,
) -> Result<FeatureScales> {
    if samples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let length = samples.iter().map(|s| s.fine.mean_rest_edge_length()).sum::<f64>() / samples.len() as f64;
    let per_sample: Vec<(f64, usize)> = samples
        .par_iter()
        .map(|s| {
            let set = PotentialSet::new(&s.fine, params, None, terms)?;
            let f = set.evaluate(&s.fine.positions)?.masked_forces();
            let free = s.fine.pinned().iter().filter(|&&p| !p).count();
            Ok((f.iter().flat_map(|v| v.iter()).map(|x| x * x).sum::<f64>(), 3 * free))
        })
        .collect::<Result<_>>()?;
    let (sum, count) = per_sample.iter().fold((0.0, 0), |(s, c), &(a, b)| (s + a, c + b));
    let rms = if count > 0 { (sum / count as f64).sqrt() } else { 0.0 };
    let force = if rms > 0.0 && rms.is_finite() { rms } else { 1.0 };
    Ok(FeatureScales { length, force, displacement: displacement_scale * length })
}

/// Per-sample constants reused across epochs.
struct Prepared<'a> {
    sample: &'a PatchSample,
    potentials: PotentialSet,
    ctx: StepContext,
    f0: Vec<[f64; 3]>,
}

impl<'a> Prepared<'a> {
    fn new(sample: &'a PatchSample, params: &MaterialParams, terms: TermSet, scales: &FeatureScales) -> Result<Self> {
        let potentials = PotentialSet::new(&sample.fine, params, None, terms)?;
        let f0 = potentials.evaluate(&sample.fine.positions)?.masked_forces();
        let ctx = StepContext::new(&sample.fine, scales);
        Ok(Prepared { sample, potentials, ctx, f0 })
    }

    /// Records the rollout and its loss on `tape`. Forces after the first
    /// state are taken from `frozen` when given, otherwise evaluated; the
    /// forces used are returned.
    fn record<'t>(
        &self,
        tape: &'t Tape,
        model: &NeuralIntegrator,
        k: usize,
        trainable: bool,
        frozen: Option<&[Vec<[f64; 3]>]>,
    ) -> Result<(Var<'t>, Vec<Var<'t>>, Vec<Vec<[f64; 3]>>)> {
        let net = model.weights.bind(tape, trainable);
        let h = model.history;
        let x0 = tape.constant(Tensor::from_points(&self.sample.fine.positions));
        let mut positions = vec![x0; h + 1];
        let mut forces = vec![self.f0.clone(); h];
        let mut loss: Option<Var<'t>> = None;
        let mut used = Vec::new();
        for step in 0..k {
            let force_refs: Vec<&[[f64; 3]]> = forces.iter().map(|f| f.as_slice()).collect();
            let d = model.displacement_on_tape(&net, &self.ctx, &positions, &force_refs)?;
            let x = positions[0] + d;
            let phi = self.potentials.record(tape, x)?.total;
            loss = Some(match loss {
                Some(l) => l + phi,
                None => phi,
            });
            if step + 1 < k {
                // forces enter the next step as constants
                let f = match frozen {
                    Some(list) => list[step].clone(),
                    None => self.potentials.evaluate(&x.value().to_points())?.masked_forces(),
                };
                used.push(f.clone());
                positions.pop();
                positions.insert(0, x);
                forces.pop();
                forces.insert(0, f);
            }
        }
        Ok((loss.expect("k >= 1"), net.vars(), used))
    }

    fn loss(&self, model: &NeuralIntegrator, k: usize) -> Result<f64> {
        let tape = Tape::new();
        let (loss, _, _) = self.record(&tape, model, k, false, None)?;
        Ok(loss.item())
    }

    fn loss_and_gradient(&self, model: &NeuralIntegrator, k: usize) -> Result<(f64, Vec<f64>)> {
        let tape = Tape::new();
        let (loss, vars, _) = self.record(&tape, model, k, true, None)?;
        let value = loss.item();
        if !value.is_finite() {
            return Ok((value, Vec::new()));
        }
        let mut grads = tape.backward(loss).map_err(EnergyError::from)?;
        let flat = vars.iter().flat_map(|&v| grads.take(v).into_data()).collect();
        Ok((value, flat))
    }
}

/// `L = Σ_{k=1..K} Φ_train(X^k)` for one sample.
pub fn rollout_loss(
    sample: &PatchSample,
    model: &NeuralIntegrator,
    params: &MaterialParams,
    config: &TrainConfig,
) -> Result<f64> {
    Prepared::new(sample, params, config.terms, &model.scales)?.loss(model, config.k)
}

/// Loss and its gradient with respect to the flattened weights, in the
/// order of [`GraphNetWeights::to_flat`](crate::gnn::GraphNetWeights::to_flat).
pub fn rollout_loss_and_gradient(
    sample: &PatchSample,
    model: &NeuralIntegrator,
    params: &MaterialParams,
    config: &TrainConfig,
) -> Result<(f64, Vec<f64>)> {
    Prepared::new(sample, params, config.terms, &model.scales)?.loss_and_gradient(model, config.k)
}

/// Mean training loss per epoch; epoch 0 is the untrained network.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingLog {
    pub mean_loss: Vec<f64>,
    pub skipped_batches: usize,
}

impl TrainingLog {
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "epoch,mean_loss")?;
        for (epoch, loss) in self.mean_loss.iter().enumerate() {
            writeln!(out, "{epoch},{loss:e}")?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        fs::write(path, buf)
    }
}

pub struct TrainOutcome {
    /// weights of the epoch with the lowest mean loss
    pub checkpoint: Checkpoint,
    pub log: TrainingLog,
}

/// Adam over θ with mini-batches of patches. Samples of a batch are
/// evaluated in parallel; their gradients are averaged in sample order, so
/// the result does not depend on the thread count.
pub fn train(
    dataset: &[PatchSample],
    params: &MaterialParams,
    network: &NetworkConfig,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    config.validate()?;
    network.validate()?;
    let scales = dataset_scales(dataset, params, config.terms, network.displacement_scale)?;
    let mut model = NeuralIntegrator::init(network.graph_config(), config.history, scales, config.seed)?;
    log::info!(
        "training {} parameters on {} patches (length scale {:.4e}, force scale {:.4e})",
        model.weights.num_parameters(),
        dataset.len(),
        scales.length,
        scales.force
    );
    let prepared: Vec<Prepared<'_>> = dataset
        .par_iter()
        .map(|s| Prepared::new(s, params, config.terms, &scales))
        .collect::<Result<_>>()?;

    let initial: Vec<f64> = prepared.par_iter().map(|p| p.loss(&model, config.k)).collect::<Result<_>>()?;
    let mut log = TrainingLog { mean_loss: vec![mean(&initial)], skipped_batches: 0 };
    log::info!("epoch 0: mean loss {:.6e}", log.mean_loss[0]);

    let mut best = (0usize, log.mean_loss[0], model.weights.clone());
    let mut theta = model.weights.to_flat();
    let mut adam = Adam::new(theta.len(), config.adam());
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0f_7a11);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut losses = Vec::with_capacity(order.len());
        for batch in order.chunks(config.batch_size) {
            let results: Vec<(f64, Vec<f64>)> = batch
                .par_iter()
                .map(|&i| prepared[i].loss_and_gradient(&model, config.k))
                .collect::<Result<_>>()?;
            if let Some((pos, _)) = results.iter().enumerate().find(|(_, (l, g))| !l.is_finite() || g.iter().any(|v| !v.is_finite())) {
                log::warn!("epoch {epoch}: non-finite loss on {}; batch skipped", prepared[batch[pos]].sample.id);
                log.skipped_batches += 1;
                continue;
            }
            let mut grad = vec![0.0; theta.len()];
            for (loss, g) in &results {
                losses.push(*loss);
                for (a, b) in grad.iter_mut().zip(g) {
                    *a += b;
                }
            }
            let inv = 1.0 / results.len() as f64;
            grad.iter_mut().for_each(|g| *g *= inv);
            adam.step(&mut theta, &grad);
            model.weights.set_flat(&theta).map_err(IntegratorError::from)?;
        }
        let m = if losses.is_empty() { f64::NAN } else { mean(&losses) };
        log.mean_loss.push(m);
        log::info!("epoch {epoch}: mean loss {m:.6e}");
        if m < best.1 {
            best = (epoch, m, model.weights.clone());
        }
    }

    model.weights = best.2;
    let meta = TrainingMeta {
        lr: config.lr,
        epochs: config.epochs,
        batch_size: config.batch_size,
        best_epoch: best.0,
        best_loss: best.1,
        terms: config.terms,
    };
    Ok(TrainOutcome { checkpoint: Checkpoint { model, k: config.k, seed: config.seed, meta }, log })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[cfg(test)]
mod tests;
