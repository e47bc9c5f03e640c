//! Recurrent learned integration and the baseline optimizers.
//!
//! The neural solver alternates force evaluation with a graph-network step:
//! node features are the last `H` position differences and forces, edge
//! features the current and rest edge vectors with their lengths, and the
//! network output is the displacement `D^k` in `X^{k+1} = X^k + D^k`.

use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use thiserror::Error;

use crate::autodiff::{Tape, Tensor, Var};
use crate::energy::{EnergyError, ForceReport, PotentialSet, Term, TermEnergies};
use crate::gnn::{BoundNet, GnnError, Graph, GraphNetConfig, GraphNetWeights};
use crate::mesh::Mesh;
use crate::optim::{Adam, AdamParams};

/// Width of an edge feature row.
pub const EDGE_FEATURE_WIDTH: usize = 8;

/// Solves stop as diverged once Φ exceeds this multiple of `|Φ(X^0)|`.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Debug, Error)]
pub enum IntegratorError {
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Gnn(#[from] GnnError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite state at iteration {iteration}: {detail}")]
    NonFinite { iteration: usize, detail: String },
}

pub type Result<T> = std::result::Result<T, IntegratorError>;

/// Scalar feature normalization: lengths and forces are divided by their
/// scale on input, and network outputs are multiplied by `displacement`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureScales {
    pub length: f64,
    pub force: f64,
    pub displacement: f64,
}

impl Default for FeatureScales {
    fn default() -> Self {
        FeatureScales { length: 1.0, force: 1.0, displacement: 1.0 }
    }
}

impl FeatureScales {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("length", self.length), ("force", self.force), ("displacement", self.displacement)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(IntegratorError::InvalidArgument(format!("{name} scale must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Last `H + 1` positions and `H` forces, newest first. Entries before the
/// first state repeat the initial one.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutState {
    positions: VecDeque<Vec<[f64; 3]>>,
    forces: VecDeque<Vec<[f64; 3]>>,
    iteration: usize,
}

impl RolloutState {
    pub fn new(x0: Vec<[f64; 3]>, f0: Vec<[f64; 3]>, history: usize) -> Self {
        assert!(history >= 1, "history length must be at least 1");
        assert_eq!(x0.len(), f0.len(), "position and force counts differ");
        RolloutState {
            positions: std::iter::repeat(x0).take(history + 1).collect(),
            forces: std::iter::repeat(f0).take(history).collect(),
            iteration: 0,
        }
    }

    pub fn history(&self) -> usize {
        self.forces.len()
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// `X^{k-j}`, clamped to `X^0`.
    pub fn position(&self, j: usize) -> &[[f64; 3]] {
        &self.positions[j]
    }

    /// `F^{k-j}`, clamped to `F^0`.
    pub fn force(&self, j: usize) -> &[[f64; 3]] {
        &self.forces[j]
    }

    pub fn current(&self) -> &[[f64; 3]] {
        &self.positions[0]
    }

    /// Appends `X^{k+1}` and `F^{k+1}`.
    pub fn push(&mut self, x: Vec<[f64; 3]>, f: Vec<[f64; 3]>) {
        self.positions.pop_back();
        self.positions.push_front(x);
        self.forces.pop_back();
        self.forces.push_front(f);
        self.iteration += 1;
    }
}

/// Per-mesh constants for feature construction.
pub struct StepContext {
    graph: Graph,
    rest_features: Tensor,
    free: Tensor,
}

impl StepContext {
    pub fn new(mesh: &Mesh, scales: &FeatureScales) -> Self {
        let graph = Graph::from_mesh(mesh);
        let rest = mesh.rest_positions();
        let inv = 1.0 / scales.length;
        let mut data = Vec::with_capacity(graph.num_edges() * 4);
        for (&s, &r) in graph.senders().iter().zip(graph.receivers()) {
            let d = [(rest[r][0] - rest[s][0]) * inv, (rest[r][1] - rest[s][1]) * inv, (rest[r][2] - rest[s][2]) * inv];
            data.extend(d);
            data.push((d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt());
        }
        let rest_features = Tensor::new(graph.num_edges(), 4, data);
        let free = Tensor::column(mesh.pinned().iter().map(|&p| if p { 0.0 } else { 1.0 }).collect());
        StepContext { graph, rest_features, free }
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }
}

/// `ṽ`: `H` position differences `X^{k-j} - X^{k-j+1}` followed by `H` forces
/// `F^{k-j+1}`, `j = 1..H`. `positions` holds `X^k, X^{k-1}, ..` and `forces`
/// holds `F^k, F^{k-1}, ..`.
pub fn node_features_on_tape<'t>(
    tape: &'t Tape,
    positions: &[Var<'t>],
    forces: &[&[[f64; 3]]],
    scales: &FeatureScales,
) -> Var<'t> {
    let h = forces.len();
    assert_eq!(positions.len(), h + 1, "need H+1 positions for H forces");
    let inv_len = 1.0 / scales.length;
    let inv_force = 1.0 / scales.force;
    let mut parts: Vec<Var<'t>> = (1..=h).map(|j| (positions[j] - positions[j - 1]).scale(inv_len)).collect();
    let n = forces[0].len();
    let mut f = Vec::with_capacity(n * 3 * h);
    for i in 0..n {
        for slot in forces {
            f.extend(slot[i].iter().map(|v| v * inv_force));
        }
    }
    parts.push(tape.constant(Tensor::new(n, 3 * h, f)));
    tape.concat_cols(&parts)
}

/// `ẽ` for every directed edge `s → r`: `X_r - X_s`, its length, and the same
/// for the rest state.
pub fn edge_features_on_tape<'t>(ctx: &StepContext, x: Var<'t>, scales: &FeatureScales) -> Var<'t> {
    let tape = x.tape();
    let d = (x.gather_rows(ctx.graph.receivers()) - x.gather_rows(ctx.graph.senders())).scale(1.0 / scales.length);
    tape.concat_cols(&[d, d.norm(), tape.constant(ctx.rest_features.clone())])
}

/// Node features of a rollout state, `n×6H`.
pub fn build_node_features(state: &RolloutState, scales: &FeatureScales) -> Tensor {
    let tape = Tape::new();
    let positions: Vec<Var<'_>> =
        (0..=state.history()).map(|j| tape.constant(Tensor::from_points(state.position(j)))).collect();
    let forces: Vec<&[[f64; 3]]> = (0..state.history()).map(|j| state.force(j)).collect();
    let v = node_features_on_tape(&tape, &positions, &forces, scales);
    let out = v.value().clone();
    out
}

/// Edge features of `positions` on `mesh`, `2|E|×8`.
pub fn build_edge_features(mesh: &Mesh, positions: &[[f64; 3]], scales: &FeatureScales) -> Tensor {
    let ctx = StepContext::new(mesh, scales);
    let tape = Tape::new();
    let e = edge_features_on_tape(&ctx, tape.constant(Tensor::from_points(positions)), scales);
    let out = e.value().clone();
    out
}

/// A graph network together with the history length and feature scales it
/// was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralIntegrator {
    pub weights: GraphNetWeights,
    pub history: usize,
    pub scales: FeatureScales,
}

impl NeuralIntegrator {
    /// Fresh network for history length `history`; `net` fixes the latent
    /// width, depth and iteration count, input widths are derived.
    pub fn init(net: GraphNetConfig, history: usize, scales: FeatureScales, seed: u64) -> Result<Self> {
        let config = GraphNetConfig { node_input: 6 * history, edge_input: EDGE_FEATURE_WIDTH, output: 3, ..net };
        let model = NeuralIntegrator { weights: GraphNetWeights::init(&config, seed)?, history, scales };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.history == 0 {
            return Err(IntegratorError::InvalidArgument("history length H must be at least 1".into()));
        }
        self.scales.validate()?;
        self.weights.validate()?;
        let expect = |what, expected, got| {
            if expected == got {
                Ok(())
            } else {
                Err(IntegratorError::Gnn(GnnError::WidthMismatch { what, expected, got }))
            }
        };
        expect("node feature width 6H", 6 * self.history, self.weights.node_input())?;
        expect("edge feature width", EDGE_FEATURE_WIDTH, self.weights.edge_input())?;
        expect("displacement width", 3, self.weights.output_width())
    }

    /// Masked displacement `D^k` recorded on the tape of `net`.
    pub fn displacement_on_tape<'t>(
        &self,
        net: &BoundNet<'t>,
        ctx: &StepContext,
        positions: &[Var<'t>],
        forces: &[&[[f64; 3]]],
    ) -> Result<Var<'t>> {
        let tape = positions[0].tape();
        let v = node_features_on_tape(tape, positions, forces, &self.scales);
        let e = edge_features_on_tape(ctx, positions[0], &self.scales);
        let out = net.forward(&ctx.graph, v, e)?;
        Ok(out.scale(self.scales.displacement) * tape.constant(ctx.free.clone()))
    }

    /// `D^k` for a rollout state, without gradients.
    pub fn displacement(&self, ctx: &StepContext, state: &RolloutState) -> Result<Vec<[f64; 3]>> {
        let tape = Tape::new();
        let net = self.weights.bind(&tape, false);
        let positions: Vec<Var<'_>> =
            (0..=self.history).map(|j| tape.constant(Tensor::from_points(state.position(j)))).collect();
        let forces: Vec<&[[f64; 3]]> = (0..self.history).map(|j| state.force(j)).collect();
        let d = self.displacement_on_tape(&net, ctx, &positions, &forces)?;
        let points = d.value().to_points();
        Ok(points)
    }
}

/// Trace of one solve.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub method: String,
    /// Φ at every visited state, starting with `X^0` (erg)
    pub potentials: Vec<f64>,
    pub terms: Vec<TermEnergies>,
    pub positions: Vec<[f64; 3]>,
    /// wall time of each force evaluation (ms)
    pub force_ms: Vec<f64>,
    /// wall time of each integration step (ms)
    pub integration_ms: Vec<f64>,
    pub iterations: usize,
    pub diverged: bool,
}

impl SolveReport {
    fn start(method: String, x0: &[[f64; 3]]) -> Self {
        SolveReport {
            method,
            potentials: Vec::new(),
            terms: Vec::new(),
            positions: x0.to_vec(),
            force_ms: Vec::new(),
            integration_ms: Vec::new(),
            iterations: 0,
            diverged: false,
        }
    }

    fn record(&mut self, report: &ForceReport, ms: f64) {
        self.potentials.push(report.total);
        self.terms.push(report.terms);
        self.force_ms.push(ms);
    }

    pub fn initial_potential(&self) -> f64 {
        self.potentials[0]
    }

    pub fn final_potential(&self) -> f64 {
        *self.potentials.last().unwrap()
    }

    /// Φ after `iteration` updates; a run that diverged earlier counts as
    /// `+∞`.
    pub fn potential_at(&self, iteration: usize) -> f64 {
        let last = self.potentials.len() - 1;
        if self.diverged && iteration >= last {
            f64::INFINITY
        } else {
            self.potentials[iteration.min(last)]
        }
    }

    /// `iteration,potential,<term>...` with one row per state.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        write!(out, "iteration,potential")?;
        for t in Term::ALL {
            write!(out, ",{}", t.name())?;
        }
        writeln!(out)?;
        for (i, (p, terms)) in self.potentials.iter().zip(&self.terms).enumerate() {
            write!(out, "{i},{p:e}")?;
            for t in Term::ALL {
                write!(out, ",{:e}", terms.get(t))?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        std::fs::write(path, buf)
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64() * 1e3)
}

fn all_finite(points: &[[f64; 3]]) -> bool {
    points.iter().all(|p| p.iter().all(|v| v.is_finite()))
}

fn max_abs(points: &[[f64; 3]]) -> f64 {
    points.iter().flat_map(|p| p.iter()).fold(0.0, |m, v| m.max(v.abs()))
}

fn check_start(mesh: &Mesh, potentials: &PotentialSet) -> Result<()> {
    if potentials.num_vertices() != mesh.num_vertices() {
        return Err(IntegratorError::InvalidArgument(format!(
            "potentials built for {} vertices, mesh has {}",
            potentials.num_vertices(),
            mesh.num_vertices()
        )));
    }
    if !all_finite(&mesh.positions) {
        return Err(IntegratorError::NonFinite { iteration: 0, detail: "initial positions".into() });
    }
    Ok(())
}

/// `K` rounds of force evaluation and learned integration from the mesh's
/// current positions.
pub fn neural_solve(mesh: &Mesh, potentials: &PotentialSet, model: &NeuralIntegrator, k: usize) -> Result<SolveReport> {
    if k == 0 {
        return Err(IntegratorError::InvalidArgument("K must be at least 1".into()));
    }
    model.validate()?;
    check_start(mesh, potentials)?;
    let ctx = StepContext::new(mesh, &model.scales);
    let mut report = SolveReport::start("neural".into(), &mesh.positions);
    let (first, ms) = timed(|| potentials.evaluate(&mesh.positions));
    let first = first?;
    report.record(&first, ms);
    let mut state = RolloutState::new(mesh.positions.clone(), first.masked_forces(), model.history);
    for iteration in 0..k {
        let (d, ms) = timed(|| model.displacement(&ctx, &state));
        let d = d?;
        report.integration_ms.push(ms);
        if !all_finite(&d) {
            let detail = format!(
                "displacement is not finite; max |X| = {:e}, max |F| = {:e}",
                max_abs(state.current()),
                max_abs(state.force(0))
            );
            log::error!("neural solve aborted at iteration {iteration}: {detail}");
            return Err(IntegratorError::NonFinite { iteration, detail });
        }
        let x: Vec<[f64; 3]> = state
            .current()
            .iter()
            .zip(&d)
            .map(|(p, d)| [p[0] + d[0], p[1] + d[1], p[2] + d[2]])
            .collect();
        let (eval, ms) = timed(|| potentials.evaluate(&x));
        let eval = eval?;
        if !eval.total.is_finite() {
            let detail = format!("potential {} with max |D| = {:e}", eval.total, max_abs(&d));
            log::error!("neural solve aborted at iteration {}: {detail}", iteration + 1);
            return Err(IntegratorError::NonFinite { iteration: iteration + 1, detail });
        }
        report.record(&eval, ms);
        state.push(x, eval.masked_forces());
        report.iterations += 1;
    }
    report.positions = state.current().to_vec();
    Ok(report)
}

/// Shared loop of the position-space baselines: `update` maps the masked
/// forces to a displacement.
fn baseline_solve(
    method: String,
    mesh: &Mesh,
    potentials: &PotentialSet,
    iters: usize,
    mut update: impl FnMut(&[[f64; 3]], &mut [[f64; 3]]),
) -> Result<SolveReport> {
    check_start(mesh, potentials)?;
    let mut report = SolveReport::start(method, &mesh.positions);
    let (first, ms) = timed(|| potentials.evaluate(&mesh.positions));
    let mut current = first?;
    report.record(&current, ms);
    let limit = DIVERGENCE_FACTOR * report.initial_potential().abs();
    let mut x = mesh.positions.clone();
    for iteration in 0..iters {
        let forces = current.masked_forces();
        let (_, ms) = timed(|| update(&forces, &mut x));
        report.integration_ms.push(ms);
        report.iterations += 1;
        let (evaluated, ms) = timed(|| if all_finite(&x) { potentials.evaluate(&x).ok() } else { None });
        match evaluated {
            Some(next) if next.total.is_finite() && next.total <= limit => {
                report.record(&next, ms);
                current = next;
            }
            other => {
                let phi = other.as_ref().map_or(f64::INFINITY, |r| r.total);
                log::info!("{} diverged at iteration {} (potential {phi:e})", report.method, iteration + 1);
                report.potentials.push(if phi.is_nan() { f64::INFINITY } else { phi });
                report.terms.push(other.map(|r| r.terms).unwrap_or_default());
                report.diverged = true;
                break;
            }
        }
    }
    report.positions = x;
    Ok(report)
}

/// Gradient descent on positions: `X ← X + lr·F`.
pub fn gd_solve(mesh: &Mesh, potentials: &PotentialSet, lr: f64, iters: usize) -> Result<SolveReport> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(IntegratorError::InvalidArgument(format!("learning rate must be non-negative, got {lr}")));
    }
    baseline_solve(format!("gd {lr:e}"), mesh, potentials, iters, |f, x| {
        for (p, f) in x.iter_mut().zip(f) {
            for c in 0..3 {
                p[c] += lr * f[c];
            }
        }
    })
}

/// Adam on positions with gradient `-F`.
pub fn adam_solve(mesh: &Mesh, potentials: &PotentialSet, params: AdamParams, iters: usize) -> Result<SolveReport> {
    params.validate().map_err(IntegratorError::InvalidArgument)?;
    let pinned = potentials.pinned().to_vec();
    let mut adam = Adam::new(3 * mesh.num_vertices(), params);
    baseline_solve(format!("adam {:e}", params.lr), mesh, potentials, iters, |f, x| {
        let grad: Vec<f64> = f.iter().flat_map(|f| [-f[0], -f[1], -f[2]]).collect();
        let mut flat: Vec<f64> = x.iter().flat_map(|p| p.iter().copied()).collect();
        adam.step(&mut flat, &grad);
        for (i, p) in x.iter_mut().enumerate() {
            if !pinned[i] {
                p.copy_from_slice(&flat[3 * i..3 * i + 3]);
            }
        }
    })
}

#[cfg(test)]
mod tests;
