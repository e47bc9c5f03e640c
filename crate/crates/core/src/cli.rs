//! Command-line front end: `train`, `enhance`, `bench` and `gradcheck`.
//!
//! Exit codes: 0 success, 1 numerical or internal failure, 2 usage or
//! configuration error. Every command writes its effective configuration
//! as `config.toml` next to its outputs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::Checkpoint;
use crate::config::{Overrides, RunConfig};
use crate::energy::check::check_terms;
use crate::energy::sdf::load_colliders;
use crate::energy::{PotentialSet, SdfCollider, Term, TermSet};
use crate::integrator::{adam_solve, gd_solve, neural_solve, SolveReport};
use crate::mesh::{load_obj, load_obj_with_rest, load_pins, save_obj, subdivide_midpoint, Mesh};
use crate::optim::AdamParams;
use crate::train::{generate_synthetic_dataset, load_dataset, save_dataset, train, SyntheticOptions};

/// Relative force error accepted by `gradcheck`.
pub const GRADCHECK_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Parser)]
#[command(name = "graphcloth", version, about = "Quasi-static cloth with a learned graph-network integrator")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML configuration file
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// worker threads
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// comma-separated potentials: stretch,bend,gravity,contact,self
    #[arg(long, global = true)]
    pub terms: Option<TermSet>,
    /// subdivision levels
    #[arg(long, global = true)]
    pub levels: Option<usize>,
    /// rollout length
    #[arg(long, global = true)]
    pub k: Option<usize>,
    /// learning rate (training) or the single benchmark rate
    #[arg(long, global = true)]
    pub lr: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the integrator on a dataset directory or synthetic patches.
    Train(TrainArgs),
    /// Subdivide a coarse mesh and relax it with a trained integrator.
    Enhance(EnhanceArgs),
    /// Compare the integrator with gradient descent and Adam, and time it.
    Bench(BenchArgs),
    /// Check autodiff forces against finite differences, per term.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// dataset directory (see `--save-dataset` for the layout)
    pub dataset: Option<PathBuf>,
    /// generate this many synthetic patches instead of reading a dataset
    #[arg(long, conflicts_with = "dataset")]
    pub synthetic: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// output checkpoint; the training CSV and config are written beside it
    #[arg(long, required = true)]
    pub checkpoint: Option<PathBuf>,
    /// also write the patches used for training to this directory
    #[arg(long)]
    pub save_dataset: Option<PathBuf>,
}

/// Input mesh options shared by `enhance`, `bench` and `gradcheck`.
#[derive(Debug, Args)]
pub struct MeshArgs {
    /// coarse input OBJ
    pub mesh: PathBuf,
    /// rest-state OBJ with the same topology; the input geometry otherwise
    #[arg(long)]
    pub rest: Option<PathBuf>,
    /// pinned coarse vertices, one zero-based index per line
    #[arg(long)]
    pub pins: Option<PathBuf>,
    /// collider file for the contact term
    #[arg(long)]
    pub collider: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EnhanceArgs {
    #[command(flatten)]
    pub input: MeshArgs,
    #[arg(long, required = true)]
    pub checkpoint: Option<PathBuf>,
    /// output OBJ; the convergence CSV gets the same stem
    #[arg(long, required = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub input: MeshArgs,
    #[arg(long, required = true)]
    pub checkpoint: Option<PathBuf>,
    /// output directory
    #[arg(long, required = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub input: MeshArgs,
    /// uniform random displacement amplitude relative to the mean edge length
    #[arg(long, default_value_t = 0.0)]
    pub perturb: f64,
    /// directory for a CSV report and the effective config
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Failure of a command, classified by exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Failure(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failure(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Failure(m) => f.write_str(m),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn failure(e: impl std::fmt::Display) -> CliError {
    CliError::Failure(e.to_string())
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code. Messages go to stdout and stderr.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    let training = matches!(cli.command, Command::Train(_));
    let mut config = RunConfig::load_or_default(g.config.as_deref()).map_err(usage)?;
    let overrides =
        Overrides { seed: g.seed, threads: g.threads, terms: g.terms, levels: g.levels, k: g.k, lr: g.lr };
    config.apply(&overrides, training).map_err(usage)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = config.threads {
        builder = builder.num_threads(t);
    }
    let pool = builder.build().map_err(failure)?;
    pool.install(|| match &cli.command {
        Command::Train(a) => cmd_train(config, a),
        Command::Enhance(a) => cmd_enhance(config, a),
        Command::Bench(a) => cmd_bench(config, a),
        Command::Gradcheck(a) => cmd_gradcheck(config, a),
    })
}

fn output_dir(file: &Path) -> PathBuf {
    match file.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn prepare_dir(dir: &Path, config: &RunConfig) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| usage(format!("cannot create {}: {e}", dir.display())))?;
    config.echo(dir).map_err(failure)
}

fn cmd_train(mut config: RunConfig, a: &TrainArgs) -> Result<()> {
    let checkpoint_path = a.checkpoint.as_ref().ok_or_else(|| usage("--checkpoint is required"))?;
    if let Some(e) = a.epochs {
        config.training.epochs = e;
    }
    if let Some(n) = a.synthetic {
        config.training.synthetic = n;
        config.training.dataset = None;
    }
    if let Some(d) = &a.dataset {
        config.training.dataset = Some(d.clone());
    }
    config.validate().map_err(usage)?;
    let t = &config.training;
    let dataset = match &t.dataset {
        Some(dir) => load_dataset(dir, t.levels).map_err(usage)?,
        None => {
            let opts = SyntheticOptions {
                rings: t.rings,
                levels: t.levels,
                params: config.materials.clone(),
                ..Default::default()
            };
            generate_synthetic_dataset(t.synthetic, t.seed, &opts).map_err(usage)?
        }
    };
    if let Some(dir) = &a.save_dataset {
        save_dataset(dir, &dataset).map_err(failure)?;
    }
    let dir = output_dir(checkpoint_path);
    prepare_dir(&dir, &config)?;
    println!("seed = {}", t.seed);
    let outcome = train(&dataset, &config.materials, &config.network, t).map_err(failure)?;
    outcome.checkpoint.save(checkpoint_path).map_err(failure)?;
    outcome.log.save_csv(dir.join("training.csv")).map_err(failure)?;
    let losses = &outcome.log.mean_loss;
    println!(
        "trained {} epochs on {} patches: loss {:.6e} -> {:.6e} (best epoch {})",
        losses.len() - 1,
        dataset.len(),
        losses[0],
        outcome.checkpoint.meta.best_loss,
        outcome.checkpoint.meta.best_epoch
    );
    Ok(())
}

/// Subdivided, pinned fine mesh and the collider for `terms`.
fn load_problem(config: &RunConfig, input: &MeshArgs, levels: usize) -> Result<(Mesh, Option<SdfCollider>)> {
    let fine = load_fine_mesh(config, input, levels)?;
    let collider = load_collider(config, input)?;
    Ok((fine, collider))
}

fn load_fine_mesh(config: &RunConfig, input: &MeshArgs, levels: usize) -> Result<Mesh> {
    let mut coarse = match &input.rest {
        Some(rest) => load_obj_with_rest(&input.mesh, rest),
        None => load_obj(&input.mesh),
    }
    .map_err(|e| usage(format!("{}: {e}", input.mesh.display())))?;
    let pins = input.pins.as_ref().or(config.solver.pins.as_ref());
    if let Some(p) = pins {
        let mask = load_pins(p, coarse.num_vertices()).map_err(|e| usage(format!("{}: {e}", p.display())))?;
        coarse.set_pinned(mask).map_err(usage)?;
    }
    let mut fine = subdivide_midpoint(&coarse, levels).map_err(failure)?;
    if config.solver.pin_boundary {
        let mask: Vec<bool> = fine.boundary_mask().iter().zip(fine.pinned()).map(|(&b, &p)| b || p).collect();
        fine.set_pinned(mask).map_err(failure)?;
    }
    Ok(fine)
}

fn load_collider(config: &RunConfig, input: &MeshArgs) -> Result<Option<SdfCollider>> {
    if !config.solver.terms.contains(Term::Contact) {
        return Ok(None);
    }
    let path = input
        .collider
        .as_ref()
        .or(config.solver.collider.as_ref())
        .ok_or_else(|| usage("the contact term needs a collider (--collider or solver.collider)"))?;
    load_colliders(path).map(Some).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn load_checkpoint(path: Option<&PathBuf>) -> Result<Checkpoint> {
    let path = path.ok_or_else(|| usage("--checkpoint is required"))?;
    Checkpoint::load(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn cmd_enhance(config: RunConfig, a: &EnhanceArgs) -> Result<()> {
    let out = a.out.as_ref().ok_or_else(|| usage("--out is required"))?;
    let ckpt = load_checkpoint(a.checkpoint.as_ref())?;
    let (fine, collider) = load_problem(&config, &a.input, config.solver.levels)?;
    let set = PotentialSet::new(&fine, &config.materials, collider.as_ref(), config.solver.terms).map_err(failure)?;
    let k = config.solver.k.unwrap_or(ckpt.k);
    let dir = output_dir(out);
    prepare_dir(&dir, &config)?;
    let report = neural_solve(&fine, &set, &ckpt.model, k).map_err(failure)?;
    let mut result = fine.clone();
    result.positions = report.positions.clone();
    save_obj(&result, out).map_err(failure)?;
    report.save_csv(out.with_extension("csv")).map_err(failure)?;
    println!(
        "enhanced {} -> {} triangles; potential {:.6e} -> {:.6e} in {} iterations",
        fine.triangles().len() / 16usize.pow(config.solver.levels as u32).max(1),
        fine.triangles().len(),
        report.initial_potential(),
        report.final_potential(),
        report.iterations
    );
    if report.diverged {
        return Err(failure("neural solve diverged"));
    }
    Ok(())
}

/// Benchmark column name, e.g. `gd_lr1e-1`.
pub fn column_name(method: &str, lr: f64) -> String {
    format!("{method}_lr{lr:e}")
}

/// Writes the per-iteration potentials of several runs side by side.
/// Iterations past the end of a run are left empty; diverged runs read `inf`
/// from the divergence point on.
pub fn write_convergence_csv(runs: &[(String, SolveReport)], rows: usize) -> String {
    let mut out = String::from("iteration");
    for (name, _) in runs {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for i in 0..rows {
        let _ = write!(out, "{i}");
        for (_, r) in runs {
            out.push(',');
            if i < r.potentials.len() || (r.diverged && i <= r.iterations) {
                let _ = write!(out, "{:e}", r.potential_at(i));
            }
        }
        out.push('\n');
    }
    out
}

fn cmd_bench(config: RunConfig, a: &BenchArgs) -> Result<()> {
    let out = a.out.as_ref().ok_or_else(|| usage("--out is required"))?;
    let ckpt = load_checkpoint(a.checkpoint.as_ref())?;
    let s = &config.solver;
    let (fine, collider) = load_problem(&config, &a.input, s.levels)?;
    prepare_dir(out, &config)?;
    let set = PotentialSet::new(&fine, &config.materials, collider.as_ref(), s.terms).map_err(failure)?;
    let k = s.k.unwrap_or(ckpt.k);

    let mut runs = vec![("neural".to_string(), neural_solve(&fine, &set, &ckpt.model, k).map_err(failure)?)];
    for &lr in &s.gd_lrs {
        runs.push((column_name("gd", lr), gd_solve(&fine, &set, lr, s.iterations).map_err(failure)?));
    }
    for &lr in &s.adam_lrs {
        let params = AdamParams { lr, beta1: s.beta1, beta2: s.beta2, eps: s.eps };
        runs.push((column_name("adam", lr), adam_solve(&fine, &set, params, s.iterations).map_err(failure)?));
    }
    let rows = k.max(s.iterations) + 1;
    fs::write(out.join("convergence.csv"), write_convergence_csv(&runs, rows)).map_err(failure)?;

    let mut summary = String::from("solver,iterations,initial_potential,final_potential,diverged\n");
    for (name, r) in &runs {
        let _ = writeln!(
            summary,
            "{name},{},{:e},{:e},{}",
            r.iterations,
            r.initial_potential(),
            r.potential_at(r.iterations),
            r.diverged
        );
        let flag = if r.diverged { " (diverged)" } else { "" };
        println!("{name:>16}: {:.6e}{flag}", r.potential_at(r.iterations));
    }
    fs::write(out.join("summary.csv"), summary).map_err(failure)?;

    let mut timings = String::from("level,vertices,edges,force_ms,integration_ms\n");
    for &level in &s.timing_levels {
        let mesh = load_fine_mesh(&config, &a.input, level)?;
        let set = PotentialSet::new(&mesh, &config.materials, collider.as_ref(), s.terms).map_err(failure)?;
        let start = Instant::now();
        let r = neural_solve(&mesh, &set, &ckpt.model, k).map_err(failure)?;
        let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
        let _ = writeln!(
            timings,
            "{level},{},{},{:.4},{:.4}",
            mesh.num_vertices(),
            mesh.edges().len(),
            mean(&r.force_ms),
            mean(&r.integration_ms)
        );
        log::info!("level {level}: {} edges in {:?}", mesh.edges().len(), start.elapsed());
    }
    fs::write(out.join("timings.csv"), timings).map_err(failure)?;
    Ok(())
}

fn cmd_gradcheck(config: RunConfig, a: &GradcheckArgs) -> Result<()> {
    use rand::{Rng, SeedableRng};

    let mut mesh = load_fine_mesh(&config, &a.input, 0)?;
    let collider = load_collider(&config, &a.input)?;
    if !(a.perturb >= 0.0 && a.perturb.is_finite()) {
        return Err(usage("--perturb must be finite and non-negative"));
    }
    if a.perturb > 0.0 {
        let amp = a.perturb * mesh.mean_rest_edge_length();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(config.training.seed);
        for p in &mut mesh.positions {
            for c in p.iter_mut() {
                *c += rng.gen_range(-amp..=amp);
            }
        }
    }
    if let Some(dir) = &a.out {
        prepare_dir(dir, &config)?;
    }
    println!("seed = {}", config.training.seed);
    let checks = check_terms(&mesh, &config.materials, collider.as_ref(), config.solver.terms, &mesh.positions)
        .map_err(failure)?;
    let mut csv = String::from("term,max_rel_error,max_force\n");
    let mut ok = true;
    for c in &checks {
        let pass = c.max_rel_error < GRADCHECK_TOLERANCE;
        ok &= pass;
        println!(
            "{:<8} max relative error {:.3e}  max |F| {:.3e}  {}",
            c.term.name(),
            c.max_rel_error,
            c.max_force,
            if pass { "ok" } else { "FAIL" }
        );
        let _ = writeln!(csv, "{},{:e},{:e}", c.term.name(), c.max_rel_error, c.max_force);
    }
    if let Some(dir) = &a.out {
        fs::write(dir.join("gradcheck.csv"), csv).map_err(failure)?;
    }
    if ok {
        Ok(())
    } else {
        Err(failure(format!("force error above {GRADCHECK_TOLERANCE:e}")))
    }
}
