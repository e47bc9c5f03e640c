//! Run configuration: a TOML file with `[materials]`, `[solver]`,
//! `[network]` and `[training]` sections, merged with command-line
//! overrides. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::energy::{MaterialParams, TermSet};
use crate::train::{NetworkConfig, TrainConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Inference and benchmark settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// rollout length; the checkpoint's value when absent
    pub k: Option<usize>,
    /// potentials active at inference
    pub terms: TermSet,
    /// subdivision levels applied to the input mesh
    pub levels: usize,
    /// collider file, resolved against the working directory
    pub collider: Option<PathBuf>,
    /// extra pinned vertices of the coarse input, one index per line
    pub pins: Option<PathBuf>,
    /// pin the boundary of the subdivided mesh
    pub pin_boundary: bool,
    /// gradient-descent learning rates swept by the benchmark
    pub gd_lrs: Vec<f64>,
    /// Adam learning rates swept by the benchmark
    pub adam_lrs: Vec<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// iterations of the baselines in the benchmark
    pub iterations: usize,
    /// subdivision levels swept by the timing benchmark
    pub timing_levels: Vec<usize>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            k: None,
            terms: TermSet::elastic(),
            levels: 2,
            collider: None,
            pins: None,
            pin_boundary: true,
            gd_lrs: vec![1e-1, 1.0, 10.0],
            adam_lrs: vec![1e-2, 1e-3, 1e-4],
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            iterations: 5,
            timing_levels: vec![0, 1, 2, 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// worker threads; all cores when absent
    pub threads: Option<usize>,
    pub materials: MaterialParams,
    pub solver: SolverConfig,
    pub network: NetworkConfig,
    pub training: TrainConfig,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub terms: Option<TermSet>,
    pub levels: Option<usize>,
    pub k: Option<usize>,
    pub lr: Option<f64>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let config: RunConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::parse(&text)
    }

    /// The file at `path`, or defaults when no file is given.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self, ConfigError> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    /// Applies overrides. `--terms` selects the training terms when
    /// `training` is set and the inference terms otherwise; `--lr` likewise
    /// sets the weight learning rate or restricts the benchmark sweeps.
    pub fn apply(&mut self, o: &Overrides, training: bool) -> Result<(), ConfigError> {
        if let Some(seed) = o.seed {
            self.training.seed = seed;
        }
        if let Some(t) = o.threads {
            self.threads = Some(t);
        }
        if let Some(levels) = o.levels {
            self.solver.levels = levels;
            self.training.levels = levels;
        }
        if let Some(k) = o.k {
            self.solver.k = Some(k);
            self.training.k = k;
        }
        match (training, o.terms) {
            (true, Some(t)) => self.training.terms = t,
            (false, Some(t)) => self.solver.terms = t,
            _ => {}
        }
        match (training, o.lr) {
            (true, Some(lr)) => self.training.lr = lr,
            (false, Some(lr)) => {
                self.solver.gd_lrs = vec![lr];
                self.solver.adam_lrs = vec![lr];
            }
            _ => {}
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: String| ConfigError::Invalid(e);
        self.materials.validate().map_err(|e| invalid(e.to_string()))?;
        self.training.validate().map_err(|e| invalid(e.to_string()))?;
        self.network.validate().map_err(|e| invalid(e.to_string()))?;
        if self.threads == Some(0) {
            return Err(invalid("threads must be at least 1".into()));
        }
        if self.solver.k == Some(0) {
            return Err(invalid("solver k must be at least 1".into()));
        }
        if self.solver.gd_lrs.iter().chain(&self.solver.adam_lrs).any(|lr| !(*lr >= 0.0 && lr.is_finite())) {
            return Err(invalid("benchmark learning rates must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// TOML text of the effective configuration.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    /// Writes the effective configuration as `config.toml` in `dir`.
    pub fn echo(&self, dir: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::write(dir.as_ref().join("config.toml"), self.to_toml())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::Term;

    #[test]
    fn empty_file_gives_defaults() {
        let c = RunConfig::parse("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.training.k, 5);
        assert_eq!(c.training.lr, 1e-4);
        assert_eq!(c.network.latent, 128);
        assert_eq!(c.materials.stretch_stiffness, 1e4);
    }

    #[test]
    fn sections_parse_and_unknown_keys_fail() {
        let c = RunConfig::parse(
            "threads = 2\n[materials]\nbend_stiffness = 5.0\n[solver]\nterms = \"stretch,bend,gravity\"\n[network]\nlatent = 32\n[training]\nepochs = 3\n",
        )
        .unwrap();
        assert_eq!(c.threads, Some(2));
        assert_eq!(c.materials.bend_stiffness, 5.0);
        assert!(c.solver.terms.contains(Term::Gravity));
        assert_eq!(c.network.latent, 32);
        assert_eq!(c.training.epochs, 3);
        for bad in ["[materials]\nstifness = 1.0\n", "[bogus]\n", "extra = 1\n", "[solver]\nterms = \"stretch,wind\"\n"] {
            assert!(RunConfig::parse(bad).is_err(), "{bad}");
        }
        assert!(RunConfig::parse("[materials]\nstretch_stiffness = -1.0\n").is_err());
    }

    #[test]
    fn overrides_take_precedence() {
        let mut c = RunConfig::default();
        let o = Overrides { seed: Some(7), k: Some(3), lr: Some(0.5), terms: Some("stretch".parse().unwrap()), ..Default::default() };
        c.apply(&o, false).unwrap();
        assert_eq!((c.training.seed, c.solver.k, c.training.k), (7, Some(3), 3));
        assert_eq!(c.solver.gd_lrs, vec![0.5]);
        assert_eq!(c.solver.terms, TermSet::empty().with(Term::Stretch));
        assert_eq!(c.training.terms, TermSet::elastic());
        let mut t = RunConfig::default();
        t.apply(&o, true).unwrap();
        assert_eq!(t.training.lr, 0.5);
        assert_eq!(t.training.terms, TermSet::empty().with(Term::Stretch));
        assert!(RunConfig::default().apply(&Overrides { threads: Some(0), ..Default::default() }, true).is_err());
    }

    #[test]
    fn echo_round_trips() {
        let mut c = RunConfig::default();
        c.solver.collider = Some("scene.toml".into());
        c.training.dataset = Some("data".into());
        c.threads = Some(1);
        let back = RunConfig::parse(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }
}
