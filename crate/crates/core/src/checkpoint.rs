//! Binary checkpoint of a trained integrator.
//!
//! Little-endian layout:
//!
//! ```text
//! magic "GCLOTHCK", version u32
//! H, K, M, latent, hidden layers (u64), tied (u8), seed (u64)
//! scales: length, force, displacement (f64)
//! training: lr (f64), epochs, batch size, best epoch (u64), best loss (f64),
//!           terms (u64 length + UTF-8)
//! MLP count (u64), then per MLP in canonical order:
//!   layer count (u64); per layer rows, cols (u64), weights row-major, bias
//!   norm flag (u8) [+ scale, shift]
//! ```
//!
//! Floats are stored by bit pattern, so a save/load round trip is exact.

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::autodiff::Tensor;
use crate::energy::TermSet;
use crate::gnn::{GraphNetWeights, LayerNorm, Linear, Mlp};
use crate::integrator::{FeatureScales, NeuralIntegrator};

const MAGIC: &[u8; 8] = b"GCLOTHCK";
const VERSION: u32 = 1;
/// Guards against absurd allocations when reading a corrupt file.
const MAX_DIM: u64 = 1 << 24;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

pub type Result<T> = std::result::Result<T, CheckpointError>;

/// How the weights were obtained.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingMeta {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub best_epoch: usize,
    pub best_loss: f64,
    pub terms: TermSet,
}

impl Default for TrainingMeta {
    fn default() -> Self {
        TrainingMeta { lr: 0.0, epochs: 0, batch_size: 0, best_epoch: 0, best_loss: f64::NAN, terms: TermSet::elastic() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: NeuralIntegrator,
    /// rollout length `K` used in training
    pub k: usize,
    /// weight initialization seed
    pub seed: u64,
    pub meta: TrainingMeta,
}

struct Writer<W: Write>(W);

impl<W: Write> Writer<W> {
    fn u8(&mut self, v: u8) -> Result<()> {
        Ok(self.0.write_all(&[v])?)
    }
    fn u64(&mut self, v: u64) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn usize(&mut self, v: usize) -> Result<()> {
        self.u64(v as u64)
    }
    fn f64(&mut self, v: f64) -> Result<()> {
        Ok(self.0.write_all(&v.to_bits().to_le_bytes())?)
    }
    fn floats(&mut self, t: &Tensor) -> Result<()> {
        t.data().iter().try_for_each(|&v| self.f64(v))
    }
    fn mlp(&mut self, m: &Mlp) -> Result<()> {
        self.usize(m.layers.len())?;
        for l in &m.layers {
            self.usize(l.weight.rows())?;
            self.usize(l.weight.cols())?;
            self.floats(&l.weight)?;
            self.floats(&l.bias)?;
        }
        match &m.norm {
            Some(n) => {
                self.u8(1)?;
                self.floats(&n.scale)?;
                self.floats(&n.shift)
            }
            None => self.u8(0),
        }
    }
}

struct Reader<R: Read>(R);

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.0.read_exact(&mut b)?;
        Ok(b)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
    fn dim(&mut self, what: &str) -> Result<usize> {
        let v = self.u64()?;
        if v > MAX_DIM {
            return Err(CheckpointError::Corrupt(format!("{what} = {v} is implausibly large")));
        }
        Ok(v as usize)
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(u64::from_le_bytes(self.bytes()?)))
    }
    fn tensor(&mut self, rows: usize, cols: usize) -> Result<Tensor> {
        let data = (0..rows * cols).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Ok(Tensor::new(rows, cols, data))
    }
    fn mlp(&mut self) -> Result<Mlp> {
        let count = self.dim("layer count")?;
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let rows = self.dim("layer rows")?;
            let cols = self.dim("layer cols")?;
            let weight = self.tensor(rows, cols)?;
            let bias = self.tensor(1, cols)?;
            layers.push(Linear { weight, bias });
        }
        let out = layers.last().map_or(0, |l| l.output_width());
        let norm = match self.u8()? {
            0 => None,
            1 => Some(LayerNorm { scale: self.tensor(1, out)?, shift: self.tensor(1, out)? }),
            f => return Err(CheckpointError::Corrupt(format!("layer-norm flag {f}"))),
        };
        Ok(Mlp { layers, norm })
    }
}

impl Checkpoint {
    pub fn write(&self, out: impl Write) -> Result<()> {
        let mut w = Writer(out);
        w.0.write_all(MAGIC)?;
        w.0.write_all(&VERSION.to_le_bytes())?;
        let weights = &self.model.weights;
        w.usize(self.model.history)?;
        w.usize(self.k)?;
        w.usize(weights.iterations)?;
        w.usize(weights.latent())?;
        w.usize(weights.hidden_layers())?;
        w.u8(weights.is_tied() as u8)?;
        w.u64(self.seed)?;
        let s = self.model.scales;
        for v in [s.length, s.force, s.displacement] {
            w.f64(v)?;
        }
        let m = &self.meta;
        w.f64(m.lr)?;
        w.usize(m.epochs)?;
        w.usize(m.batch_size)?;
        w.usize(m.best_epoch)?;
        w.f64(m.best_loss)?;
        let terms = m.terms.to_string();
        w.usize(terms.len())?;
        w.0.write_all(terms.as_bytes())?;
        let mut mlps = vec![&weights.node_encoder, &weights.edge_encoder];
        for (e, v) in weights.edge_processors.iter().zip(&weights.node_processors) {
            mlps.extend([e, v]);
        }
        mlps.push(&weights.decoder);
        w.usize(mlps.len())?;
        for m in mlps {
            w.mlp(m)?;
        }
        Ok(())
    }

    pub fn read(input: impl Read) -> Result<Self> {
        let mut r = Reader(input);
        if &r.bytes::<8>()? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = u32::from_le_bytes(r.bytes()?);
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let history = r.dim("H")?;
        let k = r.dim("K")?;
        let iterations = r.dim("M")?;
        let latent = r.dim("latent width")?;
        let hidden = r.dim("hidden layers")?;
        let tied = r.u8()? != 0;
        let seed = r.u64()?;
        let scales = FeatureScales { length: r.f64()?, force: r.f64()?, displacement: r.f64()? };
        let lr = r.f64()?;
        let epochs = r.dim("epochs")?;
        let batch_size = r.dim("batch size")?;
        let best_epoch = r.dim("best epoch")?;
        let best_loss = r.f64()?;
        let len = r.dim("terms length")?;
        let mut buf = vec![0u8; len];
        r.0.read_exact(&mut buf)?;
        let terms = String::from_utf8(buf)
            .map_err(|_| CheckpointError::Corrupt("terms are not UTF-8".into()))?
            .parse::<TermSet>()
            .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        let count = r.dim("MLP count")?;
        if count < 5 || (count - 3) % 2 != 0 {
            return Err(CheckpointError::Corrupt(format!("{count} MLPs")));
        }
        let mut mlps = (0..count).map(|_| r.mlp()).collect::<Result<Vec<_>>>()?;
        let decoder = mlps.pop().unwrap();
        let mut rest = mlps.into_iter();
        let node_encoder = rest.next().unwrap();
        let edge_encoder = rest.next().unwrap();
        let mut edge_processors = Vec::new();
        let mut node_processors = Vec::new();
        while let (Some(e), Some(v)) = (rest.next(), rest.next()) {
            edge_processors.push(e);
            node_processors.push(v);
        }
        let weights =
            GraphNetWeights { node_encoder, edge_encoder, node_processors, edge_processors, decoder, iterations };
        let model = NeuralIntegrator { weights, history, scales };
        model.validate().map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        let w = &model.weights;
        if w.latent() != latent || w.hidden_layers() != hidden || w.is_tied() != (tied && iterations > 1) {
            return Err(CheckpointError::Corrupt("header disagrees with stored layers".into()));
        }
        if k == 0 {
            return Err(CheckpointError::Corrupt("K = 0".into()));
        }
        let meta = TrainingMeta { lr, epochs, batch_size, best_epoch, best_loss, terms };
        Ok(Checkpoint { model, k, seed, meta })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read(bytes.as_slice())
    }
}
