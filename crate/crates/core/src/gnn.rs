//! Encode-process-decode message passing network.
//!
//! Node and edge features are lifted to latents by two encoder MLPs, refined
//! by `M` residual message-passing iterations and read out per vertex by a
//! decoder MLP. Every mesh edge is used in both directions; messages are
//! summed at the receiving vertex in edge-index order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{Tape, Tensor, Var};
use crate::mesh::Mesh;

const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum GnnError {
    #[error("{what}: expected width {expected}, got {got}")]
    WidthMismatch { what: &'static str, expected: usize, got: usize },
    #[error("{what}: expected {expected} rows, got {got}")]
    RowMismatch { what: &'static str, expected: usize, got: usize },
    #[error("edge endpoint {index} out of range for {nodes} nodes")]
    EdgeOutOfRange { index: usize, nodes: usize },
    #[error("invalid network configuration: {0}")]
    InvalidConfig(String),
    #[error("parameter vector has length {got}, expected {expected}")]
    ParameterCount { expected: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, GnnError>;

/// Dense layer `y = x W + b` with `W: in×out`, `b: 1×out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Linear { weight: Tensor::zeros(input, output), bias: Tensor::zeros(1, output) }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn xavier(input: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / (input + output) as f64).sqrt();
        let data = (0..input * output).map(|_| rng.gen_range(-bound..=bound)).collect();
        Linear { weight: Tensor::new(input, output, data), bias: Tensor::zeros(1, output) }
    }

    pub fn input_width(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_width(&self) -> usize {
        self.weight.cols()
    }
}

/// Affine layer normalization applied to an MLP's output.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub scale: Tensor,
    pub shift: Tensor,
}

impl LayerNorm {
    pub fn identity(width: usize) -> Self {
        LayerNorm { scale: Tensor::filled(1, width, 1.0), shift: Tensor::zeros(1, width) }
    }
}

/// Multilayer perceptron with ReLU between layers and an optional output
/// layer normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub norm: Option<LayerNorm>,
}

impl Mlp {
    /// `widths = [in, hidden.., out]`.
    pub fn new(widths: &[usize], layer_norm: bool, rng: Option<&mut ChaCha8Rng>) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least an input and an output width");
        let layers = match rng {
            Some(rng) => widths.windows(2).map(|w| Linear::xavier(w[0], w[1], rng)).collect(),
            None => widths.windows(2).map(|w| Linear::zeros(w[0], w[1])).collect(),
        };
        let out = *widths.last().unwrap();
        Mlp { layers, norm: layer_norm.then(|| LayerNorm::identity(out)) }
    }

    /// Checks that consecutive layer widths chain and all values are finite.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(GnnError::InvalidConfig("MLP without layers".into()));
        }
        for pair in self.layers.windows(2) {
            if pair[0].output_width() != pair[1].input_width() {
                return Err(GnnError::WidthMismatch {
                    what: "consecutive MLP layers",
                    expected: pair[0].output_width(),
                    got: pair[1].input_width(),
                });
            }
        }
        for l in &self.layers {
            if l.bias.shape() != (1, l.output_width()) {
                return Err(GnnError::WidthMismatch { what: "MLP bias", expected: l.output_width(), got: l.bias.cols() });
            }
        }
        if let Some(n) = &self.norm {
            let w = self.output_width();
            if n.scale.shape() != (1, w) || n.shift.shape() != (1, w) {
                return Err(GnnError::WidthMismatch { what: "layer norm", expected: w, got: n.scale.cols() });
            }
        }
        if !self.tensors().iter().all(|t| t.is_finite()) {
            return Err(GnnError::InvalidConfig("non-finite MLP parameter".into()));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].input_width()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().unwrap().output_width()
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect();
        if let Some(n) = &self.norm {
            out.extend([&n.scale, &n.shift]);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias]).collect();
        if let Some(n) = &mut self.norm {
            out.extend([&mut n.scale, &mut n.shift]);
        }
        out
    }
}

/// Shape of a [`GraphNetWeights`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GraphNetConfig {
    pub node_input: usize,
    pub edge_input: usize,
    pub latent: usize,
    pub hidden_layers: usize,
    /// message-passing iterations `M`
    pub iterations: usize,
    /// share one processor pair across all iterations
    pub tied: bool,
    pub output: usize,
}

impl GraphNetConfig {
    pub fn new(node_input: usize, edge_input: usize) -> Self {
        GraphNetConfig { node_input, edge_input, latent: 128, hidden_layers: 2, iterations: 10, tied: false, output: 3 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.node_input == 0 || self.edge_input == 0 || self.latent == 0 || self.output == 0 {
            return Err(GnnError::InvalidConfig("widths must be positive".into()));
        }
        if self.iterations == 0 {
            return Err(GnnError::InvalidConfig("at least one message-passing iteration is required".into()));
        }
        Ok(())
    }

    fn widths(&self, input: usize, output: usize) -> Vec<usize> {
        let mut w = vec![input];
        w.extend(std::iter::repeat(self.latent).take(self.hidden_layers));
        w.push(output);
        w
    }
}

/// Trainable parameters θ of the five MLP roles.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphNetWeights {
    pub node_encoder: Mlp,
    pub edge_encoder: Mlp,
    /// one per iteration, or a single shared one when tied
    pub node_processors: Vec<Mlp>,
    pub edge_processors: Vec<Mlp>,
    pub decoder: Mlp,
    pub iterations: usize,
}

impl GraphNetWeights {
    /// Xavier-initialized weights from `seed`.
    pub fn init(config: &GraphNetConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(config, Some(&mut rng))
    }

    /// All parameters zero; layer-norm scales one.
    pub fn zeros(config: &GraphNetConfig) -> Result<Self> {
        Self::build(config, None)
    }

    fn build(config: &GraphNetConfig, mut rng: Option<&mut ChaCha8Rng>) -> Result<Self> {
        config.validate()?;
        let l = config.latent;
        let mut mlp = |widths: Vec<usize>, norm: bool| Mlp::new(&widths, norm, rng.as_deref_mut());
        let node_encoder = mlp(config.widths(config.node_input, l), true);
        let edge_encoder = mlp(config.widths(config.edge_input, l), true);
        let copies = if config.tied { 1 } else { config.iterations };
        let mut node_processors = Vec::with_capacity(copies);
        let mut edge_processors = Vec::with_capacity(copies);
        for _ in 0..copies {
            edge_processors.push(mlp(config.widths(3 * l, l), true));
            node_processors.push(mlp(config.widths(2 * l, l), true));
        }
        let decoder = mlp(config.widths(l, config.output), false);
        Ok(GraphNetWeights { node_encoder, edge_encoder, node_processors, edge_processors, decoder, iterations: config.iterations })
    }

    pub fn latent(&self) -> usize {
        self.node_encoder.output_width()
    }

    pub fn node_input(&self) -> usize {
        self.node_encoder.input_width()
    }

    pub fn edge_input(&self) -> usize {
        self.edge_encoder.input_width()
    }

    pub fn output_width(&self) -> usize {
        self.decoder.output_width()
    }

    pub fn is_tied(&self) -> bool {
        self.node_processors.len() == 1 && self.iterations > 1
    }

    pub fn hidden_layers(&self) -> usize {
        self.decoder.layers.len() - 1
    }

    pub fn config(&self) -> GraphNetConfig {
        GraphNetConfig {
            node_input: self.node_input(),
            edge_input: self.edge_input(),
            latent: self.latent(),
            hidden_layers: self.hidden_layers(),
            iterations: self.iterations,
            tied: self.is_tied(),
            output: self.output_width(),
        }
    }

    fn mlps(&self) -> Vec<&Mlp> {
        let mut out = vec![&self.node_encoder, &self.edge_encoder];
        for (e, v) in self.edge_processors.iter().zip(&self.node_processors) {
            out.push(e);
            out.push(v);
        }
        out.push(&self.decoder);
        out
    }

    /// Checks widths chain through the whole network.
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(GnnError::InvalidConfig("zero iterations".into()));
        }
        let copies = self.node_processors.len();
        if copies != self.edge_processors.len() || !(copies == 1 || copies == self.iterations) {
            return Err(GnnError::InvalidConfig(format!(
                "{copies} processor pairs for {} iterations",
                self.iterations
            )));
        }
        for m in self.mlps() {
            m.validate()?;
        }
        let l = self.latent();
        let check = |what, expected, got| {
            if expected == got {
                Ok(())
            } else {
                Err(GnnError::WidthMismatch { what, expected, got })
            }
        };
        check("edge encoder output", l, self.edge_encoder.output_width())?;
        for (e, v) in self.edge_processors.iter().zip(&self.node_processors) {
            check("edge processor input", 3 * l, e.input_width())?;
            check("edge processor output", l, e.output_width())?;
            check("node processor input", 2 * l, v.input_width())?;
            check("node processor output", l, v.output_width())?;
        }
        check("decoder input", l, self.decoder.input_width())
    }

    /// Parameters in a fixed canonical order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        self.mlps().into_iter().flat_map(|m| m.tensors()).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        out.extend(self.node_encoder.tensors_mut());
        out.extend(self.edge_encoder.tensors_mut());
        for (e, v) in self.edge_processors.iter_mut().zip(self.node_processors.iter_mut()) {
            out.extend(e.tensors_mut());
            out.extend(v.tensors_mut());
        }
        out.extend(self.decoder.tensors_mut());
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.data().len()).sum()
    }

    /// Concatenation of all parameters in canonical order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        let expected = self.num_parameters();
        if flat.len() != expected {
            return Err(GnnError::ParameterCount { expected, got: flat.len() });
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.data().len();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Places the parameters on `tape`, as variables if `trainable` and as
    /// constants otherwise.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> BoundNet<'t> {
        let put = |t: &Tensor| if trainable { tape.var(t.clone()) } else { tape.constant(t.clone()) };
        let bind_mlp = |m: &Mlp| BoundMlp {
            layers: m.layers.iter().map(|l| (put(&l.weight), put(&l.bias))).collect(),
            norm: m.norm.as_ref().map(|n| (put(&n.scale), put(&n.shift))),
        };
        let node_encoder = bind_mlp(&self.node_encoder);
        let edge_encoder = bind_mlp(&self.edge_encoder);
        let mut edge_processors = Vec::new();
        let mut node_processors = Vec::new();
        for (e, v) in self.edge_processors.iter().zip(&self.node_processors) {
            edge_processors.push(bind_mlp(e));
            node_processors.push(bind_mlp(v));
        }
        let decoder = bind_mlp(&self.decoder);
        BoundNet { node_encoder, edge_encoder, node_processors, edge_processors, decoder, iterations: self.iterations }
    }

    /// Forward pass without gradient tracking.
    pub fn predict(&self, graph: &Graph, node_features: &Tensor, edge_features: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let net = self.bind(&tape, false);
        let v = tape.constant(node_features.clone());
        let e = tape.constant(edge_features.clone());
        let out = net.forward(graph, v, e)?;
        let value = out.value().clone();
        Ok(value)
    }
}

/// An MLP whose parameters live on a tape.
pub struct BoundMlp<'t> {
    layers: Vec<(Var<'t>, Var<'t>)>,
    norm: Option<(Var<'t>, Var<'t>)>,
}

impl<'t> BoundMlp<'t> {
    pub fn apply(&self, x: Var<'t>) -> Var<'t> {
        let (w, b) = self.layers[0];
        self.finish(x.affine(w, b, self.layers.len() > 1))
    }

    /// Same as `apply(concat[edges, nodes[receivers], nodes[senders]])`,
    /// with the node blocks of the first layer applied per node before the
    /// gather.
    fn apply_to_edges(&self, edges: Var<'t>, nodes: Var<'t>, graph: &Graph) -> Var<'t> {
        let (w, b) = self.layers[0];
        let (le, ln) = (edges.shape().1, nodes.shape().1);
        let h = edges
            .affine(w.row_block(0, le), b, false)
            .add_gathered(nodes.matmul(w.row_block(le, ln)), &graph.receivers)
            .add_gathered(nodes.matmul(w.row_block(le + ln, ln)), &graph.senders);
        self.finish(if self.layers.len() > 1 { h.max0() } else { h })
    }

    /// Layers after the first, then the optional normalization.
    fn finish(&self, mut h: Var<'t>) -> Var<'t> {
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in self.layers.iter().enumerate().skip(1) {
            h = h.affine(w, b, i < last);
        }
        if let Some((scale, shift)) = self.norm {
            h = h.layer_norm_affine(scale, shift, LAYER_NORM_EPS);
        }
        h
    }

    fn vars(&self) -> impl Iterator<Item = Var<'t>> + '_ {
        self.layers.iter().flat_map(|&(w, b)| [w, b]).chain(self.norm.iter().flat_map(|&(s, t)| [s, t]))
    }
}

/// Network parameters bound to a tape.
pub struct BoundNet<'t> {
    node_encoder: BoundMlp<'t>,
    edge_encoder: BoundMlp<'t>,
    node_processors: Vec<BoundMlp<'t>>,
    edge_processors: Vec<BoundMlp<'t>>,
    decoder: BoundMlp<'t>,
    iterations: usize,
}

/// Per-vertex and per-edge latents.
pub struct GraphSignals<'t> {
    pub nodes: Var<'t>,
    pub edges: Var<'t>,
}

impl<'t> BoundNet<'t> {
    /// Parameter variables in the canonical order of
    /// [`GraphNetWeights::tensors`].
    pub fn vars(&self) -> Vec<Var<'t>> {
        let mut out: Vec<Var<'t>> = Vec::new();
        out.extend(self.node_encoder.vars());
        out.extend(self.edge_encoder.vars());
        for (e, v) in self.edge_processors.iter().zip(&self.node_processors) {
            out.extend(e.vars());
            out.extend(v.vars());
        }
        out.extend(self.decoder.vars());
        out
    }

    fn input_width(mlp: &BoundMlp<'t>) -> usize {
        mlp.layers[0].0.shape().0
    }

    pub fn encode(&self, graph: &Graph, node_features: Var<'t>, edge_features: Var<'t>) -> Result<GraphSignals<'t>> {
        let (nr, nc) = node_features.shape();
        let (er, ec) = edge_features.shape();
        let expect = |what, expected: usize, got: usize, width: bool| {
            if expected == got {
                Ok(())
            } else if width {
                Err(GnnError::WidthMismatch { what, expected, got })
            } else {
                Err(GnnError::RowMismatch { what, expected, got })
            }
        };
        expect("node features", Self::input_width(&self.node_encoder), nc, true)?;
        expect("edge features", Self::input_width(&self.edge_encoder), ec, true)?;
        expect("node features", graph.num_nodes(), nr, false)?;
        expect("edge features", graph.num_edges(), er, false)?;
        Ok(GraphSignals { nodes: self.node_encoder.apply(node_features), edges: self.edge_encoder.apply(edge_features) })
    }

    pub fn process(&self, graph: &Graph, signals: GraphSignals<'t>) -> GraphSignals<'t> {
        let tape = signals.nodes.tape();
        let GraphSignals { mut nodes, mut edges } = signals;
        let n = graph.num_nodes();
        for j in 0..self.iterations {
            let p = if self.edge_processors.len() == 1 { 0 } else { j };
            edges = edges + self.edge_processors[p].apply_to_edges(edges, nodes, graph);
            let aggregate = edges.scatter_add_rows(&graph.receivers, n);
            nodes = nodes + self.node_processors[p].apply(tape.concat_cols(&[nodes, aggregate]));
        }
        GraphSignals { nodes, edges }
    }

    pub fn decode(&self, signals: &GraphSignals<'t>) -> Var<'t> {
        self.decoder.apply(signals.nodes)
    }

    /// Encode, `M` processing iterations, decode: `n×3` outputs.
    pub fn forward(&self, graph: &Graph, node_features: Var<'t>, edge_features: Var<'t>) -> Result<Var<'t>> {
        let signals = self.encode(graph, node_features, edge_features)?;
        let signals = self.process(graph, signals);
        Ok(self.decode(&signals))
    }
}

/// Directed message-passing graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    num_nodes: usize,
    senders: Vec<usize>,
    receivers: Vec<usize>,
}

impl Graph {
    pub fn new(num_nodes: usize, senders: Vec<usize>, receivers: Vec<usize>) -> Result<Self> {
        if senders.len() != receivers.len() {
            return Err(GnnError::RowMismatch { what: "receivers", expected: senders.len(), got: receivers.len() });
        }
        if let Some(&index) = senders.iter().chain(&receivers).find(|&&i| i >= num_nodes) {
            return Err(GnnError::EdgeOutOfRange { index, nodes: num_nodes });
        }
        Ok(Graph { num_nodes, senders, receivers })
    }

    /// Both directions of every mesh edge: directed edge `2i` runs
    /// `a → b` and `2i + 1` runs `b → a` for mesh edge `i = (a, b)`.
    pub fn from_mesh(mesh: &Mesh) -> Self {
        let mut senders = Vec::with_capacity(2 * mesh.edges().len());
        let mut receivers = Vec::with_capacity(2 * mesh.edges().len());
        for &[a, b] in mesh.edges() {
            senders.extend([a, b]);
            receivers.extend([b, a]);
        }
        Graph { num_nodes: mesh.num_vertices(), senders, receivers }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.senders.len()
    }

    pub fn senders(&self) -> &[usize] {
        &self.senders
    }

    pub fn receivers(&self) -> &[usize] {
        &self.receivers
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> GraphNetConfig {
        GraphNetConfig { node_input: 4, edge_input: 3, latent: 8, hidden_layers: 2, iterations: 3, tied: false, output: 3 }
    }

    fn random_tensor(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::new(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    fn random_graph(n: usize, m: usize, rng: &mut ChaCha8Rng) -> Graph {
        let mut s = Vec::new();
        let mut r = Vec::new();
        for _ in 0..m {
            let a = rng.gen_range(0..n);
            let mut b = rng.gen_range(0..n);
            while b == a {
                b = rng.gen_range(0..n);
            }
            s.extend([a, b]);
            r.extend([b, a]);
        }
        Graph::new(n, s, r).unwrap()
    }

    #[test]
    fn default_config_matches_declared_architecture() {
        let c = GraphNetConfig::new(18, 8);
        assert_eq!((c.latent, c.iterations, c.hidden_layers, c.output), (128, 10, 2, 3));
        let w = GraphNetWeights::init(&GraphNetConfig { latent: 16, ..c }, 1).unwrap();
        assert_eq!(w.node_processors.len(), 10);
        assert!(w.validate().is_ok());
        let tied = GraphNetWeights::init(&GraphNetConfig { latent: 16, tied: true, ..c }, 1).unwrap();
        assert_eq!(tied.node_processors.len(), 1);
        assert!(tied.is_tied());
    }

    #[test]
    fn xavier_bounds_and_seed_reproducibility() {
        let c = small_config();
        let a = GraphNetWeights::init(&c, 5).unwrap();
        assert_eq!(a, GraphNetWeights::init(&c, 5).unwrap());
        assert_ne!(a, GraphNetWeights::init(&c, 6).unwrap());
        for m in a.mlps() {
            for l in &m.layers {
                let bound = (6.0 / (l.input_width() + l.output_width()) as f64).sqrt();
                assert!(l.weight.max_abs() <= bound);
                assert_eq!(l.bias.max_abs(), 0.0);
            }
        }
    }

    #[test]
    fn zero_weights_give_bias_image() {
        let c = small_config();
        let mut w = GraphNetWeights::zeros(&c).unwrap();
        w.decoder.layers.last_mut().unwrap().bias = Tensor::row_vector(vec![0.5, -1.0, 2.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = random_graph(6, 7, &mut rng);
        let out = w.predict(&g, &random_tensor(6, 4, &mut rng), &random_tensor(14, 3, &mut rng)).unwrap();
        for r in 0..6 {
            assert_eq!(out.row(r), &[0.5, -1.0, 2.0]);
        }
    }

    #[test]
    fn width_mismatch_is_reported() {
        let w = GraphNetWeights::zeros(&small_config()).unwrap();
        let g = Graph::new(2, vec![0], vec![1]).unwrap();
        let err = w.predict(&g, &Tensor::zeros(2, 5), &Tensor::zeros(1, 3)).unwrap_err();
        assert!(matches!(err, GnnError::WidthMismatch { expected: 4, got: 5, .. }));
        let err = w.predict(&g, &Tensor::zeros(2, 4), &Tensor::zeros(2, 3)).unwrap_err();
        assert!(matches!(err, GnnError::RowMismatch { .. }));
        assert!(Graph::new(2, vec![0], vec![2]).is_err());
    }

    #[test]
    fn edgeless_single_node_graph() {
        let w = GraphNetWeights::init(&small_config(), 2).unwrap();
        let g = Graph::new(1, vec![], vec![]).unwrap();
        let tape = Tape::new();
        let net = w.bind(&tape, false);
        let signals = net
            .encode(&g, tape.constant(Tensor::row_vector(vec![0.1, 0.2, 0.3, 0.4])), tape.constant(Tensor::zeros(0, 3)))
            .unwrap();
        assert_eq!(signals.edges.shape(), (0, 8));
        let signals = net.process(&g, signals);
        let out = net.decode(&signals);
        assert_eq!(out.shape(), (1, 3));
        assert!(out.value().is_finite());
    }

    #[test]
    fn permutation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w = GraphNetWeights::init(&small_config(), 3).unwrap();
        let n = 20;
        let g = random_graph(n, 30, &mut rng);
        let v = random_tensor(n, 4, &mut rng);
        let e = random_tensor(g.num_edges(), 3, &mut rng);
        let out = w.predict(&g, &v, &e).unwrap();

        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let mut inv = vec![0; n];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        // new vertex i is old vertex perm[i]; edges keep their order
        let g2 = Graph::new(n, g.senders.iter().map(|&s| inv[s]).collect(), g.receivers.iter().map(|&r| inv[r]).collect())
            .unwrap();
        let mut v2 = Tensor::zeros(n, 4);
        for i in 0..n {
            v2.row_mut(i).copy_from_slice(v.row(perm[i]));
        }
        let out2 = w.predict(&g2, &v2, &e).unwrap();
        for i in 0..n {
            for c in 0..3 {
                let (a, b) = (out2.get(i, c), out.get(perm[i], c));
                assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn receptive_field_is_m_hops() {
        let c = small_config();
        let w = GraphNetWeights::init(&c, 4).unwrap();
        let n = c.iterations + 2;
        let mut s = Vec::new();
        let mut r = Vec::new();
        for i in 0..n - 1 {
            s.extend([i, i + 1]);
            r.extend([i + 1, i]);
        }
        let g = Graph::new(n, s, r).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let v = random_tensor(n, 4, &mut rng);
        let e = random_tensor(g.num_edges(), 3, &mut rng);
        let base = w.predict(&g, &v, &e).unwrap();
        let mut v2 = v.clone();
        v2.row_mut(0).iter_mut().for_each(|x| *x += 0.7);
        let moved = w.predict(&g, &v2, &e).unwrap();
        assert_eq!(base.row(n - 1), moved.row(n - 1));
        assert_ne!(base.row(n - 2), moved.row(n - 2));
    }

    #[test]
    fn isolated_node_ignores_the_rest() {
        let w = GraphNetWeights::init(&small_config(), 8).unwrap();
        let g = Graph::new(4, vec![0, 1, 1, 2], vec![1, 0, 2, 1]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v = random_tensor(4, 4, &mut rng);
        let e = random_tensor(4, 3, &mut rng);
        let base = w.predict(&g, &v, &e).unwrap();
        let mut v2 = random_tensor(4, 4, &mut rng);
        v2.row_mut(3).copy_from_slice(v.row(3));
        let other = w.predict(&g, &v2, &random_tensor(4, 3, &mut rng)).unwrap();
        assert_eq!(base.row(3), other.row(3));
    }

    #[test]
    fn one_weight_set_runs_on_different_topologies() {
        let w = GraphNetWeights::init(&small_config(), 1).unwrap();
        let a = Mesh::grid(2, 2, 1.0);
        let b = Mesh::grid(4, 3, 0.5);
        for mesh in [&a, &b] {
            let g = Graph::from_mesh(mesh);
            let out = w
                .predict(&g, &Tensor::filled(mesh.num_vertices(), 4, 0.1), &Tensor::filled(g.num_edges(), 3, 0.2))
                .unwrap();
            assert_eq!(out.shape(), (mesh.num_vertices(), 3));
        }
    }

    #[test]
    fn flat_round_trip() {
        let mut w = GraphNetWeights::init(&small_config(), 1).unwrap();
        let flat = w.to_flat();
        assert_eq!(flat.len(), w.num_parameters());
        let doubled: Vec<f64> = flat.iter().map(|x| 2.0 * x).collect();
        w.set_flat(&doubled).unwrap();
        assert_eq!(w.to_flat(), doubled);
        assert!(w.set_flat(&doubled[1..]).is_err());
    }

    #[test]
    fn parameter_gradient_matches_finite_differences() {
        let c = small_config();
        let mut w = GraphNetWeights::init(&c, 21).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        // layer-norm parameters away from identity so every path is exercised
        for t in w.tensors_mut() {
            t.data_mut().iter_mut().for_each(|x| *x += rng.gen_range(-0.1..0.1));
        }
        let mesh = Mesh::grid(4, 1, 1.0);
        assert_eq!(mesh.num_vertices(), 10);
        let g = Graph::from_mesh(&mesh);
        let v = random_tensor(10, 4, &mut rng);
        let e = random_tensor(g.num_edges(), 3, &mut rng);
        let probe = random_tensor(10, 3, &mut rng);
        let loss = |w: &GraphNetWeights| {
            let out = w.predict(&g, &v, &e).unwrap();
            out.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        let tape = Tape::new();
        let net = w.bind(&tape, true);
        let out = net.forward(&g, tape.constant(v.clone()), tape.constant(e.clone())).unwrap();
        let l = (out * tape.constant(probe.clone())).sum();
        let grads = tape.backward(l).unwrap();
        let analytic: Vec<f64> = net.vars().iter().flat_map(|&p| grads.wrt(p).into_data()).collect();
        let flat = w.to_flat();
        let h = 1e-6;
        let mut checked = 0;
        for i in (0..flat.len()).step_by(7) {
            let mut p = flat.clone();
            p[i] += h;
            w.set_flat(&p).unwrap();
            let up = loss(&w);
            p[i] -= 2.0 * h;
            w.set_flat(&p).unwrap();
            let down = loss(&w);
            let fd = (up - down) / (2.0 * h);
            let scale = fd.abs().max(analytic[i].abs()).max(1e-3);
            assert!((fd - analytic[i]).abs() / scale < 1e-4, "param {i}: fd {fd} vs ad {}", analytic[i]);
            checked += 1;
        }
        w.set_flat(&flat).unwrap();
        assert!(checked > 100);
    }
}
