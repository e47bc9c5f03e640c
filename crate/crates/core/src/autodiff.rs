//! Reverse-mode automatic differentiation over a recorded tape.
//!
//! Values on the tape are dense row-major [`Tensor`]s. Every primitive works
//! row-wise, so a batch of edge vectors is one `E×3` tensor and a batch of
//! edge lengths is one `E×1` column. Scalars are `1×1` tensors.
//!
//! The same tape records both the cloth potentials (forces are the negative
//! gradient of the energy) and the graph network used for training.
//!
//! ```
//! use graphcloth::autodiff::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.var(Tensor::scalar(3.0));
//! let y = x * x;
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.wrt(x).item(), 6.0);
//! ```
//!
//! Elementwise binary primitives broadcast a dimension of size one against
//! the other operand, e.g. `E×3 * E×1` scales each row and `E×3 + 1×3` adds
//! a bias row.

use std::cell::{Cell, Ref, RefCell};
use std::fmt;
use std::ops;

use thiserror::Error;

/// Lower/upper limits used when differentiating `acos`.
pub const ACOS_CLAMP: f64 = 1e-9;
/// Inputs further than this outside `[-1, 1]` are rejected by `acos`.
pub const ACOS_DOMAIN_SLACK: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("acos argument {0} outside [-1, 1]")]
    AcosDomain(f64),
    #[error("backward requires a scalar output, got a {0}x{1} tensor")]
    NonScalarOutput(usize, usize),
}

/// Dense row-major matrix of `f64`.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor({}x{}, {:?})", self.rows, self.cols, self.data)
    }
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "tensor data length mismatch");
        Tensor { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Tensor { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor { rows: 1, cols: 1, data: vec![value] }
    }

    /// `n×1` column.
    pub fn column(data: Vec<f64>) -> Self {
        Tensor { rows: data.len(), cols: 1, data }
    }

    /// `1×n` row.
    pub fn row_vector(data: Vec<f64>) -> Self {
        Tensor { rows: 1, cols: data.len(), data }
    }

    /// `n×3` tensor from a list of points.
    pub fn from_points(points: &[[f64; 3]]) -> Self {
        let data = points.iter().flat_map(|p| p.iter().copied()).collect();
        Tensor { rows: points.len(), cols: 3, data }
    }

    pub fn to_points(&self) -> Vec<[f64; 3]> {
        assert_eq!(self.cols, 3, "to_points needs a n×3 tensor");
        self.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Value of a `1×1` tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.shape(), (1, 1), "item() on a non-scalar tensor");
        self.data[0]
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    Detach,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    Dot(usize, usize),
    Cross(usize, usize),
    Norm(usize),
    Acos(usize),
    Max0(usize),
    Min0(usize),
    Square(usize),
    Sum(usize),
    MatMul(usize, usize),
    Gather(usize, Vec<usize>),
    ScatterAdd(usize, Vec<usize>),
    Concat(Vec<usize>),
    LayerNorm { input: usize, inv_std: Vec<f64> },
    /// `normalize(input) * scale + shift`; keeps the normalized rows.
    LayerNormAffine { input: usize, scale: usize, shift: usize, inv_std: Vec<f64>, normalized: Tensor },
    /// `x·w + b`, optionally followed by `max(·, 0)`.
    Affine { x: usize, w: usize, b: usize, relu: bool },
    /// `base + src[index]`.
    AddGathered { base: usize, src: usize, index: Vec<usize> },
    RowBlock { input: usize, start: usize },
    RowFunction { input: usize, jacobian: Tensor },
}

impl Op {
    fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf | Op::Constant | Op::Detach => vec![],
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::Dot(a, b)
            | Op::Cross(a, b)
            | Op::MatMul(a, b) => vec![*a, *b],
            Op::Neg(a)
            | Op::Scale(a, _)
            | Op::Norm(a)
            | Op::Acos(a)
            | Op::Max0(a)
            | Op::Min0(a)
            | Op::Square(a)
            | Op::Sum(a)
            | Op::Gather(a, _)
            | Op::ScatterAdd(a, _) => vec![*a],
            Op::Concat(parts) => parts.clone(),
            Op::LayerNorm { input, .. } | Op::RowBlock { input, .. } | Op::RowFunction { input, .. } => vec![*input],
            Op::LayerNormAffine { input, scale, shift, .. } => vec![*input, *scale, *shift],
            Op::Affine { x, w, b, .. } => vec![*x, *w, *b],
            Op::AddGathered { base, src, .. } => vec![*base, *src],
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
    /// Whether any differentiable input reaches this node.
    grad: bool,
}

/// Append-only record of operations. Nodes are stored in creation order, so
/// every operand precedes its consumers.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    zero_norms: Cell<usize>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}({:?})", self.id, &*self.value())
    }
}

/// Gradients of a scalar output with respect to every node of a tape.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient with respect to `var`; zero if `var` does not influence the
    /// output.
    pub fn wrt(&self, var: Var<'_>) -> Tensor {
        match &self.grads[var.id] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[var.id];
                Tensor::zeros(r, c)
            }
        }
    }

    /// Moves the gradient out, avoiding a copy.
    pub fn take(&mut self, var: Var<'_>) -> Tensor {
        match self.grads[var.id].take() {
            Some(g) => g,
            None => {
                let (r, c) = self.shapes[var.id];
                Tensor::zeros(r, c)
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of times `norm` was differentiated at the zero vector.
    pub fn zero_norm_warnings(&self) -> usize {
        self.zero_norms.get()
    }

    fn push(&self, op: Op, value: Tensor) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let grad = matches!(op, Op::Leaf) || op.inputs().iter().any(|&i| nodes[i].grad);
        nodes.push(Node { op, value, grad });
        Var { tape: self, id: nodes.len() - 1 }
    }

    /// Differentiable input.
    pub fn var(&self, value: Tensor) -> Var<'_> {
        self.push(Op::Leaf, value)
    }

    /// Non-differentiable input.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(Op::Constant, value)
    }

    /// Horizontal concatenation of tensors with equal row counts.
    pub fn concat_cols<'t>(&'t self, parts: &[Var<'t>]) -> Var<'t> {
        assert!(!parts.is_empty(), "concat of nothing");
        let value = {
            let nodes = self.nodes.borrow();
            let rows = nodes[parts[0].id].value.rows;
            let cols: usize = parts
                .iter()
                .map(|p| {
                    let v = &nodes[p.id].value;
                    assert_eq!(v.rows, rows, "concat_cols row mismatch");
                    v.cols
                })
                .sum();
            let mut data = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for p in parts {
                    data.extend_from_slice(nodes[p.id].value.row(r));
                }
            }
            Tensor::new(rows, cols, data)
        };
        for p in parts {
            self.check(*p);
        }
        self.push(Op::Concat(parts.iter().map(|p| p.id).collect()), value)
    }

    fn check(&self, v: Var<'_>) {
        assert!(std::ptr::eq(self, v.tape), "Var used with a foreign tape");
    }

    /// Reverse pass from a scalar output.
    pub fn backward(&self, output: Var<'_>) -> Result<Gradients, AutodiffError> {
        self.check(output);
        let nodes = self.nodes.borrow();
        let (r, c) = nodes[output.id].value.shape();
        if (r, c) != (1, 1) {
            return Err(AutodiffError::NonScalarOutput(r, c));
        }
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        let needs: Vec<bool> = nodes.iter().map(|n| n.grad).collect();
        if needs[output.id] {
            grads[output.id] = Some(Tensor::scalar(1.0));
        }
        let mut zero_norms = 0usize;

        for id in (0..=output.id).rev() {
            let node = &nodes[id];
            let g = match (&node.op, &grads[id]) {
                (Op::Leaf | Op::Constant | Op::Detach, _) | (_, None) => continue,
                (_, Some(_)) => grads[id].take().unwrap(),
            };
            let val = |i: usize| &nodes[i].value;
            match &node.op {
                Op::Leaf | Op::Constant | Op::Detach => unreachable!(),
                Op::Add(a, b) => {
                    if needs[*a] {
                        accumulate(&mut grads, &needs, *a, reduce_to(&g, val(*a).shape()));
                    }
                    if needs[*b] {
                        accumulate(&mut grads, &needs, *b, reduce_to(&g, val(*b).shape()));
                    }
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, &needs, *a, reduce_to(&g, val(*a).shape()));
                    accumulate(&mut grads, &needs, *b, reduce_to(&g.map(|v| -v), val(*b).shape()));
                }
                Op::Mul(a, b) => {
                    let ga = broadcast_binary(&g, val(*b), |g, b| g * b);
                    let gb = broadcast_binary(&g, val(*a), |g, a| g * a);
                    accumulate(&mut grads, &needs, *a, reduce_to(&ga, val(*a).shape()));
                    accumulate(&mut grads, &needs, *b, reduce_to(&gb, val(*b).shape()));
                }
                Op::Div(a, b) => {
                    let ga = broadcast_binary(&g, val(*b), |g, b| g / b);
                    // d(a/b)/db = -(a/b)/b = -out/b
                    let gb = broadcast_binary(&g, &node.value, |g, o| g * o);
                    let gb = broadcast_binary(&gb, val(*b), |t, b| -t / b);
                    accumulate(&mut grads, &needs, *a, reduce_to(&ga, val(*a).shape()));
                    accumulate(&mut grads, &needs, *b, reduce_to(&gb, val(*b).shape()));
                }
                Op::Neg(a) => accumulate(&mut grads, &needs, *a, g.map(|v| -v)),
                Op::Scale(a, s) => accumulate(&mut grads, &needs, *a, g.map(|v| v * s)),
                Op::Dot(a, b) => {
                    let (va, vb) = (val(*a), val(*b));
                    let mut ga = Tensor::zeros(va.rows, va.cols);
                    let mut gb = Tensor::zeros(vb.rows, vb.cols);
                    for r in 0..va.rows {
                        let gr = g.data[r];
                        for ((x, y), (gx, gy)) in va
                            .row(r)
                            .iter()
                            .zip(vb.row(r))
                            .zip(ga.data[r * va.cols..(r + 1) * va.cols].iter_mut().zip(
                                gb.data[r * vb.cols..(r + 1) * vb.cols].iter_mut(),
                            ))
                        {
                            *gx = gr * y;
                            *gy = gr * x;
                        }
                    }
                    accumulate(&mut grads, &needs, *a, ga);
                    accumulate(&mut grads, &needs, *b, gb);
                }
                Op::Cross(a, b) => {
                    let (va, vb) = (val(*a), val(*b));
                    let mut ga = Tensor::zeros(va.rows, 3);
                    let mut gb = Tensor::zeros(vb.rows, 3);
                    for r in 0..va.rows {
                        let gr = row3(&g, r);
                        // L = g·(a×b) = a·(b×g) = b·(g×a)
                        ga.row_mut(r).copy_from_slice(&cross(row3(vb, r), gr));
                        gb.row_mut(r).copy_from_slice(&cross(gr, row3(va, r)));
                    }
                    accumulate(&mut grads, &needs, *a, ga);
                    accumulate(&mut grads, &needs, *b, gb);
                }
                Op::Norm(a) => {
                    let va = val(*a);
                    let mut ga = Tensor::zeros(va.rows, va.cols);
                    for r in 0..va.rows {
                        let n = node.value.data[r];
                        if n == 0.0 {
                            zero_norms += 1;
                            continue;
                        }
                        let s = g.data[r] / n;
                        for (gx, x) in ga.row_mut(r).iter_mut().zip(va.row(r)) {
                            *gx = s * x;
                        }
                    }
                    accumulate(&mut grads, &needs, *a, ga);
                }
                Op::Acos(a) => {
                    let ga = broadcast_binary(&g, val(*a), |g, x| {
                        let xc = x.clamp(-1.0 + ACOS_CLAMP, 1.0 - ACOS_CLAMP);
                        -g / (1.0 - xc * xc).sqrt()
                    });
                    accumulate(&mut grads, &needs, *a, ga);
                }
                Op::Max0(a) => {
                    let ga = broadcast_binary(&g, val(*a), |g, x| if x > 0.0 { g } else { 0.0 });
                    accumulate(&mut grads, &needs, *a, ga);
                }
                Op::Min0(a) => {
                    let ga = broadcast_binary(&g, val(*a), |g, x| if x < 0.0 { g } else { 0.0 });
                    accumulate(&mut grads, &needs, *a, ga);
                }
                Op::Square(a) => {
                    let ga = broadcast_binary(&g, val(*a), |g, x| 2.0 * g * x);
                    accumulate(&mut grads, &needs, *a, ga);
                }
                Op::Sum(a) => {
                    let (r, c) = val(*a).shape();
                    accumulate(&mut grads, &needs, *a, Tensor::filled(r, c, g.data[0]));
                }
                Op::MatMul(a, b) => {
                    let (va, vb) = (val(*a), val(*b));
                    if needs[*a] {
                        let mut ga = Tensor::zeros(va.rows, va.cols);
                        gemm(&g, false, vb, true, &mut ga);
                        accumulate(&mut grads, &needs, *a, ga);
                    }
                    if needs[*b] {
                        let mut gb = Tensor::zeros(vb.rows, vb.cols);
                        gemm(va, true, &g, false, &mut gb);
                        accumulate(&mut grads, &needs, *b, gb);
                    }
                }
                Op::Affine { x, w, b, relu } => {
                    let mut g = g;
                    if *relu {
                        for (gv, y) in g.data.iter_mut().zip(&node.value.data) {
                            if *y <= 0.0 {
                                *gv = 0.0;
                            }
                        }
                    }
                    let (vx, vw) = (val(*x), val(*w));
                    if needs[*x] {
                        let mut gx = Tensor::zeros(vx.rows, vx.cols);
                        gemm(&g, false, vw, true, &mut gx);
                        accumulate(&mut grads, &needs, *x, gx);
                    }
                    if needs[*w] {
                        let mut gw = Tensor::zeros(vw.rows, vw.cols);
                        gemm(vx, true, &g, false, &mut gw);
                        accumulate(&mut grads, &needs, *w, gw);
                    }
                    if needs[*b] {
                        accumulate(&mut grads, &needs, *b, column_sums(&g));
                    }
                }
                Op::AddGathered { base, src, index } => {
                    if needs[*src] {
                        let vs = val(*src);
                        let mut gs = Tensor::zeros(vs.rows, vs.cols);
                        for (i, &from) in index.iter().enumerate() {
                            for (d, s) in gs.row_mut(from).iter_mut().zip(g.row(i)) {
                                *d += s;
                            }
                        }
                        accumulate(&mut grads, &needs, *src, gs);
                    }
                    accumulate(&mut grads, &needs, *base, g);
                }
                Op::RowBlock { input, start } => {
                    let vi = val(*input);
                    let mut gi = Tensor::zeros(vi.rows, vi.cols);
                    gi.data[start * vi.cols..(start + g.rows) * vi.cols].copy_from_slice(&g.data);
                    accumulate(&mut grads, &needs, *input, gi);
                }
                Op::Gather(a, index) => {
                    if !needs[*a] {
                        continue;
                    }
                    let va = val(*a);
                    let mut ga = Tensor::zeros(va.rows, va.cols);
                    for (i, &src) in index.iter().enumerate() {
                        for (d, s) in ga.row_mut(src).iter_mut().zip(g.row(i)) {
                            *d += s;
                        }
                    }
                    accumulate(&mut grads, &needs, *a, ga);
                }
                Op::ScatterAdd(a, index) => {
                    let va = val(*a);
                    let mut ga = Tensor::zeros(va.rows, va.cols);
                    for (i, &dst) in index.iter().enumerate() {
                        ga.row_mut(i).copy_from_slice(g.row(dst));
                    }
                    accumulate(&mut grads, &needs, *a, ga);
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let vp = val(p);
                        let mut gp = Tensor::zeros(vp.rows, vp.cols);
                        for r in 0..vp.rows {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + vp.cols]);
                        }
                        offset += vp.cols;
                        accumulate(&mut grads, &needs, p, gp);
                    }
                }
                Op::LayerNorm { input, inv_std } => {
                    let y = &node.value;
                    let cols = y.cols as f64;
                    let mut ga = Tensor::zeros(y.rows, y.cols);
                    for r in 0..y.rows {
                        let (gr, yr) = (g.row(r), y.row(r));
                        let mean_g = gr.iter().sum::<f64>() / cols;
                        let mean_gy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / cols;
                        for ((d, gv), yv) in ga.row_mut(r).iter_mut().zip(gr).zip(yr) {
                            *d = inv_std[r] * (gv - mean_g - yv * mean_gy);
                        }
                    }
                    accumulate(&mut grads, &needs, *input, ga);
                }
                Op::LayerNormAffine { input, scale, shift, inv_std, normalized } => {
                    let vs = val(*scale);
                    if needs[*scale] {
                        let mut gs = vec![0.0; normalized.cols];
                        for (gr, nr) in g.data.chunks_exact(g.cols).zip(normalized.data.chunks_exact(g.cols)) {
                            for ((d, gv), nv) in gs.iter_mut().zip(gr).zip(nr) {
                                *d += gv * nv;
                            }
                        }
                        accumulate(&mut grads, &needs, *scale, Tensor::row_vector(gs));
                    }
                    if needs[*shift] {
                        accumulate(&mut grads, &needs, *shift, column_sums(&g));
                    }
                    if needs[*input] {
                        let cols = normalized.cols as f64;
                        let mut ga = Tensor::zeros(normalized.rows, normalized.cols);
                        let mut gn = vec![0.0; normalized.cols];
                        for r in 0..normalized.rows {
                            for ((d, gv), sv) in gn.iter_mut().zip(g.row(r)).zip(&vs.data) {
                                *d = gv * sv;
                            }
                            let yr = normalized.row(r);
                            let mean_g = gn.iter().sum::<f64>() / cols;
                            let mean_gy = gn.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / cols;
                            for ((d, gv), yv) in ga.row_mut(r).iter_mut().zip(&gn).zip(yr) {
                                *d = inv_std[r] * (gv - mean_g - yv * mean_gy);
                            }
                        }
                        accumulate(&mut grads, &needs, *input, ga);
                    }
                }
                Op::RowFunction { input, jacobian } => {
                    let mut ga = jacobian.clone();
                    for r in 0..ga.rows {
                        let gr = g.data[r];
                        ga.row_mut(r).iter_mut().for_each(|v| *v *= gr);
                    }
                    accumulate(&mut grads, &needs, *input, ga);
                }
            }
        }
        if zero_norms > 0 {
            log::warn!("norm differentiated at the zero vector {zero_norms} time(s); gradient set to 0");
            self.zero_norms.set(self.zero_norms.get() + zero_norms);
        }
        let shapes = nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients { grads, shapes })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], needs: &[bool], id: usize, g: Tensor) {
    if !needs[id] {
        return;
    }
    match &mut grads[id] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn row3(t: &Tensor, r: usize) -> [f64; 3] {
    let s = t.row(r);
    [s[0], s[1], s[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn broadcast_dim(a: usize, b: usize) -> usize {
    if a == b || b == 1 {
        a
    } else if a == 1 {
        b
    } else {
        panic!("incompatible broadcast dimensions {a} and {b}")
    }
}

fn broadcast_binary(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    if a.shape() == b.shape() {
        let data = a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::new(a.rows, a.cols, data);
    }
    let rows = broadcast_dim(a.rows, b.rows);
    let cols = broadcast_dim(a.cols, b.cols);
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let ra = if a.rows == 1 { 0 } else { r };
        let rb = if b.rows == 1 { 0 } else { r };
        for c in 0..cols {
            let ca = if a.cols == 1 { 0 } else { c };
            let cb = if b.cols == 1 { 0 } else { c };
            data.push(f(a.data[ra * a.cols + ca], b.data[rb * b.cols + cb]));
        }
    }
    Tensor::new(rows, cols, data)
}

/// `1×c` row of column sums.
fn column_sums(g: &Tensor) -> Tensor {
    let mut out = vec![0.0; g.cols];
    for row in g.data.chunks_exact(g.cols.max(1)) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    Tensor::row_vector(out)
}

/// Sums a broadcast gradient back down to an operand's shape.
fn reduce_to(g: &Tensor, shape: (usize, usize)) -> Tensor {
    if g.shape() == shape {
        return g.clone();
    }
    let mut out = Tensor::zeros(shape.0, shape.1);
    for r in 0..g.rows {
        let ro = if shape.0 == 1 { 0 } else { r };
        for c in 0..g.cols {
            let co = if shape.1 == 1 { 0 } else { c };
            out.data[ro * shape.1 + co] += g.data[r * g.cols + c];
        }
    }
    out
}

/// `out += op(a) · op(b)` where `op` optionally transposes.
fn gemm(a: &Tensor, a_t: bool, b: &Tensor, b_t: bool, out: &mut Tensor) {
    let (m, k) = if a_t { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let (k2, n) = if b_t { (b.cols, b.rows) } else { (b.rows, b.cols) };
    assert_eq!(k, k2, "matmul inner dimension mismatch");
    assert_eq!(out.shape(), (m, n));
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, a.cols as isize) } else { (a.cols as isize, 1) };
    let (rsb, csb) = if b_t { (1, b.cols as isize) } else { (b.cols as isize, 1) };
    // SAFETY: strides and dimensions describe exactly the buffers of `a`, `b`
    // and `out`, whose shapes were checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            1.0,
            out.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Ref<'t, Tensor> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value().shape()
    }

    /// Primal of a `1×1` value.
    pub fn item(&self) -> f64 {
        self.value().item()
    }

    fn binary(self, other: Var<'t>, op: Op, f: impl Fn(f64, f64) -> f64) -> Var<'t> {
        self.tape.check(other);
        let value = broadcast_binary(&self.value(), &other.value(), f);
        self.tape.push(op, value)
    }

    fn unary(self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let value = self.value().map(f);
        self.tape.push(op, value)
    }

    pub fn add(self, other: Var<'t>) -> Var<'t> {
        self.binary(other, Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(self, other: Var<'t>) -> Var<'t> {
        self.binary(other, Op::Sub(self.id, other.id), |a, b| a - b)
    }

    pub fn mul(self, other: Var<'t>) -> Var<'t> {
        self.binary(other, Op::Mul(self.id, other.id), |a, b| a * b)
    }

    pub fn div(self, other: Var<'t>) -> Result<Var<'t>, AutodiffError> {
        if other.value().data.iter().any(|&v| v == 0.0) {
            return Err(AutodiffError::DivisionByZero);
        }
        Ok(self.binary(other, Op::Div(self.id, other.id), |a, b| a / b))
    }

    pub fn neg(self) -> Var<'t> {
        self.unary(Op::Neg(self.id), |v| -v)
    }

    pub fn scale(self, factor: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, factor), |v| v * factor)
    }

    /// Row-wise dot product, `N×c · N×c → N×1`.
    pub fn dot(self, other: Var<'t>) -> Var<'t> {
        self.tape.check(other);
        let value = {
            let (a, b) = (self.value(), other.value());
            assert_eq!(a.shape(), b.shape(), "dot shape mismatch");
            Tensor::column(
                (0..a.rows).map(|r| a.row(r).iter().zip(b.row(r)).map(|(x, y)| x * y).sum()).collect(),
            )
        };
        self.tape.push(Op::Dot(self.id, other.id), value)
    }

    /// Row-wise cross product of `N×3` tensors.
    pub fn cross(self, other: Var<'t>) -> Var<'t> {
        self.tape.check(other);
        let value = {
            let (a, b) = (self.value(), other.value());
            assert_eq!(a.shape(), b.shape(), "cross shape mismatch");
            assert_eq!(a.cols, 3, "cross needs 3 columns");
            let mut out = Tensor::zeros(a.rows, 3);
            for r in 0..a.rows {
                out.row_mut(r).copy_from_slice(&cross(row3(&a, r), row3(&b, r)));
            }
            out
        };
        self.tape.push(Op::Cross(self.id, other.id), value)
    }

    /// Row-wise Euclidean norm, `N×c → N×1`. The gradient at a zero row is
    /// zero and counted in [`Tape::zero_norm_warnings`].
    pub fn norm(self) -> Var<'t> {
        let value = {
            let a = self.value();
            Tensor::column((0..a.rows).map(|r| a.row(r).iter().map(|x| x * x).sum::<f64>().sqrt()).collect())
        };
        self.tape.push(Op::Norm(self.id), value)
    }

    /// Elementwise arc cosine. Arguments within [`ACOS_DOMAIN_SLACK`] of the
    /// domain are clamped to `[-1, 1]`; the derivative is evaluated at the
    /// argument clamped to `[-1 + 1e-9, 1 - 1e-9]`.
    pub fn acos(self) -> Result<Var<'t>, AutodiffError> {
        if let Some(&bad) = self.value().data.iter().find(|v| !(v.abs() <= 1.0 + ACOS_DOMAIN_SLACK)) {
            return Err(AutodiffError::AcosDomain(bad));
        }
        Ok(self.unary(Op::Acos(self.id), |v| v.clamp(-1.0, 1.0).acos()))
    }

    /// `max(x, 0)`, derivative 0 at 0.
    pub fn max0(self) -> Var<'t> {
        self.unary(Op::Max0(self.id), |v| v.max(0.0))
    }

    /// `min(x, 0)`, derivative 0 at 0.
    pub fn min0(self) -> Var<'t> {
        self.unary(Op::Min0(self.id), |v| v.min(0.0))
    }

    pub fn square(self) -> Var<'t> {
        self.unary(Op::Square(self.id), |v| v * v)
    }

    /// Sum of all entries, `→ 1×1`.
    pub fn sum(self) -> Var<'t> {
        let value = Tensor::scalar(self.value().data.iter().sum());
        self.tape.push(Op::Sum(self.id), value)
    }

    pub fn matmul(self, other: Var<'t>) -> Var<'t> {
        self.tape.check(other);
        let value = {
            let (a, b) = (self.value(), other.value());
            let mut out = Tensor::zeros(a.rows, b.cols);
            gemm(&a, false, &b, false, &mut out);
            out
        };
        self.tape.push(Op::MatMul(self.id, other.id), value)
    }

    /// Selects rows: `out[i] = self[index[i]]`.
    pub fn gather_rows(self, index: &[usize]) -> Var<'t> {
        let value = {
            let a = self.value();
            let mut data = Vec::with_capacity(index.len() * a.cols);
            for &i in index {
                data.extend_from_slice(a.row(i));
            }
            Tensor::new(index.len(), a.cols, data)
        };
        self.tape.push(Op::Gather(self.id, index.to_vec()), value)
    }

    /// Sums rows into `rows` buckets: `out[index[i]] += self[i]`, accumulated
    /// in increasing `i`.
    pub fn scatter_add_rows(self, index: &[usize], rows: usize) -> Var<'t> {
        let value = {
            let a = self.value();
            assert_eq!(a.rows, index.len(), "scatter index length mismatch");
            let mut out = Tensor::zeros(rows, a.cols);
            for (i, &dst) in index.iter().enumerate() {
                for (d, s) in out.row_mut(dst).iter_mut().zip(a.row(i)) {
                    *d += s;
                }
            }
            out
        };
        self.tape.push(Op::ScatterAdd(self.id, index.to_vec()), value)
    }

    /// Row-wise normalization to zero mean and unit variance.
    pub fn layer_norm(self, eps: f64) -> Var<'t> {
        let (value, inv_std) = {
            let a = self.value();
            let cols = a.cols as f64;
            let mut out = Tensor::zeros(a.rows, a.cols);
            let mut inv_std = Vec::with_capacity(a.rows);
            for r in 0..a.rows {
                let row = a.row(r);
                let mean = row.iter().sum::<f64>() / cols;
                let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / cols;
                let inv = 1.0 / (var + eps).sqrt();
                for (o, x) in out.row_mut(r).iter_mut().zip(row) {
                    *o = (x - mean) * inv;
                }
                inv_std.push(inv);
            }
            (out, inv_std)
        };
        self.tape.push(Op::LayerNorm { input: self.id, inv_std }, value)
    }

    /// `normalize(self) * scale + shift` with `1×c` scale and shift, fused.
    pub fn layer_norm_affine(self, scale: Var<'t>, shift: Var<'t>, eps: f64) -> Var<'t> {
        self.tape.check(scale);
        self.tape.check(shift);
        let (value, normalized, inv_std) = {
            let a = self.value();
            let (s, t) = (scale.value(), shift.value());
            assert_eq!(s.shape(), (1, a.cols), "layer_norm_affine scale shape");
            assert_eq!(t.shape(), (1, a.cols), "layer_norm_affine shift shape");
            let cols = a.cols as f64;
            let mut normalized = Tensor::zeros(a.rows, a.cols);
            let mut out = Tensor::zeros(a.rows, a.cols);
            let mut inv_std = Vec::with_capacity(a.rows);
            for r in 0..a.rows {
                let row = a.row(r);
                let mean = row.iter().sum::<f64>() / cols;
                let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / cols;
                let inv = 1.0 / (var + eps).sqrt();
                let n = normalized.row_mut(r);
                for (o, x) in n.iter_mut().zip(row) {
                    *o = (x - mean) * inv;
                }
                for (((o, nv), sv), tv) in out.row_mut(r).iter_mut().zip(normalized.row(r)).zip(&s.data).zip(&t.data) {
                    *o = nv * sv + tv;
                }
                inv_std.push(inv);
            }
            (out, normalized, inv_std)
        };
        self.tape.push(
            Op::LayerNormAffine { input: self.id, scale: scale.id, shift: shift.id, inv_std, normalized },
            value,
        )
    }

    /// `self·w + bias` with a `1×c` bias, optionally through `max(·, 0)`.
    pub fn affine(self, w: Var<'t>, bias: Var<'t>, relu: bool) -> Var<'t> {
        self.tape.check(w);
        self.tape.check(bias);
        let value = {
            let (a, wv, bv) = (self.value(), w.value(), bias.value());
            assert_eq!(bv.shape(), (1, wv.cols), "affine bias shape");
            let mut out = Tensor::zeros(a.rows, wv.cols);
            for row in out.data.chunks_exact_mut(wv.cols.max(1)) {
                row.copy_from_slice(&bv.data);
            }
            gemm(&a, false, &wv, false, &mut out);
            if relu {
                out.data.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            out
        };
        self.tape.push(Op::Affine { x: self.id, w: w.id, b: bias.id, relu }, value)
    }

    /// `self + src[index]` row by row, without materializing the gather.
    pub fn add_gathered(self, src: Var<'t>, index: &[usize]) -> Var<'t> {
        self.tape.check(src);
        let value = {
            let (a, s) = (self.value(), src.value());
            assert_eq!(a.rows, index.len(), "add_gathered index length mismatch");
            assert_eq!(a.cols, s.cols, "add_gathered width mismatch");
            let mut out = a.clone();
            for (i, &from) in index.iter().enumerate() {
                for (o, v) in out.row_mut(i).iter_mut().zip(s.row(from)) {
                    *o += v;
                }
            }
            out
        };
        self.tape.push(Op::AddGathered { base: self.id, src: src.id, index: index.to_vec() }, value)
    }

    /// Rows `start..start + len`.
    pub fn row_block(self, start: usize, len: usize) -> Var<'t> {
        let value = {
            let a = self.value();
            assert!(start + len <= a.rows, "row_block out of range");
            Tensor::new(len, a.cols, a.data[start * a.cols..(start + len) * a.cols].to_vec())
        };
        self.tape.push(Op::RowBlock { input: self.id, start }, value)
    }

    /// Applies an externally evaluated per-row scalar function. `values` is
    /// `N×1` and `jacobian` holds the gradient of each row's value with
    /// respect to that row of `self`.
    pub fn row_function(self, values: Tensor, jacobian: Tensor) -> Var<'t> {
        {
            let a = self.value();
            assert_eq!(values.shape(), (a.rows, 1), "row_function value shape");
            assert_eq!(jacobian.shape(), a.shape(), "row_function jacobian shape");
        }
        self.tape.push(Op::RowFunction { input: self.id, jacobian }, values)
    }

    /// Same primal, no gradient flow.
    pub fn detach(self) -> Var<'t> {
        let value = self.value().clone();
        self.tape.push(Op::Detach, value)
    }
}

impl<'t> ops::Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        Var::add(self, rhs)
    }
}

impl<'t> ops::Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        Var::sub(self, rhs)
    }
}

impl<'t> ops::Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        Var::mul(self, rhs)
    }
}

impl<'t> ops::Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        Var::neg(self)
    }
}
