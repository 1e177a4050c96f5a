use std::cell::{Cell, Ref, RefCell};
use std::ops::Range;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::{matmul_nt, matmul_raw, matmul_tn, Tensor};
use super::NdError;
use crate::seeds::mix_seed;

/// Probability clamp used by [`Var::bce`].
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Sparse row-combination map: output row `i` is `Σ w · x[j]` over `rows[i]`.
///
/// Covers row gathers, neighborhood sums over an adjacency list, and
/// span/mention averaging.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRows {
    pub n_src: usize,
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl SparseRows {
    pub fn gather(n_src: usize, indices: &[usize]) -> Self {
        Self {
            n_src,
            rows: indices.iter().map(|&j| vec![(j, 1.0)]).collect(),
        }
    }

    pub fn validate(&self) -> Result<(), NdError> {
        for row in &self.rows {
            for &(j, _) in row {
                if j >= self.n_src {
                    return Err(NdError::Shape(format!(
                        "sparse row index {j} out of range for {} source rows",
                        self.n_src
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddRow(usize, usize),
    MulCol(usize, usize),
    Relu(usize),
    Sigmoid(usize),
    Tanh(usize),
    Softmax(usize, usize),
    SegmentSoftmax(usize, Rc<Vec<Range<usize>>>),
    Concat(Vec<usize>, usize),
    SliceCols(usize, usize),
    SparseMix(usize, Rc<SparseRows>),
    Dropout(usize, Rc<Vec<f64>>),
    Bilinear(usize, usize, usize),
    Bce(usize, Rc<Vec<f64>>),
    BceLogits(usize, Rc<Vec<f64>>),
    Sum(usize),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A single-use differentiation tape.
///
/// Nodes are appended in evaluation order, so node ids are already a
/// topological order and backward is a reverse sweep.
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    mode: Mode,
    stream_seed: u64,
    dropout_counter: Cell<u64>,
}

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `var`; zero when the loss does not depend on it.
    pub fn get(&self, var: Var<'_>) -> Tensor {
        match &self.grads[var.id] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[var.id]),
        }
    }

    pub fn take(&mut self, var: Var<'_>) -> Tensor {
        match self.grads[var.id].take() {
            Some(g) => g,
            None => Tensor::zeros(&self.shapes[var.id]),
        }
    }
}

fn check_2d(t: &Tensor, what: &str) -> Result<(usize, usize), NdError> {
    if t.shape().len() != 2 {
        return Err(NdError::Shape(format!(
            "{what}: expected a matrix, got shape {:?}",
            t.shape()
        )));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

impl Graph {
    pub fn new(mode: Mode, stream_seed: u64) -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            mode,
            stream_seed,
            dropout_counter: Cell::new(0),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    fn requires(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    /// Leaf that receives a gradient.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn zeros(&self, shape: &[usize]) -> Var<'_> {
        self.constant(Tensor::zeros(shape))
    }

    /// Concatenates matrices along `axis` (0 stacks rows, 1 joins columns).
    pub fn concat<'g>(&'g self, parts: &[Var<'g>], axis: usize) -> Result<Var<'g>, NdError> {
        if parts.is_empty() {
            return Err(NdError::Shape("concat of zero inputs".into()));
        }
        if axis > 1 {
            return Err(NdError::Shape(format!("concat axis {axis} not supported")));
        }
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        let out = {
            let nodes = self.nodes.borrow();
            let mut dims = Vec::with_capacity(parts.len());
            for p in parts {
                dims.push(check_2d(&nodes[p.id].value, "concat")?);
            }
            let (r0, c0) = dims[0];
            if axis == 0 {
                if dims.iter().any(|&(_, c)| c != c0) {
                    return Err(NdError::Shape(format!(
                        "concat rows: column mismatch {dims:?}"
                    )));
                }
                let rows: usize = dims.iter().map(|d| d.0).sum();
                let mut data = Vec::with_capacity(rows * c0);
                for p in parts {
                    data.extend_from_slice(nodes[p.id].value.data());
                }
                Tensor::matrix(rows, c0, data)?
            } else {
                if dims.iter().any(|&(r, _)| r != r0) {
                    return Err(NdError::Shape(format!(
                        "concat cols: row mismatch {dims:?}"
                    )));
                }
                let cols: usize = dims.iter().map(|d| d.1).sum();
                let mut data = Vec::with_capacity(r0 * cols);
                for i in 0..r0 {
                    for p in parts {
                        data.extend_from_slice(nodes[p.id].value.row(i));
                    }
                }
                Tensor::matrix(r0, cols, data)?
            }
        };
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let rg = self.requires(&ids);
        Ok(self.push(out, Op::Concat(ids, axis), rg))
    }

    /// Softmax within each contiguous segment of a flat score vector.
    pub fn segment_softmax<'g>(
        &'g self,
        scores: Var<'g>,
        segments: Rc<Vec<Range<usize>>>,
    ) -> Result<Var<'g>, NdError> {
        let out = {
            let v = scores.value();
            let n = v.numel();
            let mut data = vec![0.0; n];
            let mut covered = 0;
            for seg in segments.iter() {
                if seg.end > n || seg.is_empty() {
                    return Err(NdError::Shape(format!(
                        "bad softmax segment {seg:?} over {n} scores"
                    )));
                }
                covered += seg.len();
                softmax_slice(&v.data()[seg.clone()], &mut data[seg.clone()]);
            }
            if covered != n {
                return Err(NdError::Shape(
                    "softmax segments do not cover all scores".into(),
                ));
            }
            Tensor::new(v.shape().to_vec(), data)?
        };
        let rg = self.requires(&[scores.id]);
        Ok(self.push(out, Op::SegmentSoftmax(scores.id, segments), rg))
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients, NdError> {
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.numel() != 1 {
            return Err(NdError::NonScalarLoss(
                nodes[loss.id].value.shape().to_vec(),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[loss.id] = Some(Tensor::filled(nodes[loss.id].value.shape(), 1.0));
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if node.requires_grad {
                backprop_node(&nodes, node, &g, &mut grads);
            }
            grads[id] = Some(g);
        }
        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn next_stream(&self) -> ChaCha8Rng {
        let c = self.dropout_counter.get();
        self.dropout_counter.set(c + 1);
        ChaCha8Rng::seed_from_u64(mix_seed(&[self.stream_seed, c]))
    }
}

fn softmax_slice(x: &[f64], out: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, v) in out.iter_mut().zip(x) {
        *o = (v - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

fn accumulate(grads: &mut [Option<Tensor>], nodes: &[Node], id: usize, contribution: Tensor) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(g) => g.add_assign(&contribution),
        slot @ None => *slot = Some(contribution),
    }
}

fn with_data(shape: &[usize], data: Vec<f64>) -> Tensor {
    Tensor::new(shape.to_vec(), data).expect("gradient shape mirrors value shape")
}

fn backprop_node(nodes: &[Node], node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let y = &node.value;
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            let (m, k) = (av.shape()[0], av.shape()[1]);
            let n = bv.shape()[1];
            if nodes[*a].requires_grad {
                let da = matmul_nt(g.data(), bv.data(), m, n, k);
                accumulate(grads, nodes, *a, with_data(av.shape(), da));
            }
            if nodes[*b].requires_grad {
                let db = matmul_tn(av.data(), g.data(), m, k, n);
                accumulate(grads, nodes, *b, with_data(bv.shape(), db));
            }
        }
        Op::Transpose(a) => {
            accumulate(grads, nodes, *a, transpose(g));
        }
        Op::Add(a, b) => {
            accumulate(grads, nodes, *a, g.clone());
            accumulate(grads, nodes, *b, g.clone());
        }
        Op::Sub(a, b) => {
            accumulate(grads, nodes, *a, g.clone());
            let mut neg = g.clone();
            neg.scale_assign(-1.0);
            accumulate(grads, nodes, *b, neg);
        }
        Op::Mul(a, b) => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            if nodes[*a].requires_grad {
                let d = g.data().iter().zip(bv.data()).map(|(g, b)| g * b).collect();
                accumulate(grads, nodes, *a, with_data(av.shape(), d));
            }
            if nodes[*b].requires_grad {
                let d = g.data().iter().zip(av.data()).map(|(g, a)| g * a).collect();
                accumulate(grads, nodes, *b, with_data(bv.shape(), d));
            }
        }
        Op::Scale(a, f) => {
            let mut d = g.clone();
            d.scale_assign(*f);
            accumulate(grads, nodes, *a, d);
        }
        Op::AddRow(a, b) => {
            accumulate(grads, nodes, *a, g.clone());
            if nodes[*b].requires_grad {
                let cols = g.cols();
                let mut db = vec![0.0; cols];
                for r in 0..g.rows() {
                    for (d, v) in db.iter_mut().zip(g.row(r)) {
                        *d += v;
                    }
                }
                accumulate(grads, nodes, *b, with_data(nodes[*b].value.shape(), db));
            }
        }
        Op::MulCol(a, w) => {
            let (av, wv) = (&nodes[*a].value, &nodes[*w].value);
            let cols = av.cols();
            if nodes[*a].requires_grad {
                let mut d = g.data().to_vec();
                for r in 0..av.rows() {
                    let f = wv.data()[r];
                    for x in &mut d[r * cols..(r + 1) * cols] {
                        *x *= f;
                    }
                }
                accumulate(grads, nodes, *a, with_data(av.shape(), d));
            }
            if nodes[*w].requires_grad {
                let d = (0..av.rows())
                    .map(|r| g.row(r).iter().zip(av.row(r)).map(|(x, y)| x * y).sum())
                    .collect();
                accumulate(grads, nodes, *w, with_data(wv.shape(), d));
            }
        }
        Op::Relu(a) => {
            let d = g
                .data()
                .iter()
                .zip(y.data())
                .map(|(g, y)| if *y > 0.0 { *g } else { 0.0 })
                .collect();
            accumulate(grads, nodes, *a, with_data(y.shape(), d));
        }
        Op::Sigmoid(a) => {
            let d = g
                .data()
                .iter()
                .zip(y.data())
                .map(|(g, y)| g * y * (1.0 - y))
                .collect();
            accumulate(grads, nodes, *a, with_data(y.shape(), d));
        }
        Op::Tanh(a) => {
            let d = g
                .data()
                .iter()
                .zip(y.data())
                .map(|(g, y)| g * (1.0 - y * y))
                .collect();
            accumulate(grads, nodes, *a, with_data(y.shape(), d));
        }
        Op::Softmax(a, axis) => {
            let (r, c) = (y.rows(), y.cols());
            let mut d = vec![0.0; r * c];
            if *axis == 1 {
                for i in 0..r {
                    let dot: f64 = (0..c).map(|j| g.get2(i, j) * y.get2(i, j)).sum();
                    for j in 0..c {
                        d[i * c + j] = y.get2(i, j) * (g.get2(i, j) - dot);
                    }
                }
            } else {
                for j in 0..c {
                    let dot: f64 = (0..r).map(|i| g.get2(i, j) * y.get2(i, j)).sum();
                    for i in 0..r {
                        d[i * c + j] = y.get2(i, j) * (g.get2(i, j) - dot);
                    }
                }
            }
            accumulate(grads, nodes, *a, with_data(y.shape(), d));
        }
        Op::SegmentSoftmax(a, segments) => {
            let mut d = vec![0.0; y.numel()];
            for seg in segments.iter() {
                let ys = &y.data()[seg.clone()];
                let gs = &g.data()[seg.clone()];
                let dot: f64 = ys.iter().zip(gs).map(|(y, g)| y * g).sum();
                for (k, (yv, gv)) in ys.iter().zip(gs).enumerate() {
                    d[seg.start + k] = yv * (gv - dot);
                }
            }
            accumulate(grads, nodes, *a, with_data(y.shape(), d));
        }
        Op::Concat(ids, axis) => {
            if *axis == 0 {
                let mut offset = 0;
                for &id in ids {
                    let shape = nodes[id].value.shape();
                    let n = nodes[id].value.numel();
                    if nodes[id].requires_grad {
                        let d = g.data()[offset..offset + n].to_vec();
                        accumulate(grads, nodes, id, with_data(shape, d));
                    }
                    offset += n;
                }
            } else {
                let rows = y.rows();
                let mut col = 0;
                for &id in ids {
                    let c = nodes[id].value.cols();
                    if nodes[id].requires_grad {
                        let mut d = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            d.extend_from_slice(&g.row(r)[col..col + c]);
                        }
                        accumulate(grads, nodes, id, with_data(nodes[id].value.shape(), d));
                    }
                    col += c;
                }
            }
        }
        Op::SliceCols(a, start) => {
            let av = &nodes[*a].value;
            let (rows, cols) = (av.rows(), av.cols());
            let width = y.cols();
            let mut d = vec![0.0; rows * cols];
            for r in 0..rows {
                d[r * cols + start..r * cols + start + width].copy_from_slice(g.row(r));
            }
            accumulate(grads, nodes, *a, with_data(av.shape(), d));
        }
        Op::SparseMix(a, map) => {
            let av = &nodes[*a].value;
            let cols = av.cols();
            let mut d = vec![0.0; av.numel()];
            for (i, row) in map.rows.iter().enumerate() {
                let gi = g.row(i);
                for &(j, w) in row {
                    for (dst, gv) in d[j * cols..(j + 1) * cols].iter_mut().zip(gi) {
                        *dst += w * gv;
                    }
                }
            }
            accumulate(grads, nodes, *a, with_data(av.shape(), d));
        }
        Op::Dropout(a, mask) => {
            let d = g
                .data()
                .iter()
                .zip(mask.iter())
                .map(|(g, m)| g * m)
                .collect();
            accumulate(grads, nodes, *a, with_data(y.shape(), d));
        }
        Op::Bilinear(u, w, v) => {
            let (uv, wv, vv) = (&nodes[*u].value, &nodes[*w].value, &nodes[*v].value);
            let (p_n, a_n) = (uv.shape()[0], uv.shape()[1]);
            let (r_n, b_n) = (wv.shape()[1], wv.shape()[2]);
            let (w_d, u_d, v_d) = (wv.data(), uv.data(), vv.data());
            let mut du = vec![0.0; uv.numel()];
            let mut dw = vec![0.0; wv.numel()];
            let mut dv = vec![0.0; vv.numel()];
            for p in 0..p_n {
                let vrow = &v_d[p * b_n..(p + 1) * b_n];
                for a in 0..a_n {
                    let ua = u_d[p * a_n + a];
                    for r in 0..r_n {
                        let gr = g.data()[p * r_n + r];
                        if gr == 0.0 {
                            continue;
                        }
                        let base = (a * r_n + r) * b_n;
                        let wrow = &w_d[base..base + b_n];
                        let mut acc = 0.0;
                        for b in 0..b_n {
                            acc += wrow[b] * vrow[b];
                            dv[p * b_n + b] += gr * ua * wrow[b];
                            dw[base + b] += gr * ua * vrow[b];
                        }
                        du[p * a_n + a] += gr * acc;
                    }
                }
            }
            accumulate(grads, nodes, *u, with_data(uv.shape(), du));
            accumulate(grads, nodes, *w, with_data(wv.shape(), dw));
            accumulate(grads, nodes, *v, with_data(vv.shape(), dv));
        }
        Op::Bce(p, labels) => {
            let pv = &nodes[*p].value;
            let gs = g.data()[0];
            let d = pv
                .data()
                .iter()
                .zip(labels.iter())
                .map(|(&p, &y)| {
                    if !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p) {
                        0.0
                    } else {
                        gs * (-y / p + (1.0 - y) / (1.0 - p))
                    }
                })
                .collect();
            accumulate(grads, nodes, *p, with_data(pv.shape(), d));
        }
        Op::BceLogits(x, labels) => {
            let xv = &nodes[*x].value;
            let gs = g.data()[0];
            let d = xv
                .data()
                .iter()
                .zip(labels.iter())
                .map(|(&x, &y)| gs * (sigmoid(x) - y))
                .collect();
            accumulate(grads, nodes, *x, with_data(xv.shape(), d));
        }
        Op::Sum(a) => {
            let gs = g.data()[0];
            accumulate(
                grads,
                nodes,
                *a,
                Tensor::filled(nodes[*a].value.shape(), gs),
            );
        }
    }
}

fn transpose(t: &Tensor) -> Tensor {
    let (r, c) = (t.rows(), t.cols());
    let mut d = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            d[j * r + i] = t.get2(i, j);
        }
    }
    Tensor::matrix(c, r, d).expect("transpose shape")
}

impl<'g> Var<'g> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn value(&self) -> Ref<'g, Tensor> {
        Ref::map(self.graph.nodes.borrow(), |n| &n[self.id].value)
    }

    /// Owned copy of the value.
    pub fn tensor(&self) -> Tensor {
        self.value().clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    fn unary(self, value: Tensor, op: Op) -> Var<'g> {
        let rg = self.graph.requires(&[self.id]);
        self.graph.push(value, op, rg)
    }

    fn binary(self, other: Var<'g>, value: Tensor, op: Op) -> Var<'g> {
        let rg = self.graph.requires(&[self.id, other.id]);
        self.graph.push(value, op, rg)
    }

    pub fn matmul(self, other: Var<'g>) -> Result<Var<'g>, NdError> {
        let out = {
            let (a, b) = (self.value(), other.value());
            let (m, k) = check_2d(&a, "matmul lhs")?;
            let (k2, n) = check_2d(&b, "matmul rhs")?;
            if k != k2 {
                return Err(NdError::Shape(format!(
                    "matmul inner dimensions differ: {:?} x {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
            Tensor::matrix(m, n, matmul_raw(a.data(), b.data(), m, k, n))?
        };
        Ok(self.binary(other, out, Op::MatMul(self.id, other.id)))
    }

    pub fn transpose(self) -> Result<Var<'g>, NdError> {
        let out = {
            let a = self.value();
            check_2d(&a, "transpose")?;
            transpose(&a)
        };
        Ok(self.unary(out, Op::Transpose(self.id)))
    }

    fn same_shape(&self, other: &Var<'g>, what: &str) -> Result<(), NdError> {
        let (a, b) = (self.shape(), other.shape());
        if a != b {
            return Err(NdError::Shape(format!(
                "{what}: shapes differ {a:?} vs {b:?}"
            )));
        }
        Ok(())
    }

    fn zip_with(
        self,
        other: Var<'g>,
        what: &str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor, NdError> {
        self.same_shape(&other, what)?;
        let (a, b) = (self.value(), other.value());
        let d = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        Tensor::new(a.shape().to_vec(), d)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn add(self, other: Var<'g>) -> Result<Var<'g>, NdError> {
        let out = self.zip_with(other, "add", |a, b| a + b)?;
        Ok(self.binary(other, out, Op::Add(self.id, other.id)))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn sub(self, other: Var<'g>) -> Result<Var<'g>, NdError> {
        let out = self.zip_with(other, "sub", |a, b| a - b)?;
        Ok(self.binary(other, out, Op::Sub(self.id, other.id)))
    }

    /// Elementwise product.
    #[allow(clippy::should_implement_trait)]
    pub fn mul(self, other: Var<'g>) -> Result<Var<'g>, NdError> {
        let out = self.zip_with(other, "mul", |a, b| a * b)?;
        Ok(self.binary(other, out, Op::Mul(self.id, other.id)))
    }

    pub fn scale(self, f: f64) -> Var<'g> {
        let mut out = self.value().clone();
        out.scale_assign(f);
        self.unary(out, Op::Scale(self.id, f))
    }

    /// Adds a bias vector to every row.
    pub fn add_row(self, bias: Var<'g>) -> Result<Var<'g>, NdError> {
        let out = {
            let (a, b) = (self.value(), bias.value());
            let cols = a.cols();
            if b.numel() != cols {
                return Err(NdError::Shape(format!(
                    "add_row: bias {:?} does not match {:?}",
                    b.shape(),
                    a.shape()
                )));
            }
            let mut d = a.data().to_vec();
            for row in d.chunks_mut(cols.max(1)) {
                for (x, bv) in row.iter_mut().zip(b.data()) {
                    *x += bv;
                }
            }
            Tensor::new(a.shape().to_vec(), d)?
        };
        Ok(self.binary(bias, out, Op::AddRow(self.id, bias.id)))
    }

    /// Scales row `i` by `weights[i]`; `weights` is `[rows × 1]`.
    pub fn mul_col(self, weights: Var<'g>) -> Result<Var<'g>, NdError> {
        let out = {
            let (a, w) = (self.value(), weights.value());
            if w.numel() != a.rows() {
                return Err(NdError::Shape(format!(
                    "mul_col: weights {:?} do not match {:?}",
                    w.shape(),
                    a.shape()
                )));
            }
            let cols = a.cols();
            let mut d = a.data().to_vec();
            for (r, row) in d.chunks_mut(cols.max(1)).enumerate() {
                for x in row {
                    *x *= w.data()[r];
                }
            }
            Tensor::new(a.shape().to_vec(), d)?
        };
        Ok(self.binary(weights, out, Op::MulCol(self.id, weights.id)))
    }

    fn map(self, f: impl Fn(f64) -> f64) -> Tensor {
        let a = self.value();
        let d = a.data().iter().map(|x| f(*x)).collect();
        Tensor::new(a.shape().to_vec(), d).expect("elementwise shape")
    }

    pub fn relu(self) -> Var<'g> {
        let out = self.map(|x| x.max(0.0));
        self.unary(out, Op::Relu(self.id))
    }

    pub fn sigmoid(self) -> Var<'g> {
        let out = self.map(sigmoid);
        self.unary(out, Op::Sigmoid(self.id))
    }

    pub fn tanh(self) -> Var<'g> {
        let out = self.map(f64::tanh);
        self.unary(out, Op::Tanh(self.id))
    }

    /// Softmax along `axis` of a matrix (1 normalizes each row).
    pub fn softmax(self, axis: usize) -> Result<Var<'g>, NdError> {
        let out = {
            let a = self.value();
            let (r, c) = check_2d(&a, "softmax")?;
            let mut d = vec![0.0; r * c];
            match axis {
                1 => {
                    for i in 0..r {
                        softmax_slice(a.row(i), &mut d[i * c..(i + 1) * c]);
                    }
                }
                0 => {
                    let mut col = vec![0.0; r];
                    let mut tmp = vec![0.0; r];
                    for j in 0..c {
                        for (i, x) in col.iter_mut().enumerate() {
                            *x = a.get2(i, j);
                        }
                        softmax_slice(&col, &mut tmp);
                        for i in 0..r {
                            d[i * c + j] = tmp[i];
                        }
                    }
                }
                _ => return Err(NdError::Shape(format!("softmax axis {axis} not supported"))),
            }
            Tensor::matrix(r, c, d)?
        };
        Ok(self.unary(out, Op::Softmax(self.id, axis)))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(self, start: usize, end: usize) -> Result<Var<'g>, NdError> {
        let out = {
            let a = self.value();
            let (r, c) = check_2d(&a, "slice_cols")?;
            if start >= end || end > c {
                return Err(NdError::Shape(format!(
                    "slice_cols {start}..{end} out of range for {c} columns"
                )));
            }
            let mut d = Vec::with_capacity(r * (end - start));
            for i in 0..r {
                d.extend_from_slice(&a.row(i)[start..end]);
            }
            Tensor::matrix(r, end - start, d)?
        };
        Ok(self.unary(out, Op::SliceCols(self.id, start)))
    }

    pub fn sparse_mix(self, map: Rc<SparseRows>) -> Result<Var<'g>, NdError> {
        let out = {
            let a = self.value();
            let (r, c) = check_2d(&a, "sparse_mix")?;
            if map.n_src != r {
                return Err(NdError::Shape(format!(
                    "sparse_mix expects {} source rows, got {r}",
                    map.n_src
                )));
            }
            map.validate()?;
            let mut d = vec![0.0; map.rows.len() * c];
            for (i, row) in map.rows.iter().enumerate() {
                let dst = &mut d[i * c..(i + 1) * c];
                for &(j, w) in row {
                    for (o, x) in dst.iter_mut().zip(a.row(j)) {
                        *o += w * x;
                    }
                }
            }
            Tensor::matrix(map.rows.len(), c, d)?
        };
        Ok(self.unary(out, Op::SparseMix(self.id, map)))
    }

    pub fn gather_rows(self, indices: &[usize]) -> Result<Var<'g>, NdError> {
        let n = self.value().rows();
        self.sparse_mix(Rc::new(SparseRows::gather(n, indices)))
    }

    /// Inverted dropout. Identity in eval mode or at rate 0.
    pub fn dropout(self, rate: f64) -> Result<Var<'g>, NdError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(NdError::Config(format!(
                "dropout rate {rate} outside [0, 1)"
            )));
        }
        if self.graph.mode == Mode::Eval || rate == 0.0 {
            return Ok(self);
        }
        let mut rng = self.graph.next_stream();
        let keep = 1.0 / (1.0 - rate);
        let n = self.value().numel();
        let mask: Vec<f64> = (0..n)
            .map(|_| {
                if rng.random::<f64>() < rate {
                    0.0
                } else {
                    keep
                }
            })
            .collect();
        let out = {
            let a = self.value();
            let d = a.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
            Tensor::new(a.shape().to_vec(), d)?
        };
        Ok(self.unary(out, Op::Dropout(self.id, Rc::new(mask))))
    }

    /// `out[p, r] = Σ_ab self[p, a] · weight[a, r, b] · other[p, b]`.
    pub fn bilinear(self, weight: Var<'g>, other: Var<'g>) -> Result<Var<'g>, NdError> {
        let out = {
            let (u, w, v) = (self.value(), weight.value(), other.value());
            let (p_n, a_n) = check_2d(&u, "bilinear lhs")?;
            let (p2, b_n) = check_2d(&v, "bilinear rhs")?;
            if w.shape().len() != 3 || w.shape()[0] != a_n || w.shape()[2] != b_n || p_n != p2 {
                return Err(NdError::Shape(format!(
                    "bilinear shapes {:?} x {:?} x {:?}",
                    u.shape(),
                    w.shape(),
                    v.shape()
                )));
            }
            let r_n = w.shape()[1];
            // u · W viewed as [a × (r·b)]
            let uw = matmul_raw(u.data(), w.data(), p_n, a_n, r_n * b_n);
            let mut d = vec![0.0; p_n * r_n];
            for p in 0..p_n {
                let vrow = v.row(p);
                for r in 0..r_n {
                    let seg = &uw[(p * r_n + r) * b_n..(p * r_n + r + 1) * b_n];
                    d[p * r_n + r] = seg.iter().zip(vrow).map(|(x, y)| x * y).sum();
                }
            }
            Tensor::matrix(p_n, r_n, d)?
        };
        let rg = self.graph.requires(&[self.id, weight.id, other.id]);
        Ok(self
            .graph
            .push(out, Op::Bilinear(self.id, weight.id, other.id), rg))
    }

    /// Binary cross entropy summed over all entries; probabilities are
    /// clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]`.
    pub fn bce(self, labels: &[f64]) -> Result<Var<'g>, NdError> {
        let out = {
            let p = self.value();
            if p.numel() != labels.len() {
                return Err(NdError::Shape(format!(
                    "bce: {} probabilities vs {} labels",
                    p.numel(),
                    labels.len()
                )));
            }
            let loss: f64 = p
                .data()
                .iter()
                .zip(labels)
                .map(|(&p, &y)| {
                    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
                })
                .sum();
            Tensor::scalar(loss)
        };
        Ok(self.unary(out, Op::Bce(self.id, Rc::new(labels.to_vec()))))
    }

    /// Binary cross entropy of `sigmoid(self)`, summed, computed from the
    /// logits as `softplus(x) - y·x` so saturated logits keep full precision.
    pub fn bce_logits(self, labels: &[f64]) -> Result<Var<'g>, NdError> {
        let out = {
            let x = self.value();
            if x.numel() != labels.len() {
                return Err(NdError::Shape(format!(
                    "bce_logits: {} logits vs {} labels",
                    x.numel(),
                    labels.len()
                )));
            }
            let loss: f64 = x
                .data()
                .iter()
                .zip(labels)
                .map(|(&x, &y)| x.max(0.0) + (-x.abs()).exp().ln_1p() - y * x)
                .sum();
            Tensor::scalar(loss)
        };
        Ok(self.unary(out, Op::BceLogits(self.id, Rc::new(labels.to_vec()))))
    }

    pub fn sum(self) -> Var<'g> {
        let out = Tensor::scalar(self.value().sum());
        self.unary(out, Op::Sum(self.id))
    }

    /// `self · weightᵀ + bias`, with `weight` stored as `[out × in]`.
    pub fn linear(self, weight: Var<'g>, bias: Var<'g>) -> Result<Var<'g>, NdError> {
        self.matmul(weight.transpose()?)?.add_row(bias)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
