use super::segment::{self, Aggregator, LinearCoefs};
use super::tensor::Tensor;
use super::{sigmoid, softplus, Activation, NumericsError};
use crate::graph::Graph;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<'g> {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    ScaleBy(Var, Var),
    Activate(Var, Activation),
    Square(Var),
    SqrtEps(Var),
    GatherRows(Var, &'g [usize]),
    ConcatCols(Vec<Var>),
    MulRows(Var, Var),
    ArcCombine {
        dst: Var,
        src: Var,
        graph: &'g Graph,
    },
    SegmentReduce {
        input: Var,
        graph: &'g Graph,
        kind: Aggregator,
        argmax: Vec<usize>,
    },
    NeighborReduce {
        input: Var,
        graph: &'g Graph,
        kind: Aggregator,
        argmax: Vec<usize>,
    },
    EdgeActivationReduce {
        dst: Var,
        src: Var,
        graph: &'g Graph,
        act: Activation,
        kind: Aggregator,
    },
    SegmentSoftmax {
        scores: Var,
        graph: &'g Graph,
    },
    Sum(Var),
    Inner(Var, Tensor),
    BceWithLogits {
        logits: Var,
        targets: Vec<f64>,
        pos_weight: f64,
    },
}

struct Node<'g> {
    value: Tensor,
    op: Op<'g>,
    requires_grad: bool,
}

/// Append-only record of primitive operations.
///
/// Nodes are stored in creation order, which is a topological order since
/// every op can only reference earlier handles. An inference tape computes
/// the same values but keeps no adjoint bookkeeping.
pub struct Tape<'g> {
    nodes: Vec<Node<'g>>,
    grads: Vec<Option<Tensor>>,
    recording: bool,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(op: &'static str, left: &Tensor, right: &Tensor) -> NumericsError {
    NumericsError::ShapeMismatch {
        op,
        left: left.shape(),
        right: right.shape(),
    }
}

impl<'g> Tape<'g> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            recording: true,
        }
    }

    /// A tape that evaluates forward values only.
    pub fn inference() -> Self {
        Self {
            recording: false,
            ..Self::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        let requires_grad = requires_grad && self.recording;
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last [`Tape::backward`] loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    fn push(&mut self, value: Tensor, op: Op<'g>, inputs: &[Var]) -> Var {
        let requires_grad = self.recording && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn check_nodes(&self, op: &'static str, v: Var, graph: &Graph) -> Result<(), NumericsError> {
        let t = self.value(v);
        if t.rows() != graph.num_nodes() {
            return Err(NumericsError::ShapeMismatch {
                op,
                left: t.shape(),
                right: (graph.num_nodes(), t.cols()),
            });
        }
        Ok(())
    }

    fn check_arcs(&self, op: &'static str, v: Var, graph: &Graph) -> Result<(), NumericsError> {
        let t = self.value(v);
        if t.rows() != graph.num_arcs() {
            return Err(NumericsError::ShapeMismatch {
                op,
                left: t.shape(),
                right: (graph.num_arcs(), t.cols()),
            });
        }
        Ok(())
    }

    /// `a @ b`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.rows() {
            return Err(mismatch("matmul", ta, tb));
        }
        let out = ta.matmul(tb);
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    /// `x @ w^T`: applies a weight stored as `(out, in)` to row features.
    pub fn linear(&mut self, x: Var, w: Var) -> Result<Var, NumericsError> {
        let (tx, tw) = (self.value(x), self.value(w));
        if tx.cols() != tw.cols() {
            return Err(mismatch("linear", tx, tw));
        }
        let out = tx.matmul_nt(tw);
        Ok(self.push(out, Op::MatMulNt(x, w), &[x, w]))
    }

    /// Elementwise sum; `b` may also be a single row broadcast over `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let out = if ta.shape() == tb.shape() {
            let mut out = ta.clone();
            out.add_assign(tb);
            out
        } else if tb.rows() == 1 && tb.cols() == ta.cols() {
            let mut out = ta.clone();
            let bias = tb.row(0);
            for r in 0..out.rows() {
                for (o, b) in out.row_mut(r).iter_mut().zip(bias) {
                    *o += b;
                }
            }
            out
        } else {
            return Err(mismatch("add", ta, tb));
        };
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    /// `s * a` for a 1x1 tensor `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var, NumericsError> {
        let (ta, ts) = (self.value(a), self.value(s));
        if ts.shape() != (1, 1) {
            return Err(mismatch("scale_by", ta, ts));
        }
        let k = ts.get(0, 0);
        let out = ta.map(|x| k * x);
        Ok(self.push(out, Op::ScaleBy(a, s), &[a, s]))
    }

    pub fn activate(&mut self, a: Var, act: Activation) -> Var {
        let out = self.value(a).map(|x| act.apply(x));
        self.push(out, Op::Activate(a, act), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.activate(a, Activation::Relu)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.activate(a, Activation::LeakyRelu(slope))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.activate(a, Activation::Sigmoid)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * x);
        self.push(out, Op::Square(a), &[a])
    }

    /// Elementwise `sqrt(a + eps)`.
    pub fn sqrt_eps(&mut self, a: Var, eps: f64) -> Var {
        let out = self.value(a).map(|x| (x + eps).sqrt());
        self.push(out, Op::SqrtEps(a), &[a])
    }

    pub fn gather_rows(&mut self, a: Var, idx: &'g [usize]) -> Result<Var, NumericsError> {
        let ta = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= ta.rows()) {
            return Err(NumericsError::IndexOutOfRange {
                op: "gather_rows",
                index: bad,
                rows: ta.rows(),
            });
        }
        let out = ta.select_rows(idx);
        Ok(self.push(out, Op::GatherRows(a, idx), &[a]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let rows = match parts.first() {
            Some(&p) => self.value(p).rows(),
            None => 0,
        };
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(mismatch("concat_cols", self.value(parts[0]), self.value(p)));
            }
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for &p in parts {
                let src = self.value(p).row(r);
                out.row_mut(r)[offset..offset + src.len()].copy_from_slice(src);
                offset += src.len();
            }
        }
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Scales row `r` of `a` by `s[r]` for a column `s`.
    pub fn mul_rows(&mut self, a: Var, s: Var) -> Result<Var, NumericsError> {
        let (ta, ts) = (self.value(a), self.value(s));
        if ts.cols() != 1 || ts.rows() != ta.rows() {
            return Err(mismatch("mul_rows", ta, ts));
        }
        let mut out = ta.clone();
        for r in 0..out.rows() {
            let k = ts.get(r, 0);
            for o in out.row_mut(r) {
                *o *= k;
            }
        }
        Ok(self.push(out, Op::MulRows(a, s), &[a, s]))
    }

    /// Per-arc rows `dst[u] + src[v]` for every arc `v -> u`.
    pub fn arc_combine(&mut self, dst: Var, src: Var, graph: &'g Graph) -> Result<Var, NumericsError> {
        self.check_nodes("arc_combine", dst, graph)?;
        self.check_nodes("arc_combine", src, graph)?;
        let (td, ts) = (self.value(dst), self.value(src));
        if td.cols() != ts.cols() {
            return Err(mismatch("arc_combine", td, ts));
        }
        let mut out = Tensor::zeros(graph.num_arcs(), td.cols());
        for (a, (&v, &u)) in graph.arc_src().iter().zip(graph.arc_dst()).enumerate() {
            for ((o, x), y) in out.row_mut(a).iter_mut().zip(td.row(u)).zip(ts.row(v)) {
                *o = x + y;
            }
        }
        Ok(self.push(out, Op::ArcCombine { dst, src, graph }, &[dst, src]))
    }

    /// Reduces per-arc message rows into one row per destination node.
    pub fn segment_reduce(&mut self, messages: Var, graph: &'g Graph, kind: Aggregator) -> Result<Var, NumericsError> {
        self.check_arcs("segment_reduce", messages, graph)?;
        let want = self.recording && self.requires_grad(messages);
        let (out, argmax) = segment::reduce_forward(graph, kind, self.value(messages), |a| a, want);
        Ok(self.push(
            out,
            Op::SegmentReduce {
                input: messages,
                graph,
                kind,
                argmax,
            },
            &[messages],
        ))
    }

    /// `segment_reduce(gather_rows(x, arc_src))` without materializing arcs.
    pub fn neighbor_reduce(&mut self, x: Var, graph: &'g Graph, kind: Aggregator) -> Result<Var, NumericsError> {
        self.check_nodes("neighbor_reduce", x, graph)?;
        let want = self.recording && self.requires_grad(x);
        let src = graph.arc_src();
        let (out, argmax) = segment::reduce_forward(graph, kind, self.value(x), |a| src[a], want);
        Ok(self.push(
            out,
            Op::NeighborReduce {
                input: x,
                graph,
                kind,
                argmax,
            },
            &[x],
        ))
    }

    /// `out[u] = agg_{v in N(u)} act(dst[u] + src[v])` for a linear `agg`.
    ///
    /// The per-arc pre-activations are never stored; the adjoint recomputes
    /// them arc by arc.
    pub fn edge_activation_reduce(
        &mut self,
        dst: Var,
        src: Var,
        graph: &'g Graph,
        act: Activation,
        kind: Aggregator,
    ) -> Result<Var, NumericsError> {
        if !kind.is_linear() {
            return Err(NumericsError::UnsupportedAggregator {
                op: "edge_activation_reduce",
                kind,
            });
        }
        self.check_nodes("edge_activation_reduce", dst, graph)?;
        self.check_nodes("edge_activation_reduce", src, graph)?;
        let (td, ts) = (self.value(dst), self.value(src));
        if td.cols() != ts.cols() {
            return Err(mismatch("edge_activation_reduce", td, ts));
        }
        let out = match act {
            Activation::Relu => segment::by_width!(td.cols(), edge_reduce_forward(graph, kind, td, ts, super::relu)),
            _ => edge_reduce_forward::<0>(graph, kind, td, ts, |x| act.apply(x)),
        };
        Ok(self.push(
            out,
            Op::EdgeActivationReduce {
                dst,
                src,
                graph,
                act,
                kind,
            },
            &[dst, src],
        ))
    }

    /// Softmax of a per-arc score column within each destination segment.
    pub fn segment_softmax(&mut self, scores: Var, graph: &'g Graph) -> Result<Var, NumericsError> {
        self.check_arcs("segment_softmax", scores, graph)?;
        let ts = self.value(scores);
        if ts.cols() != 1 {
            return Err(NumericsError::ShapeMismatch {
                op: "segment_softmax",
                left: ts.shape(),
                right: (graph.num_arcs(), 1),
            });
        }
        let out = segment::softmax_forward(graph, ts);
        Ok(self.push(out, Op::SegmentSoftmax { scores, graph }, &[scores]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a), &[a])
    }

    /// `sum_ij a_ij w_ij` against a constant `w` of the same shape.
    pub fn inner(&mut self, a: Var, w: &Tensor) -> Result<Var, NumericsError> {
        let ta = self.value(a);
        if ta.shape() != w.shape() {
            return Err(mismatch("inner", ta, w));
        }
        let out = Tensor::scalar(super::tensor::dot(ta.data(), w.data()));
        Ok(self.push(out, Op::Inner(a, w.clone()), &[a]))
    }

    /// Mean over rows of `pos_weight * y * softplus(-z) + (1 - y) * softplus(z)`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64], pos_weight: f64) -> Result<Var, NumericsError> {
        let tz = self.value(logits);
        if tz.cols() != 1 || tz.rows() != targets.len() {
            return Err(NumericsError::ShapeMismatch {
                op: "bce_with_logits",
                left: tz.shape(),
                right: (targets.len(), 1),
            });
        }
        let n = targets.len().max(1) as f64;
        let total: f64 = tz
            .data()
            .iter()
            .zip(targets)
            .map(|(&z, &y)| pos_weight * y * softplus(-z) + (1.0 - y) * softplus(z))
            .sum();
        let out = Tensor::scalar(total / n);
        Ok(self.push(
            out,
            Op::BceWithLogits {
                logits,
                targets: targets.to_vec(),
                pos_weight,
            },
            &[logits],
        ))
    }

    /// Fills gradients of `loss` for every node that requires them.
    pub fn backward(&mut self, loss: Var) -> Result<(), NumericsError> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(NumericsError::NotScalar(shape));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let nodes = &self.nodes;
        let val = |v: Var| &nodes[v.0].value;
        let wants = |v: Var| nodes[v.0].requires_grad;
        let out = &nodes[i].value;
        match &nodes[i].op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                if wants(a) {
                    accumulate(grads, a, g.matmul_nt(val(b)));
                }
                if wants(b) {
                    accumulate(grads, b, val(a).matmul_tn(g));
                }
            }
            &Op::MatMulNt(x, w) => {
                if wants(x) {
                    accumulate(grads, x, g.matmul(val(w)));
                }
                if wants(w) {
                    accumulate(grads, w, g.matmul_tn(val(x)));
                }
            }
            &Op::Add(a, b) => {
                if wants(a) {
                    accumulate(grads, a, g.clone());
                }
                if wants(b) {
                    if val(b).shape() == g.shape() {
                        accumulate(grads, b, g.clone());
                    } else {
                        let mut col = Tensor::zeros(1, g.cols());
                        for r in 0..g.rows() {
                            for (c, x) in col.row_mut(0).iter_mut().zip(g.row(r)) {
                                *c += x;
                            }
                        }
                        accumulate(grads, b, col);
                    }
                }
            }
            &Op::ScaleBy(a, s) => {
                let k = val(s).get(0, 0);
                if wants(a) {
                    accumulate(grads, a, g.map(|x| k * x));
                }
                if wants(s) {
                    let d: f64 = g.data().iter().zip(val(a).data()).map(|(x, y)| x * y).sum();
                    accumulate(grads, s, Tensor::scalar(d));
                }
            }
            &Op::Activate(a, act) => {
                let x = val(a);
                let data = g
                    .data()
                    .iter()
                    .zip(x.data().iter().zip(out.data()))
                    .map(|(gj, (&xj, &yj))| gj * act.derivative(xj, yj))
                    .collect();
                accumulate(grads, a, Tensor::from_vec(x.rows(), x.cols(), data));
            }
            &Op::Square(a) => {
                let x = val(a);
                let data = g.data().iter().zip(x.data()).map(|(gj, xj)| 2.0 * xj * gj).collect();
                accumulate(grads, a, Tensor::from_vec(x.rows(), x.cols(), data));
            }
            &Op::SqrtEps(a) => {
                let data = g
                    .data()
                    .iter()
                    .zip(out.data())
                    .map(|(gj, yj)| gj / (2.0 * yj))
                    .collect();
                accumulate(grads, a, Tensor::from_vec(out.rows(), out.cols(), data));
            }
            &Op::GatherRows(a, idx) => {
                let mut ga = Tensor::zeros(val(a).rows(), g.cols());
                for (r, &src) in idx.iter().enumerate() {
                    for (o, x) in ga.row_mut(src).iter_mut().zip(g.row(r)) {
                        *o += x;
                    }
                }
                accumulate(grads, a, ga);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let cols = val(p).cols();
                    if wants(p) {
                        let mut gp = Tensor::zeros(g.rows(), cols);
                        for r in 0..g.rows() {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + cols]);
                        }
                        accumulate(grads, p, gp);
                    }
                    offset += cols;
                }
            }
            &Op::MulRows(a, s) => {
                let (ta, ts) = (val(a), val(s));
                if wants(a) {
                    let mut ga = g.clone();
                    for r in 0..ga.rows() {
                        let k = ts.get(r, 0);
                        for o in ga.row_mut(r) {
                            *o *= k;
                        }
                    }
                    accumulate(grads, a, ga);
                }
                if wants(s) {
                    let mut gs = Tensor::zeros(ts.rows(), 1);
                    for r in 0..ts.rows() {
                        gs.set(r, 0, super::tensor::dot(g.row(r), ta.row(r)));
                    }
                    accumulate(grads, s, gs);
                }
            }
            &Op::ArcCombine { dst, src, graph } => {
                let cols = g.cols();
                if wants(dst) {
                    let mut gd = Tensor::zeros(graph.num_nodes(), cols);
                    for (a, &u) in graph.arc_dst().iter().enumerate() {
                        for (o, x) in gd.row_mut(u).iter_mut().zip(g.row(a)) {
                            *o += x;
                        }
                    }
                    accumulate(grads, dst, gd);
                }
                if wants(src) {
                    let mut gs = Tensor::zeros(graph.num_nodes(), cols);
                    for (a, &v) in graph.arc_src().iter().enumerate() {
                        for (o, x) in gs.row_mut(v).iter_mut().zip(g.row(a)) {
                            *o += x;
                        }
                    }
                    accumulate(grads, src, gs);
                }
            }
            Op::SegmentReduce {
                input,
                graph,
                kind,
                argmax,
            } => {
                let x = val(*input);
                let mut gi = Tensor::zeros(x.rows(), x.cols());
                segment::reduce_backward(graph, *kind, x, out, argmax, g, |a| a, &mut gi);
                accumulate(grads, *input, gi);
            }
            Op::NeighborReduce {
                input,
                graph,
                kind,
                argmax,
            } => {
                let x = val(*input);
                let src = graph.arc_src();
                let mut gi = Tensor::zeros(x.rows(), x.cols());
                segment::reduce_backward(graph, *kind, x, out, argmax, g, |a| src[a], &mut gi);
                accumulate(grads, *input, gi);
            }
            &Op::EdgeActivationReduce {
                dst,
                src,
                graph,
                act,
                kind,
            } => {
                let (td, ts) = (val(dst), val(src));
                let mut gd = Tensor::zeros(td.rows(), td.cols());
                let mut gs = Tensor::zeros(ts.rows(), ts.cols());
                match act {
                    Activation::Relu => segment::by_width!(
                        td.cols(),
                        edge_reduce_backward(
                            graph,
                            kind,
                            td,
                            ts,
                            g,
                            |x| if x > 0.0 { 1.0 } else { 0.0 },
                            &mut gd,
                            &mut gs,
                        )
                    ),
                    _ => edge_reduce_backward::<0>(
                        graph,
                        kind,
                        td,
                        ts,
                        g,
                        |x| act.derivative(x, act.apply(x)),
                        &mut gd,
                        &mut gs,
                    ),
                }
                if wants(dst) {
                    accumulate(grads, dst, gd);
                }
                if wants(src) {
                    accumulate(grads, src, gs);
                }
            }
            &Op::SegmentSoftmax { scores, graph } => {
                let gi = segment::softmax_backward(graph, out, g);
                accumulate(grads, scores, gi);
            }
            &Op::Sum(a) => {
                let (r, c) = val(a).shape();
                accumulate(grads, a, Tensor::full(r, c, g.get(0, 0)));
            }
            Op::Inner(a, w) => {
                let k = g.get(0, 0);
                accumulate(grads, *a, w.map(|x| k * x));
            }
            Op::BceWithLogits {
                logits,
                targets,
                pos_weight,
            } => {
                let z = val(*logits);
                let scale = g.get(0, 0) / targets.len().max(1) as f64;
                let data = z
                    .data()
                    .iter()
                    .zip(targets)
                    .map(|(&z, &y)| scale * (-pos_weight * y * sigmoid(-z) + (1.0 - y) * sigmoid(z)))
                    .collect();
                accumulate(grads, *logits, Tensor::from_vec(z.rows(), 1, data));
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn edge_reduce_forward<const D: usize>(
    graph: &Graph,
    kind: Aggregator,
    dst: &Tensor,
    src: &Tensor,
    f: impl Fn(f64) -> f64,
) -> Tensor {
    let coefs = LinearCoefs::new(kind, graph);
    if coefs.has_src() {
        edge_rows::<D>(graph, &coefs, dst, src, |v| coefs.src(v), f)
    } else {
        edge_rows::<D>(graph, &coefs, dst, src, |_| 1.0, f)
    }
}

fn edge_rows<const D: usize>(
    graph: &Graph,
    coefs: &LinearCoefs,
    dst: &Tensor,
    src: &Tensor,
    src_coef: impl Fn(usize) -> f64,
    f: impl Fn(f64) -> f64,
) -> Tensor {
    let d = segment::width::<D>(dst.cols());
    let mut out = Tensor::zeros(graph.num_nodes(), d);
    if d == 0 {
        return out;
    }
    let arc_src = graph.arc_src();
    let (qd, kd) = (dst.data(), src.data());
    let mut acc = vec![0.0; d];
    for (u, o) in out.data_mut().chunks_exact_mut(d).enumerate() {
        let q = &qd[u * d..u * d + d];
        let acc = &mut acc[..d];
        acc.fill(0.0);
        for a in graph.arc_range(u) {
            let v = arc_src[a];
            let k = &kd[v * d..v * d + d];
            let c = src_coef(v);
            for j in 0..d {
                acc[j] += c * f(q[j] + k[j]);
            }
        }
        let c = coefs.dst(u);
        for j in 0..d {
            o[j] = acc[j] * c;
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn edge_reduce_backward<const D: usize>(
    graph: &Graph,
    kind: Aggregator,
    dst: &Tensor,
    src: &Tensor,
    grad_out: &Tensor,
    df: impl Fn(f64) -> f64,
    grad_dst: &mut Tensor,
    grad_src: &mut Tensor,
) {
    let d = segment::width::<D>(dst.cols());
    if d == 0 {
        return;
    }
    let coefs = LinearCoefs::new(kind, graph);
    let arc_src = graph.arc_src();
    let (qd, kd, gd) = (dst.data(), src.data(), grad_out.data());
    let gs = grad_src.data_mut();
    let mut scaled = vec![0.0; d];
    let mut gq = vec![0.0; d];
    for (u, gdst) in grad_dst.data_mut().chunks_exact_mut(d).enumerate() {
        let q = &qd[u * d..u * d + d];
        let cu = coefs.dst(u);
        let (scaled, gq) = (&mut scaled[..d], &mut gq[..d]);
        for j in 0..d {
            scaled[j] = cu * gd[u * d + j];
        }
        gq.fill(0.0);
        for a in graph.arc_range(u) {
            let v = arc_src[a];
            let c = coefs.src(v);
            let k = &kd[v * d..v * d + d];
            let gk = &mut gs[v * d..v * d + d];
            for j in 0..d {
                let t = c * scaled[j] * df(q[j] + k[j]);
                gq[j] += t;
                gk[j] += t;
            }
        }
        for j in 0..d {
            gdst[j] += gq[j];
        }
    }
}
