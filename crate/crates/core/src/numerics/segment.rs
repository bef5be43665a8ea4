//! Per-neighborhood reductions over CSR arc segments.
//!
//! All kernels walk destinations in node order and arcs in CSR order, so
//! floating-point accumulation order is fixed and results are bit-stable.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use super::NumericsError;
use crate::graph::Graph;

/// Variance floor inside the standard-deviation aggregator's square root.
pub const STD_EPS: f64 = 1e-5;

/// Sentinel for "no arc" in max-reduction argmax tables.
pub(crate) const NO_ARC: usize = usize::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    Sum,
    Mean,
    SymmetricMean,
    Max,
    Std,
}

impl Aggregator {
    pub const ALL: [Aggregator; 5] = [
        Aggregator::Sum,
        Aggregator::Mean,
        Aggregator::SymmetricMean,
        Aggregator::Max,
        Aggregator::Std,
    ];

    /// Whether the reduction commutes with a linear map on its inputs.
    pub fn is_linear(self) -> bool {
        matches!(self, Aggregator::Sum | Aggregator::Mean | Aggregator::SymmetricMean)
    }

    pub fn name(self) -> &'static str {
        match self {
            Aggregator::Sum => "sum",
            Aggregator::Mean => "mean",
            Aggregator::SymmetricMean => "symmetric_mean",
            Aggregator::Max => "max",
            Aggregator::Std => "std",
        }
    }
}

impl fmt::Display for Aggregator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Aggregator {
    type Err = NumericsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "sum" => Ok(Aggregator::Sum),
            "mean" => Ok(Aggregator::Mean),
            "symmetric_mean" | "sym_mean" | "symmetric" => Ok(Aggregator::SymmetricMean),
            "max" => Ok(Aggregator::Max),
            "std" => Ok(Aggregator::Std),
            _ => Err(NumericsError::UnknownAggregator(s.to_string())),
        }
    }
}

/// Arc weights of the linear aggregators, factored as
/// `dst_scale[u] * src_scale[v]` for an arc `v -> u`.
pub(crate) struct LinearCoefs {
    dst: Option<Vec<f64>>,
    src: Option<Vec<f64>>,
}

impl LinearCoefs {
    pub(crate) fn new(kind: Aggregator, graph: &Graph) -> Self {
        let inv_sqrt = || -> Vec<f64> {
            graph
                .degrees()
                .iter()
                .map(|&d| 1.0 / (d.max(1) as f64).sqrt())
                .collect()
        };
        match kind {
            Aggregator::Sum => Self { dst: None, src: None },
            Aggregator::Mean => Self {
                dst: Some(graph.degrees().iter().map(|&d| 1.0 / d.max(1) as f64).collect()),
                src: None,
            },
            Aggregator::SymmetricMean => {
                let s = inv_sqrt();
                Self {
                    dst: Some(s.clone()),
                    src: Some(s),
                }
            }
            Aggregator::Max | Aggregator::Std => unreachable!("not a linear aggregator"),
        }
    }

    #[inline]
    pub(crate) fn dst(&self, u: usize) -> f64 {
        self.dst.as_ref().map_or(1.0, |d| d[u])
    }

    #[inline]
    pub(crate) fn src(&self, v: usize) -> f64 {
        self.src.as_ref().map_or(1.0, |s| s[v])
    }

    pub(crate) fn has_src(&self) -> bool {
        self.src.is_some()
    }
}

/// Calls `f::<D>(..)` with `D` equal to `d` for common row widths and
/// `D = 0` otherwise, so inner loops over a row get a constant trip count.
macro_rules! by_width {
    ($d:expr, $f:ident($($arg:expr),* $(,)?)) => {
        match $d {
            1 => $f::<1>($($arg),*),
            2 => $f::<2>($($arg),*),
            4 => $f::<4>($($arg),*),
            8 => $f::<8>($($arg),*),
            16 => $f::<16>($($arg),*),
            32 => $f::<32>($($arg),*),
            48 => $f::<48>($($arg),*),
            64 => $f::<64>($($arg),*),
            _ => $f::<0>($($arg),*),
        }
    };
}
pub(crate) use by_width;

/// Row width for a kernel monomorphized by [`by_width`].
#[inline(always)]
pub(crate) fn width<const D: usize>(d: usize) -> usize {
    debug_assert!(D == 0 || D == d);
    if D == 0 {
        d
    } else {
        D
    }
}

/// Reduces the rows `data[row_of(a)]` for each destination's arcs `a`.
///
/// Returns the output and, for `Max`, the winning arc per output element
/// (first maximal arc on ties, `NO_ARC` for empty segments).
pub(crate) fn reduce_forward(
    graph: &Graph,
    kind: Aggregator,
    input: &Tensor,
    row_of: impl Fn(usize) -> usize,
    want_argmax: bool,
) -> (Tensor, Vec<usize>) {
    let d = input.cols();
    let mut out = Tensor::zeros(graph.num_nodes(), d);
    let mut argmax = Vec::new();
    if d == 0 {
        return (out, argmax);
    }
    // one loop per kind; a branch inside the arc loop blocks vectorization
    match kind {
        Aggregator::Sum | Aggregator::Mean | Aggregator::SymmetricMean => {
            let coefs = LinearCoefs::new(kind, graph);
            if coefs.has_src() {
                let src = graph.arc_src();
                by_width!(
                    d,
                    linear_rows(graph, input, &row_of, |a| coefs.src(src[a]), &coefs, &mut out)
                );
            } else {
                by_width!(d, linear_rows(graph, input, &row_of, |_| 1.0, &coefs, &mut out));
            }
        }
        Aggregator::Max if want_argmax => {
            argmax = vec![NO_ARC; out.data().len()];
            by_width!(d, max_rows_argmax(graph, input, &row_of, &mut out, &mut argmax));
        }
        Aggregator::Max => by_width!(d, max_rows(graph, input, &row_of, &mut out)),
        Aggregator::Std => by_width!(d, std_rows(graph, input, &row_of, &mut out)),
    }
    (out, argmax)
}

fn linear_rows<const D: usize>(
    graph: &Graph,
    input: &Tensor,
    row_of: &impl Fn(usize) -> usize,
    arc_coef: impl Fn(usize) -> f64,
    coefs: &LinearCoefs,
    out: &mut Tensor,
) {
    let d = width::<D>(input.cols());
    let x = input.data();
    if d == 1 {
        for (u, o) in out.data_mut().iter_mut().enumerate() {
            // independent partial sums hide the add latency
            let mut part = [0.0; 4];
            let range = graph.arc_range(u);
            let split = range.start + range.len() / 4 * 4;
            for a in (range.start..split).step_by(4) {
                for (i, p) in part.iter_mut().enumerate() {
                    *p += arc_coef(a + i) * x[row_of(a + i)];
                }
            }
            for a in split..range.end {
                part[0] += arc_coef(a) * x[row_of(a)];
            }
            *o = ((part[0] + part[1]) + (part[2] + part[3])) * coefs.dst(u);
        }
        return;
    }
    let mut stack = [0.0; 64];
    let mut heap = Vec::new();
    let acc: &mut [f64] = if d <= stack.len() {
        &mut stack[..d]
    } else {
        heap.resize(d, 0.0);
        &mut heap
    };
    for (u, o) in out.data_mut().chunks_exact_mut(d).enumerate() {
        acc.fill(0.0);
        for a in graph.arc_range(u) {
            let r = row_of(a);
            let xr = &x[r * d..r * d + d];
            let c = arc_coef(a);
            for j in 0..d {
                acc[j] += c * xr[j];
            }
        }
        let c = coefs.dst(u);
        for j in 0..d {
            o[j] = acc[j] * c;
        }
    }
}

fn max_rows<const D: usize>(graph: &Graph, input: &Tensor, row_of: &impl Fn(usize) -> usize, out: &mut Tensor) {
    let d = width::<D>(input.cols());
    let x = input.data();
    for (u, o) in out.data_mut().chunks_exact_mut(d).enumerate() {
        let mut arcs = graph.arc_range(u);
        let Some(first) = arcs.next() else { continue };
        let r = row_of(first);
        o.copy_from_slice(&x[r * d..r * d + d]);
        for a in arcs {
            let r = row_of(a);
            let xr = &x[r * d..r * d + d];
            for j in 0..d {
                o[j] = if xr[j] > o[j] { xr[j] } else { o[j] };
            }
        }
    }
}

fn max_rows_argmax<const D: usize>(
    graph: &Graph,
    input: &Tensor,
    row_of: &impl Fn(usize) -> usize,
    out: &mut Tensor,
    argmax: &mut [usize],
) {
    let d = width::<D>(input.cols());
    let x = input.data();
    for ((u, o), slot) in out
        .data_mut()
        .chunks_exact_mut(d)
        .enumerate()
        .zip(argmax.chunks_exact_mut(d))
    {
        let mut arcs = graph.arc_range(u);
        let Some(first) = arcs.next() else { continue };
        let r = row_of(first);
        o.copy_from_slice(&x[r * d..r * d + d]);
        slot.fill(first);
        for a in arcs {
            let r = row_of(a);
            let xr = &x[r * d..r * d + d];
            for j in 0..d {
                if xr[j] > o[j] {
                    o[j] = xr[j];
                    slot[j] = a;
                }
            }
        }
    }
}

fn std_rows<const D: usize>(graph: &Graph, input: &Tensor, row_of: &impl Fn(usize) -> usize, out: &mut Tensor) {
    let d = width::<D>(input.cols());
    let x = input.data();
    let mut sq = vec![0.0; d];
    for (u, o) in out.data_mut().chunks_exact_mut(d).enumerate() {
        let range = graph.arc_range(u);
        if range.is_empty() {
            continue;
        }
        let count = range.len() as f64;
        let sq = &mut sq[..d];
        sq.fill(0.0);
        for a in range {
            let r = row_of(a);
            let xr = &x[r * d..r * d + d];
            for j in 0..d {
                o[j] += xr[j];
                sq[j] += xr[j] * xr[j];
            }
        }
        for j in 0..d {
            let mean = o[j] / count;
            let var = sq[j] / count - mean * mean;
            o[j] = (var.max(0.0) + STD_EPS).sqrt();
        }
    }
}

/// Adjoint of [`reduce_forward`]: scatters `grad_out` rows back onto
/// `grad_in[row_of(a)]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn reduce_backward(
    graph: &Graph,
    kind: Aggregator,
    input: &Tensor,
    output: &Tensor,
    argmax: &[usize],
    grad_out: &Tensor,
    row_of: impl Fn(usize) -> usize,
    grad_in: &mut Tensor,
) {
    let d = input.cols();
    if d == 0 {
        return;
    }
    match kind {
        Aggregator::Sum | Aggregator::Mean | Aggregator::SymmetricMean => {
            let coefs = LinearCoefs::new(kind, graph);
            by_width!(d, linear_rows_backward(graph, &coefs, grad_out, &row_of, grad_in));
        }
        Aggregator::Max => {
            let gin = grad_in.data_mut();
            for (u, g) in grad_out.data().chunks_exact(d).enumerate() {
                if graph.arc_range(u).is_empty() {
                    continue;
                }
                for j in 0..d {
                    let a = argmax[u * d + j];
                    debug_assert_ne!(a, NO_ARC);
                    gin[row_of(a) * d + j] += g[j];
                }
            }
        }
        Aggregator::Std => by_width!(d, std_rows_backward(graph, input, output, grad_out, &row_of, grad_in)),
    }
}

fn linear_rows_backward<const D: usize>(
    graph: &Graph,
    coefs: &LinearCoefs,
    grad_out: &Tensor,
    row_of: &impl Fn(usize) -> usize,
    grad_in: &mut Tensor,
) {
    let d = width::<D>(grad_out.cols());
    let gin = grad_in.data_mut();
    let arc_src = graph.arc_src();
    let mut scale = vec![0.0; d];
    for (u, g) in grad_out.data().chunks_exact(d).enumerate() {
        let cu = coefs.dst(u);
        let scale = &mut scale[..d];
        for j in 0..d {
            scale[j] = cu * g[j];
        }
        for a in graph.arc_range(u) {
            let c = coefs.src(arc_src[a]);
            let r = row_of(a);
            let gi = &mut gin[r * d..r * d + d];
            for j in 0..d {
                gi[j] += c * scale[j];
            }
        }
    }
}

fn std_rows_backward<const D: usize>(
    graph: &Graph,
    input: &Tensor,
    output: &Tensor,
    grad_out: &Tensor,
    row_of: &impl Fn(usize) -> usize,
    grad_in: &mut Tensor,
) {
    let d = width::<D>(input.cols());
    let x = input.data();
    let gin = grad_in.data_mut();
    let mut mean = vec![0.0; d];
    let mut sq = vec![0.0; d];
    let mut scale = vec![0.0; d];
    for (u, g) in grad_out.data().chunks_exact(d).enumerate() {
        let range = graph.arc_range(u);
        if range.is_empty() {
            continue;
        }
        let count = range.len() as f64;
        let (mean, sq, scale) = (&mut mean[..d], &mut sq[..d], &mut scale[..d]);
        mean.fill(0.0);
        sq.fill(0.0);
        for a in range.clone() {
            let r = row_of(a);
            let xr = &x[r * d..r * d + d];
            for j in 0..d {
                mean[j] += xr[j];
                sq[j] += xr[j] * xr[j];
            }
        }
        let y = output.row(u);
        for j in 0..d {
            mean[j] /= count;
            let var = sq[j] / count - mean[j] * mean[j];
            scale[j] = if var > 0.0 { g[j] / (count * y[j]) } else { 0.0 };
        }
        for a in range {
            let r = row_of(a);
            let xr = &x[r * d..r * d + d];
            let gi = &mut gin[r * d..r * d + d];
            for j in 0..d {
                gi[j] += scale[j] * (xr[j] - mean[j]);
            }
        }
    }
}

/// Softmax of a per-arc score column within each destination segment.
pub(crate) fn softmax_forward(graph: &Graph, scores: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(scores.rows(), 1);
    let s = scores.data();
    let o = out.data_mut();
    for u in 0..graph.num_nodes() {
        let range = graph.arc_range(u);
        if range.is_empty() {
            continue;
        }
        let m = s[range.clone()].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for a in range.clone() {
            let e = (s[a] - m).exp();
            o[a] = e;
            z += e;
        }
        for a in range {
            o[a] /= z;
        }
    }
    out
}

pub(crate) fn softmax_backward(graph: &Graph, output: &Tensor, grad_out: &Tensor) -> Tensor {
    let mut grad = Tensor::zeros(output.rows(), 1);
    let y = output.data();
    let g = grad_out.data();
    let gi = grad.data_mut();
    for u in 0..graph.num_nodes() {
        let range = graph.arc_range(u);
        let dotp: f64 = range.clone().map(|a| g[a] * y[a]).sum();
        for a in range {
            gi[a] = y[a] * (g[a] - dotp);
        }
    }
    grad
}
