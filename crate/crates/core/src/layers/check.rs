//! Numerical diagnostics: kink margins and layer gradient checks.

use rand::Rng;

use super::{init_params, layer, BoundParams, LayerError, LayerParams, ModelKind, ModelSpec};
use crate::graph::Graph;
use crate::numerics::{grad_check, Activation, Aggregator, GradCheckReport, Tape, Tensor, Var};
use crate::synth::gen_er_graph;

/// Checks the gradient of `sum(proj * layer(x))` with respect to every
/// trainable layer parameter (head excluded), flattened in storage order.
pub fn layer_grad_check(
    spec: &ModelSpec,
    params: &LayerParams,
    g: &Graph,
    x: &Tensor,
    proj: &Tensor,
    h: f64,
) -> Result<GradCheckReport, LayerError> {
    let frozen = spec.frozen();
    let names: Vec<String> = params
        .names()
        .filter(|n| !n.starts_with("head.") && !frozen.contains(n))
        .map(str::to_string)
        .collect();
    fn objective<'g>(
        spec: &ModelSpec,
        p: &LayerParams,
        tape: &mut Tape<'g>,
        g: &'g Graph,
        x: &Tensor,
        proj: &Tensor,
    ) -> Result<(Var, BoundParams), LayerError> {
        let bound = p.bind(tape, spec.frozen());
        let xv = tape.constant(x.clone());
        let out = layer(spec, tape, &bound, g, xv)?;
        Ok((tape.inner(out, proj)?, bound))
    }

    let mut tape = Tape::new();
    let (f, bound) = objective(spec, params, &mut tape, g, x, proj)?;
    tape.backward(f)?;
    let mut analytic = Vec::new();
    let mut start = Vec::new();
    for n in &names {
        let t = params.get(n)?;
        start.extend_from_slice(t.data());
        match tape.grad(bound.get(n)?) {
            Some(gr) => analytic.extend_from_slice(gr.data()),
            None => analytic.extend(std::iter::repeat_n(0.0, t.data().len())),
        }
    }

    let mut probe = params.clone();
    let mut failure = None;
    let report = grad_check(
        |values| {
            let mut offset = 0;
            for n in &names {
                let t = probe.get_mut(n).expect("name taken from params");
                let len = t.data().len();
                t.data_mut().copy_from_slice(&values[offset..offset + len]);
                offset += len;
            }
            let mut tape = Tape::inference();
            let value = match objective(spec, &probe, &mut tape, g, x, proj) {
                Ok((f, _)) => tape.value(f).get(0, 0),
                Err(e) => {
                    failure = Some(e);
                    f64::NAN
                }
            };
            (value, analytic.clone())
        },
        &start,
        h,
    );
    match failure {
        Some(e) => Err(e),
        None => Ok(report),
    }
}

/// Smallest distance to a kink of `spec` at `(params, x)`.
///
/// Covers activation pre-values (ReLU and LeakyReLU at 0), the top-two gap
/// of every max reduction and the variance of every std reduction over two
/// or more arcs. Smooth models report `f64::INFINITY`.
pub fn kink_margin(spec: &ModelSpec, params: &LayerParams, g: &Graph, x: &Tensor) -> Result<f64, LayerError> {
    let mut tape = Tape::inference();
    let p = params.bind(&mut tape, &[]);
    let x = tape.constant(x.clone());
    let mut m = f64::INFINITY;
    match spec.kind {
        ModelKind::Gcn => {}
        ModelKind::GraphSage => {
            let y = tape.linear(x, p.get("w")?)?;
            let y = tape.add(y, p.get("b")?)?;
            m = m.min(max_gap(g, tape.value(y), |a| g.arc_src()[a]));
        }
        ModelKind::Gin => {
            let nbr = tape.neighbor_reduce(x, g, Aggregator::Sum)?;
            let scaled = tape.scale_by(x, p.get("eps")?)?;
            let z = tape.add(x, scaled)?;
            let z = tape.add(z, nbr)?;
            let h = tape.linear(z, p.get("mlp.w1")?)?;
            let h = tape.add(h, p.get("mlp.b1")?)?;
            m = m.min(abs_min(tape.value(h)));
        }
        ModelKind::Gatv2 => {
            let pre = arc_pre(&mut tape, &p, g, x, None)?;
            m = m.min(abs_min(tape.value(pre)));
        }
        ModelKind::SirGcn => {
            let pre = arc_pre(&mut tape, &p, g, x, None)?;
            m = m.min(act_margin(spec.activation, tape.value(pre)));
        }
        ModelKind::SincGcn => {
            let w_n = p.get("w_n")?;
            let nx = tape.linear(x, w_n)?;
            if spec.ctx_agg == Aggregator::Max {
                m = m.min(max_gap(g, tape.value(nx), |a| g.arc_src()[a]));
            }
            let ctx = tape.neighbor_reduce(nx, g, spec.ctx_agg)?;
            let pre = arc_pre(&mut tape, &p, g, x, Some(ctx))?;
            m = m.min(act_margin(spec.activation, tape.value(pre)));
            if spec.agg == Aggregator::Max {
                let act = tape.activate(pre, spec.activation);
                let msgs = tape.linear(act, p.get("w_r")?)?;
                m = m.min(max_gap(g, tape.value(msgs), |a| a));
            }
        }
        ModelKind::MultiAgg => {
            let y = tape.linear(x, p.get("w_max")?)?;
            m = m.min(max_gap(g, tape.value(y), |a| g.arc_src()[a]));
            let y = tape.linear(x, p.get("w_std")?)?;
            m = m.min(min_variance(g, tape.value(y)));
        }
    }
    Ok(m)
}

/// Per-arc `W_Q h_u + W_K h_v (+ ctx_u)`.
fn arc_pre<'g>(
    tape: &mut Tape<'g>,
    p: &BoundParams,
    g: &'g Graph,
    x: Var,
    ctx: Option<Var>,
) -> Result<Var, LayerError> {
    let mut q = tape.linear(x, p.get("w_q")?)?;
    if let Some(ctx) = ctx {
        q = tape.add(q, ctx)?;
    }
    let k = tape.linear(x, p.get("w_k")?)?;
    Ok(tape.arc_combine(q, k, g)?)
}

fn act_margin(act: Activation, pre: &Tensor) -> f64 {
    match act {
        Activation::Relu | Activation::LeakyRelu(_) => abs_min(pre),
        Activation::Sigmoid | Activation::Identity => f64::INFINITY,
    }
}

fn abs_min(t: &Tensor) -> f64 {
    t.data().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()))
}

fn max_gap(g: &Graph, values: &Tensor, row_of: impl Fn(usize) -> usize) -> f64 {
    let mut gap = f64::INFINITY;
    for u in 0..g.num_nodes() {
        for j in 0..values.cols() {
            let (mut top, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            for a in g.arc_range(u) {
                let v = values.get(row_of(a), j);
                if v > top {
                    second = top;
                    top = v;
                } else if v > second {
                    second = v;
                }
            }
            if second.is_finite() {
                gap = gap.min(top - second);
            }
        }
    }
    gap
}

fn min_variance(g: &Graph, values: &Tensor) -> f64 {
    let mut least = f64::INFINITY;
    for u in 0..g.num_nodes() {
        let arcs = g.arc_range(u);
        if arcs.len() < 2 {
            continue;
        }
        let n = arcs.len() as f64;
        for j in 0..values.cols() {
            let col: Vec<f64> = arcs.clone().map(|a| values.get(g.arc_src()[a], j)).collect();
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            least = least.min(var);
        }
    }
    least
}

/// Test-point conditions for [`conditioned_grad_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckProtocol {
    /// Central-difference step.
    pub h: f64,
    /// Minimum [`kink_margin`] of an accepted draw.
    pub kink_margin: f64,
    /// Minimum `|numeric|` over every coordinate of an accepted draw.
    pub resolution: f64,
    pub nodes: (usize, usize),
    pub p_edge: f64,
    pub max_draws: usize,
}

impl Default for GradCheckProtocol {
    fn default() -> Self {
        GradCheckProtocol {
            h: 1e-6,
            kink_margin: 1e-3,
            resolution: 1e-3,
            nodes: (6, 10),
            p_edge: 0.6,
            max_draws: 200,
        }
    }
}

/// Outcome of a gradient check at the first accepted draw.
#[derive(Debug, Clone)]
pub struct ConditionedCheck {
    pub report: GradCheckReport,
    /// Draws rejected before the accepted one.
    pub rejected: usize,
}

/// Draws an Erdos-Renyi graph, features in `[-1, 1)`, initial parameters and
/// a projection with entries `±U(0.5, 1.5)` until the protocol accepts the
/// point, then returns its [`layer_grad_check`]. `None` if no draw is
/// accepted within `max_draws`.
pub fn conditioned_grad_check<R: Rng + ?Sized>(
    spec: &ModelSpec,
    protocol: &GradCheckProtocol,
    rng: &mut R,
) -> Result<Option<ConditionedCheck>, LayerError> {
    for rejected in 0..protocol.max_draws {
        let n = rng.gen_range(protocol.nodes.0..=protocol.nodes.1);
        let g = gen_er_graph(n, protocol.p_edge, rng);
        let x = Tensor::from_vec(
            n,
            spec.d_in,
            (0..n * spec.d_in).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        );
        let params = init_params(spec, rng);
        let proj = Tensor::from_vec(
            n,
            spec.d_out,
            (0..n * spec.d_out)
                .map(|_| {
                    let m: f64 = rng.gen_range(0.5..1.5);
                    if rng.gen_bool(0.5) {
                        m
                    } else {
                        -m
                    }
                })
                .collect(),
        );
        if kink_margin(spec, &params, &g, &x)? < protocol.kink_margin {
            continue;
        }
        let report = layer_grad_check(spec, &params, &g, &x, &proj, protocol.h)?;
        if report.numeric.iter().any(|v| v.abs() < protocol.resolution) {
            continue;
        }
        return Ok(Some(ConditionedCheck { report, rejected }));
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Encoding;
    use crate::seeding::rng_for;

    #[test]
    fn smooth_and_kinked_models() {
        let g = Graph::new(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        let x = Tensor::column(&[0.3, -1.1, 0.7]);
        let gcn = ModelSpec::new(ModelKind::Gcn, Encoding::Scalar);
        let p = init_params(&gcn, &mut rng_for(1, "init"));
        assert_eq!(kink_margin(&gcn, &p, &g, &x).unwrap(), f64::INFINITY);

        let sage = ModelSpec::new(ModelKind::GraphSage, Encoding::Scalar);
        let p = init_params(&sage, &mut rng_for(1, "init"));
        let m = kink_margin(&sage, &p, &g, &x).unwrap();
        assert!(m.is_finite() && m > 0.0);
        // equal neighbor features tie every max
        let tied = Tensor::column(&[0.5, 0.5, 0.5]);
        assert_eq!(kink_margin(&sage, &p, &g, &tied).unwrap(), 0.0);
    }

    #[test]
    fn sinc_margin_sees_preactivations() {
        let (spec, p) = crate::layers::analytic_sinc_params(Aggregator::Sum);
        let g = Graph::new(2, &[(0, 1)]).unwrap();
        let x = Tensor::column(&[1.0, 1.0]);
        // every pre-activation is +-(x_v - S_u) = 0
        assert_eq!(kink_margin(&spec, &p, &g, &x).unwrap(), 0.0);
    }
}
