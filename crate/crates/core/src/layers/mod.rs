//! Single-layer GNN node classifiers.
//!
//! Every layer maps node features `X` (`n x d_in`) to `n x d_out` and is
//! followed by a linear head producing one logit per node. Forwards are
//! written against [`Tape`], so the same code serves training and inference.

mod check;
mod params;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::Graph;
use crate::numerics::{Activation, Aggregator, NumericsError, Tape, Tensor, Var, LEAKY_SLOPE};

pub use check::{conditioned_grad_check, kink_margin, layer_grad_check, ConditionedCheck, GradCheckProtocol};
pub use params::{check_params, glorot_bound, init_params, BoundParams, LayerParams, PARAMS_MAGIC, PARAMS_VERSION};

#[derive(Debug, Error)]
pub enum LayerError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("parameter `{name}` has shape {got:?}, expected {expected:?}")]
    ParamShape {
        name: String,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("unknown model `{0}` (valid: gcn, graphsage, gin, gatv2, sir-gcn, sinc-gcn, multi-agg)")]
    UnknownModel(String),
    #[error("unknown encoding `{0}` (valid: scalar, one-hot)")]
    UnknownEncoding(String),
    #[error("feature matrix has {got} rows for a graph with {expected} nodes")]
    FeatureRows { expected: usize, got: usize },
    #[error("weight {weight} outside the one-hot range [-{bound}, {bound}]")]
    WeightOutOfRange { weight: i64, bound: i64 },
    #[error("{0}")]
    Unsupported(String),
    #[error("malformed params file: {0}")]
    ParamsFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "gcn")]
    Gcn,
    #[serde(rename = "graphsage")]
    GraphSage,
    #[serde(rename = "gin")]
    Gin,
    #[serde(rename = "gatv2")]
    Gatv2,
    #[serde(rename = "sir-gcn")]
    SirGcn,
    #[serde(rename = "sinc-gcn")]
    SincGcn,
    #[serde(rename = "multi-agg")]
    MultiAgg,
}

impl ModelKind {
    pub const ALL: [ModelKind; 7] = [
        ModelKind::Gcn,
        ModelKind::GraphSage,
        ModelKind::Gin,
        ModelKind::Gatv2,
        ModelKind::SirGcn,
        ModelKind::SincGcn,
        ModelKind::MultiAgg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Gcn => "gcn",
            ModelKind::GraphSage => "graphsage",
            ModelKind::Gin => "gin",
            ModelKind::Gatv2 => "gatv2",
            ModelKind::SirGcn => "sir-gcn",
            ModelKind::SincGcn => "sinc-gcn",
            ModelKind::MultiAgg => "multi-agg",
        }
    }

    /// Row label used in result tables.
    pub fn display_name(self) -> &'static str {
        match self {
            ModelKind::Gcn => "GCN",
            ModelKind::GraphSage => "GraphSAGE",
            ModelKind::Gin => "GIN",
            ModelKind::Gatv2 => "GATv2",
            ModelKind::SirGcn => "SIR-GCN",
            ModelKind::SincGcn => "SINC-GCN",
            ModelKind::MultiAgg => "MultiAgg",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = LayerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase();
        let alias = match key.as_str() {
            "sage" => "graphsage",
            "sir" | "sir_gcn" => "sir-gcn",
            "sinc" | "sinc_gcn" => "sinc-gcn",
            "multi_agg" | "multiagg" => "multi-agg",
            other => other,
        };
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == alias)
            .ok_or_else(|| LayerError::UnknownModel(s.to_string()))
    }
}

/// How integer node weights become input features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Encoding {
    /// One column holding the raw weight.
    Scalar,
    /// `2 * bound + 1` indicator columns.
    OneHot { bound: i64 },
}

impl Encoding {
    pub fn dim(self) -> usize {
        match self {
            Encoding::Scalar => 1,
            Encoding::OneHot { bound } => (2 * bound + 1) as usize,
        }
    }

    /// Parses `scalar` or `one-hot`; the one-hot width comes from `bound`.
    pub fn parse(s: &str, bound: i64) -> Result<Self, LayerError> {
        match s.trim().to_ascii_lowercase().as_str() {
            "scalar" => Ok(Encoding::Scalar),
            "one-hot" | "one_hot" | "onehot" => Ok(Encoding::OneHot { bound }),
            _ => Err(LayerError::UnknownEncoding(s.to_string())),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Encoding::Scalar => "scalar",
            Encoding::OneHot { .. } => "one-hot",
        }
    }
}

pub fn encode_features(weights: &[i64], encoding: Encoding) -> Result<Tensor, LayerError> {
    match encoding {
        Encoding::Scalar => Ok(Tensor::from_vec(
            weights.len(),
            1,
            weights.iter().map(|&w| w as f64).collect(),
        )),
        Encoding::OneHot { bound } => {
            let dim = encoding.dim();
            let mut t = Tensor::zeros(weights.len(), dim);
            for (i, &w) in weights.iter().enumerate() {
                if w.abs() > bound {
                    return Err(LayerError::WeightOutOfRange { weight: w, bound });
                }
                t.set(i, (w + bound) as usize, 1.0);
            }
            Ok(t)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub d_in: usize,
    pub d_hidden: usize,
    pub d_out: usize,
    pub encoding: Encoding,
    /// Message aggregator of SINC-GCN.
    pub agg: Aggregator,
    /// Context aggregator of SINC-GCN.
    pub ctx_agg: Aggregator,
    /// Per-arc nonlinearity of SIR-GCN and SINC-GCN.
    pub activation: Activation,
    /// Train GIN's epsilon instead of holding it at its stored value.
    pub learn_eps: bool,
}

impl ModelSpec {
    /// One layer with 16 hidden and 16 output units.
    pub fn new(kind: ModelKind, encoding: Encoding) -> Self {
        Self {
            kind,
            d_in: encoding.dim(),
            d_hidden: 16,
            d_out: 16,
            encoding,
            agg: Aggregator::Sum,
            ctx_agg: Aggregator::Sum,
            activation: Activation::Relu,
            learn_eps: false,
        }
    }

    /// Parameters excluded from optimization.
    pub fn frozen(&self) -> &'static [&'static str] {
        if self.kind == ModelKind::Gin && !self.learn_eps {
            &["eps"]
        } else {
            &[]
        }
    }

    pub fn validate(&self) -> Result<(), LayerError> {
        if self.kind == ModelKind::SincGcn {
            for kind in [self.agg, self.ctx_agg] {
                if kind == Aggregator::Std {
                    return Err(LayerError::Unsupported(format!(
                        "sinc-gcn aggregators must be sum, mean, symmetric_mean or max, got {kind}"
                    )));
                }
            }
        }
        if self.encoding.dim() != self.d_in {
            return Err(LayerError::Unsupported(format!(
                "{} encoding has width {}, but d_in is {}",
                self.encoding.name(),
                self.encoding.dim(),
                self.d_in
            )));
        }
        Ok(())
    }
}

fn check_rows(tape: &Tape<'_>, x: Var, graph: &Graph) -> Result<(), LayerError> {
    let got = tape.shape(x).0;
    if got != graph.num_nodes() {
        return Err(LayerError::FeatureRows {
            expected: graph.num_nodes(),
            got,
        });
    }
    Ok(())
}

/// `h_u = sum_v W h_v / sqrt(d_u d_v)`.
pub fn gcn<'g>(tape: &mut Tape<'g>, p: &BoundParams, g: &'g Graph, x: Var) -> Result<Var, LayerError> {
    check_rows(tape, x, g)?;
    let y = tape.linear(x, p.get("w")?)?;
    Ok(tape.neighbor_reduce(y, g, Aggregator::SymmetricMean)?)
}

/// `h_u = max_v (W h_v + b)`.
pub fn sage<'g>(tape: &mut Tape<'g>, p: &BoundParams, g: &'g Graph, x: Var) -> Result<Var, LayerError> {
    check_rows(tape, x, g)?;
    let y = tape.linear(x, p.get("w")?)?;
    let y = tape.add(y, p.get("b")?)?;
    Ok(tape.neighbor_reduce(y, g, Aggregator::Max)?)
}

/// `h_u = MLP((1 + eps) h_u + sum_v h_v)`.
pub fn gin<'g>(tape: &mut Tape<'g>, p: &BoundParams, g: &'g Graph, x: Var) -> Result<Var, LayerError> {
    check_rows(tape, x, g)?;
    let nbr = tape.neighbor_reduce(x, g, Aggregator::Sum)?;
    let scaled = tape.scale_by(x, p.get("eps")?)?;
    let z = tape.add(x, scaled)?;
    let z = tape.add(z, nbr)?;
    let h = tape.linear(z, p.get("mlp.w1")?)?;
    let h = tape.add(h, p.get("mlp.b1")?)?;
    let h = tape.relu(h);
    let out = tape.linear(h, p.get("mlp.w2")?)?;
    Ok(tape.add(out, p.get("mlp.b2")?)?)
}

/// Per-arc attention weights `softmax_v(a . LeakyReLU(W_Q h_u + W_K h_v))`.
pub fn gatv2_attention<'g>(tape: &mut Tape<'g>, p: &BoundParams, g: &'g Graph, x: Var) -> Result<Var, LayerError> {
    check_rows(tape, x, g)?;
    let q = tape.linear(x, p.get("w_q")?)?;
    let k = tape.linear(x, p.get("w_k")?)?;
    let pre = tape.arc_combine(q, k, g)?;
    let act = tape.leaky_relu(pre, LEAKY_SLOPE);
    let scores = tape.linear(act, p.get("a")?)?;
    Ok(tape.segment_softmax(scores, g)?)
}

/// `h_u = sum_v alpha_uv W h_v`.
pub fn gatv2<'g>(tape: &mut Tape<'g>, p: &BoundParams, g: &'g Graph, x: Var) -> Result<Var, LayerError> {
    let alpha = gatv2_attention(tape, p, g, x)?;
    let y = tape.linear(x, p.get("w")?)?;
    let msgs = tape.gather_rows(y, g.arc_src())?;
    let weighted = tape.mul_rows(msgs, alpha)?;
    Ok(tape.segment_reduce(weighted, g, Aggregator::Sum)?)
}

/// `h_u = sum_v W_R act(W_Q h_u + W_K h_v)`.
pub fn sir<'g>(tape: &mut Tape<'g>, p: &BoundParams, g: &'g Graph, x: Var, act: Activation) -> Result<Var, LayerError> {
    check_rows(tape, x, g)?;
    let q = tape.linear(x, p.get("w_q")?)?;
    let k = tape.linear(x, p.get("w_k")?)?;
    let m = tape.edge_activation_reduce(q, k, g, act, Aggregator::Sum)?;
    Ok(tape.linear(m, p.get("w_r")?)?)
}

/// `h_u = agg_v W_R act(W_Q h_u + W_K h_v + ctx_agg_w W_N h_w)`.
///
/// Linear aggregators commute with the surrounding weight matrices, so
/// `W_N` and `W_R` are applied per node whenever that is exact. Under a max
/// message aggregator `W_R` is applied to every arc before reducing.
pub fn sinc<'g>(
    tape: &mut Tape<'g>,
    p: &BoundParams,
    g: &'g Graph,
    x: Var,
    agg: Aggregator,
    ctx_agg: Aggregator,
    act: Activation,
) -> Result<Var, LayerError> {
    check_rows(tape, x, g)?;
    for kind in [agg, ctx_agg] {
        if kind == Aggregator::Std {
            return Err(NumericsError::UnsupportedAggregator { op: "sinc", kind }.into());
        }
    }
    let (w_q, w_n) = (p.get("w_q")?, p.get("w_n")?);
    let k = tape.linear(x, p.get("w_k")?)?;
    let dst = if ctx_agg.is_linear() {
        // W_Q x_u + W_N pooled_u as one product over [x | pooled]
        let pooled = tape.neighbor_reduce(x, g, ctx_agg)?;
        let inputs = tape.concat_cols(&[x, pooled])?;
        let weights = tape.concat_cols(&[w_q, w_n])?;
        tape.linear(inputs, weights)?
    } else {
        let q = tape.linear(x, w_q)?;
        let n = tape.linear(x, w_n)?;
        let ctx = tape.neighbor_reduce(n, g, ctx_agg)?;
        tape.add(q, ctx)?
    };
    let w_r = p.get("w_r")?;
    if agg.is_linear() {
        let m = tape.edge_activation_reduce(dst, k, g, act, agg)?;
        Ok(tape.linear(m, w_r)?)
    } else {
        let pre = tape.arc_combine(dst, k, g)?;
        let m = tape.activate(pre, act);
        let msgs = tape.linear(m, w_r)?;
        Ok(tape.segment_reduce(msgs, g, agg)?)
    }
}

/// Concatenated sum, max and std reductions, then a combining map.
pub fn multi_agg<'g>(tape: &mut Tape<'g>, p: &BoundParams, g: &'g Graph, x: Var) -> Result<Var, LayerError> {
    check_rows(tape, x, g)?;
    let mut parts = Vec::with_capacity(3);
    for (name, kind) in [
        ("w_sum", Aggregator::Sum),
        ("w_max", Aggregator::Max),
        ("w_std", Aggregator::Std),
    ] {
        let y = tape.linear(x, p.get(name)?)?;
        parts.push(tape.neighbor_reduce(y, g, kind)?);
    }
    let cat = tape.concat_cols(&parts)?;
    Ok(tape.linear(cat, p.get("w_combine")?)?)
}

/// The layer selected by `spec`, without the head.
pub fn layer<'g>(
    spec: &ModelSpec,
    tape: &mut Tape<'g>,
    p: &BoundParams,
    g: &'g Graph,
    x: Var,
) -> Result<Var, LayerError> {
    match spec.kind {
        ModelKind::Gcn => gcn(tape, p, g, x),
        ModelKind::GraphSage => sage(tape, p, g, x),
        ModelKind::Gin => gin(tape, p, g, x),
        ModelKind::Gatv2 => gatv2(tape, p, g, x),
        ModelKind::SirGcn => sir(tape, p, g, x, spec.activation),
        ModelKind::SincGcn => sinc(tape, p, g, x, spec.agg, spec.ctx_agg, spec.activation),
        ModelKind::MultiAgg => multi_agg(tape, p, g, x),
    }
}

/// Layer followed by the linear head: one logit per node (`n x 1`).
pub fn logits<'g>(
    spec: &ModelSpec,
    tape: &mut Tape<'g>,
    p: &BoundParams,
    g: &'g Graph,
    x: Var,
) -> Result<Var, LayerError> {
    let h = layer(spec, tape, p, g, x)?;
    let z = tape.linear(h, p.get("head.w")?)?;
    Ok(tape.add(z, p.get("head.b")?)?)
}

fn eager(
    params: &LayerParams,
    g: &Graph,
    x: &Tensor,
    f: impl for<'g> FnOnce(&mut Tape<'g>, &BoundParams, &'g Graph, Var) -> Result<Var, LayerError>,
) -> Result<Tensor, LayerError> {
    let mut tape = Tape::inference();
    let bound = params.bind(&mut tape, &[]);
    let xv = tape.constant(x.clone());
    let out = f(&mut tape, &bound, g, xv)?;
    Ok(tape.value(out).clone())
}

pub fn gcn_forward(params: &LayerParams, g: &Graph, x: &Tensor) -> Result<Tensor, LayerError> {
    eager(params, g, x, gcn)
}

pub fn sage_forward(params: &LayerParams, g: &Graph, x: &Tensor) -> Result<Tensor, LayerError> {
    eager(params, g, x, sage)
}

pub fn gin_forward(params: &LayerParams, g: &Graph, x: &Tensor) -> Result<Tensor, LayerError> {
    eager(params, g, x, gin)
}

pub fn gatv2_forward(params: &LayerParams, g: &Graph, x: &Tensor) -> Result<Tensor, LayerError> {
    eager(params, g, x, gatv2)
}

pub fn sir_gcn_forward(params: &LayerParams, g: &Graph, x: &Tensor, act: Activation) -> Result<Tensor, LayerError> {
    eager(params, g, x, |t, p, g, x| sir(t, p, g, x, act))
}

pub fn sinc_gcn_forward(
    params: &LayerParams,
    g: &Graph,
    x: &Tensor,
    agg: Aggregator,
    ctx_agg: Aggregator,
    act: Activation,
) -> Result<Tensor, LayerError> {
    eager(params, g, x, |t, p, g, x| sinc(t, p, g, x, agg, ctx_agg, act))
}

pub fn multi_agg_forward(params: &LayerParams, g: &Graph, x: &Tensor) -> Result<Tensor, LayerError> {
    eager(params, g, x, multi_agg)
}

/// Layer output for any model kind.
pub fn layer_forward(spec: &ModelSpec, params: &LayerParams, g: &Graph, x: &Tensor) -> Result<Tensor, LayerError> {
    eager(params, g, x, |t, p, g, x| layer(spec, t, p, g, x))
}

/// Per-node logits for any model kind.
pub fn predict_logits(spec: &ModelSpec, params: &LayerParams, g: &Graph, x: &Tensor) -> Result<Tensor, LayerError> {
    eager(params, g, x, |t, p, g, x| logits(spec, t, p, g, x))
}

/// The closed-form SINC-GCN solution; logits are `out + 0.5`.
///
/// For node `u` with neighbor sum `S_u`, every arc contributes
/// `-|w_v - S_u|`, so under `Aggregator::Max` the output is `0` exactly when
/// some neighbor matches the sum and at most `-1` otherwise.
pub fn analytic_sinc_params(variant: Aggregator) -> (ModelSpec, LayerParams) {
    let spec = ModelSpec {
        d_hidden: 2,
        d_out: 1,
        agg: variant,
        ctx_agg: Aggregator::Sum,
        activation: Activation::Relu,
        ..ModelSpec::new(ModelKind::SincGcn, Encoding::Scalar)
    };
    let params = LayerParams::new()
        .with("w_r", Tensor::from_rows(&[&[-1.0, -1.0]]))
        .with("w_q", Tensor::zeros(2, 1))
        .with("w_k", Tensor::column(&[1.0, -1.0]))
        .with("w_n", Tensor::column(&[-1.0, 1.0]))
        .with("head.w", Tensor::scalar(1.0))
        .with("head.b", Tensor::scalar(0.5));
    (spec, params)
}
