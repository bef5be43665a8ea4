//! Named parameter sets, initialization and the `SNCP` binary format.
//!
//! Layout: magic `SNCP`, format version (`u32`), then for each tensor the
//! name length (`u32`), the UTF-8 name, rows (`u32`), cols (`u32`) and
//! `rows * cols` row-major `f64` values. All integers and floats are
//! little-endian; tensors run to end of file.

use std::io::{Read, Write};

use rand::Rng;

use super::{LayerError, ModelKind, ModelSpec};
use crate::numerics::{Tape, Tensor, Var};

pub const PARAMS_MAGIC: &[u8; 4] = b"SNCP";
pub const PARAMS_VERSION: u32 = 1;

/// Ordered name -> tensor map for one model (layer plus head).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayerParams {
    entries: Vec<(String, Tensor)>,
}

impl LayerParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) {
        match self.entries.iter_mut().find(|(n, _)| n == name) {
            Some((_, slot)) => *slot = value,
            None => self.entries.push((name.to_string(), value)),
        }
    }

    pub fn with(mut self, name: &str, value: Tensor) -> Self {
        self.insert(name, value);
        self
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, LayerError> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| LayerError::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor, LayerError> {
        self.entries
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| LayerError::MissingParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar entries.
    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.data().len()).sum()
    }

    /// Concatenated values in entry order.
    pub fn flatten(&self) -> Vec<f64> {
        self.entries
            .iter()
            .flat_map(|(_, t)| t.data().iter().copied())
            .collect()
    }

    /// Inverse of [`LayerParams::flatten`].
    pub fn assign_flat(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.num_values(), "flat parameter length");
        let mut offset = 0;
        for (_, t) in &mut self.entries {
            let len = t.data().len();
            t.data_mut().copy_from_slice(&values[offset..offset + len]);
            offset += len;
        }
    }

    /// Places every tensor on `tape`; names in `frozen` never need grads.
    pub fn bind<'g>(&self, tape: &mut Tape<'g>, frozen: &[&str]) -> BoundParams {
        let vars = self
            .entries
            .iter()
            .map(|(n, t)| {
                let trainable = !frozen.contains(&n.as_str());
                (n.clone(), tape.leaf(t.clone(), trainable))
            })
            .collect();
        BoundParams { vars }
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(PARAMS_MAGIC)?;
        w.write_all(&PARAMS_VERSION.to_le_bytes())?;
        for (name, t) in &self.entries {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.rows() as u32).to_le_bytes())?;
            w.write_all(&(t.cols() as u32).to_le_bytes())?;
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, LayerError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut cur = Cursor { bytes: &bytes, pos: 0 };
        if cur.take(4)? != PARAMS_MAGIC {
            return Err(LayerError::ParamsFormat("missing SNCP magic".into()));
        }
        let version = cur.u32()?;
        if version != PARAMS_VERSION {
            return Err(LayerError::ParamsFormat(format!(
                "unsupported params version {version}"
            )));
        }
        let mut params = Self::new();
        while cur.pos < bytes.len() {
            let len = cur.u32()? as usize;
            let name = std::str::from_utf8(cur.take(len)?)
                .map_err(|_| LayerError::ParamsFormat("tensor name is not UTF-8".into()))?
                .to_string();
            let rows = cur.u32()? as usize;
            let cols = cur.u32()? as usize;
            let raw = cur.take(rows * cols * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            params.insert(&name, Tensor::from_vec(rows, cols, data));
        }
        Ok(params)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], LayerError> {
        if self.pos + n > self.bytes.len() {
            return Err(LayerError::ParamsFormat(format!(
                "truncated params file at byte {}",
                self.pos
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, LayerError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Tape handles for a bound [`LayerParams`].
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: Vec<(String, Var)>,
}

impl BoundParams {
    pub fn get(&self, name: &str) -> Result<Var, LayerError> {
        self.vars
            .iter()
            .find(|(n, _)| n == name)
            .map(|&(_, v)| v)
            .ok_or_else(|| LayerError::MissingParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(n, v)| (n.as_str(), *v))
    }
}

enum Init {
    Glorot,
    Zero,
}

/// Parameter names, shapes and initializers for a model, in storage order.
fn layout(spec: &ModelSpec) -> Vec<(&'static str, (usize, usize), Init)> {
    let (i, h, o) = (spec.d_in, spec.d_hidden, spec.d_out);
    use Init::*;
    let mut out = match spec.kind {
        ModelKind::Gcn => vec![("w", (o, i), Glorot)],
        ModelKind::GraphSage => vec![("w", (o, i), Glorot), ("b", (1, o), Zero)],
        ModelKind::Gin => vec![
            ("eps", (1, 1), Zero),
            ("mlp.w1", (h, i), Glorot),
            ("mlp.b1", (1, h), Zero),
            ("mlp.w2", (o, h), Glorot),
            ("mlp.b2", (1, o), Zero),
        ],
        ModelKind::Gatv2 => vec![
            ("w", (o, i), Glorot),
            ("a", (1, h), Glorot),
            ("w_q", (h, i), Glorot),
            ("w_k", (h, i), Glorot),
        ],
        ModelKind::SirGcn => vec![
            ("w_r", (o, h), Glorot),
            ("w_q", (h, i), Glorot),
            ("w_k", (h, i), Glorot),
        ],
        ModelKind::SincGcn => vec![
            ("w_r", (o, h), Glorot),
            ("w_q", (h, i), Glorot),
            ("w_k", (h, i), Glorot),
            ("w_n", (h, i), Glorot),
        ],
        ModelKind::MultiAgg => vec![
            ("w_sum", (h, i), Glorot),
            ("w_max", (h, i), Glorot),
            ("w_std", (h, i), Glorot),
            ("w_combine", (o, 3 * h), Glorot),
        ],
    };
    out.push(("head.w", (1, o), Glorot));
    out.push(("head.b", (1, 1), Zero));
    out
}

/// Upper bound of the Glorot-uniform range for a `(rows, cols)` weight.
pub fn glorot_bound(rows: usize, cols: usize) -> f64 {
    (6.0 / (rows + cols) as f64).sqrt()
}

/// Glorot-uniform weights, zero biases, `eps = 0`.
pub fn init_params<R: Rng + ?Sized>(spec: &ModelSpec, rng: &mut R) -> LayerParams {
    let mut params = LayerParams::new();
    for (name, (rows, cols), init) in layout(spec) {
        let t = match init {
            Init::Zero => Tensor::zeros(rows, cols),
            Init::Glorot => {
                let bound = glorot_bound(rows, cols);
                let data = (0..rows * cols).map(|_| rng.gen_range(-bound..=bound)).collect();
                Tensor::from_vec(rows, cols, data)
            }
        };
        params.insert(name, t);
    }
    params
}

/// Checks that `params` has every tensor `spec` needs with the right shape.
pub fn check_params(spec: &ModelSpec, params: &LayerParams) -> Result<(), LayerError> {
    for (name, shape, _) in layout(spec) {
        let t = params.get(name)?;
        if t.shape() != shape {
            return Err(LayerError::ParamShape {
                name: name.to_string(),
                expected: shape,
                got: t.shape(),
            });
        }
    }
    Ok(())
}
