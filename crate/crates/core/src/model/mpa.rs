//! Motion pattern aggregation.
//!
//! Every intermediate motion feature queries the last one (the feature
//! sampled without a scaled lookup) through global cross-attention:
//!
//! ```text
//! A    = softmax(Q Kᵀ / sqrt(d_k)) V,  Q = LN(MF_i) W_q,  K = LN(MF_g) W_k,  V = MF_g [W_v]
//! MF_i ← MF_i + MLP([MF_i, A W_o])
//! ```
//!
//! The last feature passes through unchanged and shapes are preserved, so
//! layers stack.

use rand::Rng;

use super::layers::{Init, LayerNorm, Linear};
use crate::error::{dim_err, Result};
use crate::tensor::{Float, ParamStore, Tape, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ValueProjection {
    #[default]
    Identity,
    Learned,
}

impl ValueProjection {
    pub fn name(self) -> &'static str {
        match self {
            ValueProjection::Identity => "identity",
            ValueProjection::Learned => "learned",
        }
    }
}

#[derive(Clone, Debug)]
struct AggregationLayer {
    norm_q: LayerNorm,
    norm_k: LayerNorm,
    query: Linear,
    key: Linear,
    value: Option<Linear>,
    out: Linear,
    mlp_hidden: Linear,
    mlp_out: Linear,
}

#[derive(Clone, Debug)]
pub struct MotionPatternAggregation {
    layers: Vec<AggregationLayer>,
    dim: usize,
}

/// Enhanced features plus the attention matrices (`P×P`, one per layer and
/// intermediate segment, layer-major).
#[derive(Clone, Debug)]
pub struct Aggregated {
    pub features: Vec<Var>,
    pub attention: Vec<Var>,
}

impl MotionPatternAggregation {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        dim: usize,
        layers: usize,
        value: ValueProjection,
    ) -> Self {
        let layers = (0..layers)
            .map(|l| {
                let n = |s: &str| format!("mpa.{l}.{s}");
                AggregationLayer {
                    norm_q: LayerNorm::new(store, &n("norm_q"), dim),
                    norm_k: LayerNorm::new(store, &n("norm_k"), dim),
                    query: Linear::new(store, rng, &n("query"), dim, dim, false, Init::Small),
                    key: Linear::new(store, rng, &n("key"), dim, dim, false, Init::Small),
                    value: (value == ValueProjection::Learned)
                        .then(|| Linear::new(store, rng, &n("value"), dim, dim, false, Init::Small)),
                    out: Linear::new(store, rng, &n("out"), dim, dim, false, Init::Small),
                    mlp_hidden: Linear::new(store, rng, &n("mlp.hidden"), 2 * dim, 2 * dim, true, Init::He),
                    mlp_out: Linear::new(store, rng, &n("mlp.out"), 2 * dim, dim, true, Init::Zero),
                }
            })
            .collect();
        Self { layers, dim }
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Aggregates `D×H×W` motion features; the last entry is the anchor.
    pub fn forward<T: Float>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, features: &[Var]) -> Result<Aggregated> {
        let Some(&anchor) = features.last() else {
            return dim_err("motion pattern aggregation needs at least one feature");
        };
        let shape = tape.shape(anchor).to_vec();
        if shape.len() != 3 || shape[0] != self.dim {
            return dim_err(format!("motion features {shape:?} do not have {} channels", self.dim));
        }
        if features.iter().any(|&f| tape.shape(f) != shape.as_slice()) {
            return dim_err("motion features differ in shape");
        }
        let g = features.len();
        let mut attention = Vec::new();
        if g == 1 || self.layers.is_empty() {
            return Ok(Aggregated {
                features: features.to_vec(),
                attention,
            });
        }
        let p = shape[1] * shape[2];
        let scale = T::one() / T::from_usize(self.dim).expect("dim fits").sqrt();
        let to_rows = |tape: &mut Tape<T>, f: Var| -> Result<Var> {
            let flat = tape.reshape(f, &[self.dim, p])?;
            tape.transpose(flat)
        };
        let mut rows: Vec<Var> = features
            .iter()
            .map(|&f| to_rows(tape, f))
            .collect::<Result<_>>()?;
        let anchor_rows = rows[g - 1];
        for layer in &self.layers {
            let k_in = layer.norm_k.forward(tape, store, anchor_rows)?;
            let keys = layer.key.forward(tape, store, k_in)?;
            let values = match &layer.value {
                Some(v) => v.forward(tape, store, anchor_rows)?,
                None => anchor_rows,
            };
            for row in rows.iter_mut().take(g - 1) {
                let q_in = layer.norm_q.forward(tape, store, *row)?;
                let q = layer.query.forward(tape, store, q_in)?;
                let scores = tape.matmul_t(q, false, keys, true)?;
                let scores = tape.scale(scores, scale)?;
                let attn = tape.softmax(scores, 1)?;
                attention.push(attn);
                let a = tape.matmul(attn, values)?;
                let a = layer.out.forward(tape, store, a)?;
                let joined = tape.concat(&[*row, a], 1)?;
                let hidden = layer.mlp_hidden.forward(tape, store, joined)?;
                let hidden = tape.relu(hidden)?;
                let delta = layer.mlp_out.forward(tape, store, hidden)?;
                *row = tape.add(*row, delta)?;
            }
        }
        let mut out = Vec::with_capacity(g);
        for (i, &r) in rows.iter().enumerate() {
            if i == g - 1 {
                out.push(anchor);
                continue;
            }
            let chw = tape.transpose(r)?;
            out.push(tape.reshape(chw, &shape)?);
        }
        Ok(Aggregated {
            features: out,
            attention,
        })
    }
}
