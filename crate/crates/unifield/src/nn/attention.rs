//! Vector self-attention over k-nearest-neighbor neighborhoods and the
//! residual attention + FFN block.
//!
//! For point i with neighbors j: delta_ij encodes the coordinate offset
//! p_i - p_j through a two-layer MLP; per-channel attention logits come from
//! an MLP over (q_i - k_j + delta_ij); the softmax normalizes over the
//! neighbor axis independently per channel; values are (v_j + delta_ij).

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::{NeighborIndex, PointSet};
use crate::params::{Ctx, Init, ParamId, ParamStore};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::TensorId;

use super::linear::{Linear, Mlp2};
use super::LAYERNORM_EPS;

/// Projections of one vector-attention layer: Q, K, V linear maps, the
/// position-offset MLP (3 -> D -> D), and the attention MLP (D -> D -> D).
#[derive(Debug, Clone)]
pub struct VectorAttentionParams {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub pos_mlp: Mlp2,
    pub attn_mlp: Mlp2,
    pub dim: usize,
}

impl VectorAttentionParams {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut Rng,
        name: &str,
        dim: usize,
    ) -> Self {
        let query = Linear::fan_in(store, rng, &format!("{name}.q"), dim, dim);
        let key = Linear::fan_in(store, rng, &format!("{name}.k"), dim, dim);
        // V and the final layers of both MLPs start small so a fresh block
        // sits near the identity of its residual.
        let value = Linear::new(store, rng, &format!("{name}.v"), dim, dim, Init::Small(1e-2));
        let pos_mlp = Mlp2::new(store, rng, &format!("{name}.pos"), 3, dim, dim, Init::Small(1e-2));
        let attn_mlp = Mlp2::new(
            store,
            rng,
            &format!("{name}.gamma"),
            dim,
            dim,
            dim,
            Init::Small(1e-2),
        );
        VectorAttentionParams {
            query,
            key,
            value,
            pos_mlp,
            attn_mlp,
            dim,
        }
    }
}

/// Coordinate offsets q_i - p_j for every (query, neighbor) pair, flattened
/// to [n_query * k, 3].
fn position_offsets<T: Scalar>(
    ctx: &mut Ctx<T>,
    q_points: &PointSet,
    kv_points: &PointSet,
    nbr: &NeighborIndex,
) -> Result<TensorId> {
    let k = nbr.k();
    let mut diffs = Vec::with_capacity(nbr.n_query() * k * 3);
    for i in 0..nbr.n_query() {
        let pi = q_points.point(i);
        for &j in nbr.row(i) {
            let pj = kv_points.point(j);
            diffs.push(T::from_f64(pi[0] - pj[0]));
            diffs.push(T::from_f64(pi[1] - pj[1]));
            diffs.push(T::from_f64(pi[2] - pj[2]));
        }
    }
    ctx.tape.constant(diffs, &[nbr.n_query() * k, 3])
}

fn repeat_indices(n: usize, k: usize) -> Arc<Vec<usize>> {
    Arc::new((0..n).flat_map(|i| std::iter::repeat_n(i, k)).collect())
}

/// Shared attention core: queries come from `q_src` rows, keys/values from
/// `kv_src` rows addressed by the neighbor table. Returns the output and the
/// per-channel softmax weights [n_query, k, D].
pub(crate) fn neighbor_attention<T: Scalar>(
    ctx: &mut Ctx<T>,
    params: &VectorAttentionParams,
    q_src: TensorId,
    kv_src: TensorId,
    q_points: &PointSet,
    kv_points: &PointSet,
    nbr: &NeighborIndex,
) -> Result<(TensorId, TensorId)> {
    let n = ctx.tape.shape(q_src)[0];
    let d = params.dim;
    if nbr.n_query() != n || ctx.tape.shape(kv_src)[0] != nbr.n_ref() {
        return Err(Error::contract(format!(
            "neighbor table is {}x{} over {} refs, inputs are {} queries / {} refs",
            nbr.n_query(),
            nbr.k(),
            nbr.n_ref(),
            n,
            ctx.tape.shape(kv_src)[0]
        )));
    }
    let k = nbr.k();

    let q = params.query.forward(ctx, q_src)?;
    let keys = params.key.forward(ctx, kv_src)?;
    let values = params.value.forward(ctx, kv_src)?;

    let q_rep = ctx.tape.gather(q, repeat_indices(n, k))?;
    let k_nbr = ctx.tape.gather(keys, nbr.flat())?;
    let v_nbr = ctx.tape.gather(values, nbr.flat())?;

    let offsets = position_offsets(ctx, q_points, kv_points, nbr)?;
    let delta = params.pos_mlp.forward(ctx, offsets)?;

    let qk = ctx.tape.sub(q_rep, k_nbr)?;
    let logits_in = ctx.tape.add(qk, delta)?;
    let logits = params.attn_mlp.forward(ctx, logits_in)?;
    let logits = ctx.tape.reshape(logits, &[n, k, d])?;
    let weights = ctx.tape.softmax(logits, 1)?;

    let v_delta = ctx.tape.add(v_nbr, delta)?;
    let v_delta = ctx.tape.reshape(v_delta, &[n, k, d])?;
    let weighted = ctx.tape.mul(weights, v_delta)?;
    let out = ctx.tape.sum_axis(weighted, 1)?;
    Ok((out, weights))
}

/// Vector self-attention output for features x over their own neighborhood
/// table (built with the point itself included).
pub fn vector_self_attention<T: Scalar>(
    ctx: &mut Ctx<T>,
    params: &VectorAttentionParams,
    x: TensorId,
    points: &PointSet,
    nbr: &NeighborIndex,
) -> Result<TensorId> {
    Ok(neighbor_attention(ctx, params, x, x, points, points, nbr)?.0)
}

/// Same as [`vector_self_attention`] but also returns the softmax weights,
/// for normalization checks.
pub fn vector_self_attention_with_weights<T: Scalar>(
    ctx: &mut Ctx<T>,
    params: &VectorAttentionParams,
    x: TensorId,
    points: &PointSet,
    nbr: &NeighborIndex,
) -> Result<(TensorId, TensorId)> {
    neighbor_attention(ctx, params, x, x, points, points, nbr)
}

/// Residual attention block: x <- x + attention(x); x <- x + FFN(x).
/// Optional pre-normalization is off by default; the bare residual form is
/// the reference behavior.
#[derive(Debug, Clone)]
pub struct PointTransformerBlockParams {
    pub attn: VectorAttentionParams,
    pub ffn: Mlp2,
    pub norms: Option<BlockNorms>,
    pub dim: usize,
}

#[derive(Debug, Clone)]
pub struct BlockNorms {
    pub attn_gain: ParamId,
    pub attn_bias: ParamId,
    pub ffn_gain: ParamId,
    pub ffn_bias: ParamId,
}

impl PointTransformerBlockParams {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut Rng,
        name: &str,
        dim: usize,
        ffn_ratio: usize,
        with_norm: bool,
    ) -> Self {
        let attn = VectorAttentionParams::new(store, rng, &format!("{name}.attn"), dim);
        let ffn = Mlp2::new(
            store,
            rng,
            &format!("{name}.ffn"),
            dim,
            dim * ffn_ratio,
            dim,
            Init::FanIn { fan_in: dim * ffn_ratio },
        );
        let norms = with_norm.then(|| BlockNorms {
            attn_gain: store.add(format!("{name}.norm1.gain"), &[dim], Init::One, rng),
            attn_bias: store.add(format!("{name}.norm1.bias"), &[dim], Init::Zero, rng),
            ffn_gain: store.add(format!("{name}.norm2.gain"), &[dim], Init::One, rng),
            ffn_bias: store.add(format!("{name}.norm2.bias"), &[dim], Init::Zero, rng),
        });
        PointTransformerBlockParams {
            attn,
            ffn,
            norms,
            dim,
        }
    }
}

pub fn point_transformer_block<T: Scalar>(
    ctx: &mut Ctx<T>,
    params: &PointTransformerBlockParams,
    x: TensorId,
    points: &PointSet,
    nbr: &NeighborIndex,
) -> Result<TensorId> {
    let attn_in = match &params.norms {
        Some(n) => {
            let gain = ctx.param(n.attn_gain)?;
            let bias = ctx.param(n.attn_bias)?;
            ctx.tape.layernorm(x, gain, bias, LAYERNORM_EPS)?
        }
        None => x,
    };
    let y = vector_self_attention(ctx, &params.attn, attn_in, points, nbr)?;
    let x = ctx.tape.add(x, y)?;

    let ffn_in = match &params.norms {
        Some(n) => {
            let gain = ctx.param(n.ffn_gain)?;
            let bias = ctx.param(n.ffn_bias)?;
            ctx.tape.layernorm(x, gain, bias, LAYERNORM_EPS)?
        }
        None => x,
    };
    let f = params.ffn.forward(ctx, ffn_in)?;
    ctx.tape.add(x, f)
}

#[cfg(test)]
mod tests;
