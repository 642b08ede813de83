//! Attention-based downsampling: pick K centers by farthest point sampling,
//! then refine their features by cross-attention over nearby input points, a
//! GRU update, and a residual FFN. Center positions never move.

use crate::error::{Error, Result};
use crate::geometry::{
    farthest_point_sampling, knn, knn_feature_space, lex_min_index, PointSet, SelfMode,
};
use crate::params::{Ctx, Init, ParamStore};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::TensorId;

use super::attention::{neighbor_attention, VectorAttentionParams};
use super::gru::{gru_cell, GruParams};
use super::linear::Mlp2;

/// How slot neighborhoods are resolved: nearest input points to the slot
/// position (reference behavior) or to the slot's current feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighborSpace {
    #[default]
    Coordinate,
    Feature,
}

#[derive(Debug, Clone)]
pub struct SemanticAggregationParams {
    pub attn: VectorAttentionParams,
    pub gru: GruParams,
    pub ffn: Mlp2,
    pub dim: usize,
}

impl SemanticAggregationParams {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut Rng,
        name: &str,
        dim: usize,
        ffn_ratio: usize,
    ) -> Self {
        let attn = VectorAttentionParams::new(store, rng, &format!("{name}.attn"), dim);
        let gru = GruParams::new(store, rng, &format!("{name}.gru"), dim);
        let ffn = Mlp2::new(
            store,
            rng,
            &format!("{name}.ffn"),
            dim,
            dim * ffn_ratio,
            dim,
            Init::FanIn { fan_in: dim * ffn_ratio },
        );
        SemanticAggregationParams { attn, gru, ffn, dim }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AggregateOptions {
    /// Input neighbors gathered per slot.
    pub k: usize,
    /// Refinement iterations; each performs exactly one GRU update.
    pub iterations: usize,
    pub neighbor_space: NeighborSpace,
}

/// Downsampled state: refined slot features and their fixed positions, which
/// are a subset of the input coordinates.
#[derive(Debug)]
pub struct SlotState {
    pub features: TensorId,
    pub positions: PointSet,
    pub selected: Vec<usize>,
}

/// Per-call instrumentation.
#[derive(Debug, Default)]
pub struct AggregateTrace {
    pub gru_updates: usize,
    /// Softmax weight tensors, one [K, k, D] entry per iteration.
    pub attention_weights: Vec<TensorId>,
}

pub fn aggregate<T: Scalar>(
    ctx: &mut Ctx<T>,
    params: &SemanticAggregationParams,
    x: TensorId,
    points: &PointSet,
    slot_count: usize,
    opts: AggregateOptions,
) -> Result<SlotState> {
    Ok(aggregate_traced(ctx, params, x, points, slot_count, opts)?.0)
}

pub fn aggregate_traced<T: Scalar>(
    ctx: &mut Ctx<T>,
    params: &SemanticAggregationParams,
    x: TensorId,
    points: &PointSet,
    slot_count: usize,
    opts: AggregateOptions,
) -> Result<(SlotState, AggregateTrace)> {
    let n = points.len();
    if ctx.tape.shape(x)[0] != n {
        return Err(Error::contract(format!(
            "feature rows {} do not match point count {n}",
            ctx.tape.shape(x)[0]
        )));
    }
    if slot_count == 0 || slot_count > n {
        return Err(Error::contract(format!(
            "aggregation needs 1 <= slots <= {n}, got {slot_count}"
        )));
    }
    if opts.iterations == 0 {
        return Err(Error::contract("aggregation needs at least one iteration"));
    }
    let k = opts.k.min(n);

    // Seeding at the lexicographically smallest point keeps center selection
    // independent of input ordering.
    let selected = farthest_point_sampling(points, slot_count, lex_min_index(points))?;
    let positions = points.select(&selected);
    let mut slot_feats = ctx.tape.gather(x, std::sync::Arc::new(selected.clone()))?;

    // Coordinate-space neighborhoods depend only on the fixed positions.
    let coord_nbr = match opts.neighbor_space {
        NeighborSpace::Coordinate => Some(knn(&positions, points, k, SelfMode::Include)?),
        NeighborSpace::Feature => None,
    };

    let mut trace = AggregateTrace::default();
    for _ in 0..opts.iterations {
        let nbr = match opts.neighbor_space {
            NeighborSpace::Coordinate => coord_nbr.clone().unwrap(),
            NeighborSpace::Feature => {
                let d = params.dim;
                let q: Vec<f64> = ctx.tape.value(slot_feats).iter().map(|v| v.to_f64()).collect();
                let r: Vec<f64> = ctx.tape.value(x).iter().map(|v| v.to_f64()).collect();
                knn_feature_space(&q, &r, d, k)?
            }
        };
        let (y, weights) =
            neighbor_attention(ctx, &params.attn, slot_feats, x, &positions, points, &nbr)?;
        trace.attention_weights.push(weights);
        slot_feats = gru_cell(ctx, &params.gru, slot_feats, y)?;
        trace.gru_updates += 1;
        let f = params.ffn.forward(ctx, slot_feats)?;
        slot_feats = ctx.tape.add(slot_feats, f)?;
    }

    Ok((
        SlotState {
            features: slot_feats,
            positions,
            selected,
        },
        trace,
    ))
}

#[cfg(test)]
mod tests;
