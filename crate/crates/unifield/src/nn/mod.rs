//! Network building blocks: linear layers, two-layer MLPs, GRU cell, vector
//! self-attention, semantic aggregation, and flow-conditioned adapters.

pub mod adapters;
pub mod aggregation;
pub mod attention;
pub mod gru;
pub mod linear;

pub use adapters::{fca_forward, routed_fca, AdapterBank, AdapterParams};
pub use aggregation::{
    aggregate, aggregate_traced, AggregateOptions, AggregateTrace, NeighborSpace,
    SemanticAggregationParams, SlotState,
};
pub use attention::{
    point_transformer_block, vector_self_attention, vector_self_attention_with_weights,
    PointTransformerBlockParams, VectorAttentionParams,
};
pub use gru::{gru_cell, GruParams};
pub use linear::{Linear, LinearNormGelu, Mlp2};

/// Layer-normalization epsilon used everywhere in the network.
pub const LAYERNORM_EPS: f64 = 1e-5;
