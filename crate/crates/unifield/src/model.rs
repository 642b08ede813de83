//! UNet-style assembly: encoder stages of attention + flow-conditioned
//! adapters with semantic-aggregation downsampling, a decoder that restores
//! resolution by inverse-distance interpolation with skip connections, and a
//! linear pressure head. One shared backbone serves every domain; only the
//! adapter banks are domain-specific.

use serde::{Deserialize, Serialize};

use crate::data::DomainRegistry;
use crate::error::{Error, Result};
use crate::geometry::{knn, knn_interpolate, NeighborIndex, PointSet, SelfMode};
use crate::nn::{
    aggregate, fca_forward, point_transformer_block, AdapterBank, AggregateOptions,
    NeighborSpace, PointTransformerBlockParams, SemanticAggregationParams,
};
use crate::nn::Linear;
use crate::params::{Ctx, Frame, ParamId, ParamStore};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{Tape, TensorId};

/// Neighbor count for decoder feature interpolation.
pub const INTERP_K: usize = 3;

/// Named (stages, base_channels) presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalePreset {
    Tiny,
    Small,
    Base,
    Large,
}

impl ScalePreset {
    pub fn dims(self) -> (usize, usize) {
        match self {
            ScalePreset::Tiny => (2, 8),
            ScalePreset::Small => (3, 16),
            ScalePreset::Base => (4, 32),
            ScalePreset::Large => (4, 64),
        }
    }
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Applies (stages, base_channels) on resolve; explicit fields below are
    /// then ignored for those two values.
    pub preset: Option<ScalePreset>,
    pub stages: usize,
    pub base_channels: usize,
    /// Attention neighborhood size, clamped per level to the point count.
    pub k: usize,
    /// Fraction of points kept by each aggregation step.
    pub downsample_ratio: f64,
    pub ffn_ratio: usize,
    pub slot_iterations: usize,
    /// Neighbors gathered per aggregation slot; defaults to `k`.
    pub slot_k: Option<usize>,
    pub slot_neighbor_space: NeighborSpace,
    /// Optional layer normalization inside attention blocks; the bare
    /// residual form is the default.
    pub block_norm: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            preset: None,
            stages: 4,
            base_channels: 32,
            k: 16,
            downsample_ratio: 0.25,
            ffn_ratio: 4,
            slot_iterations: 1,
            slot_k: None,
            slot_neighbor_space: NeighborSpace::Coordinate,
            block_norm: false,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn tiny(seed: u64) -> Self {
        ModelConfig {
            preset: Some(ScalePreset::Tiny),
            k: 8,
            seed,
            ..Default::default()
        }
        .resolve()
    }

    /// Fold the preset into explicit fields.
    pub fn resolve(mut self) -> Self {
        if let Some(p) = self.preset {
            let (stages, base) = p.dims();
            self.stages = stages;
            self.base_channels = base;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages == 0 {
            return Err(Error::config("stages must be at least 1"));
        }
        if self.base_channels == 0 {
            return Err(Error::config("base_channels must be positive"));
        }
        if self.k == 0 {
            return Err(Error::config("neighbor count k must be positive"));
        }
        if !(self.downsample_ratio > 0.0 && self.downsample_ratio <= 1.0) {
            return Err(Error::config(format!(
                "downsample_ratio must lie in (0, 1], got {}",
                self.downsample_ratio
            )));
        }
        if self.ffn_ratio == 0 {
            return Err(Error::config("ffn_ratio must be positive"));
        }
        if self.slot_iterations == 0 {
            return Err(Error::config("slot_iterations must be at least 1"));
        }
        Ok(())
    }

    pub fn width(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Point counts per level for an input of n points: strictly decreasing
    /// under the ratio schedule until the floor of one point.
    pub fn level_counts(&self, n: usize) -> Vec<usize> {
        let mut counts = vec![n];
        for _ in 1..self.stages {
            let prev = *counts.last().unwrap();
            let next = ((prev as f64 * self.downsample_ratio).ceil() as usize).clamp(1, prev);
            counts.push(next);
        }
        counts
    }
}

#[derive(Debug)]
struct EncoderLevel {
    block: PointTransformerBlockParams,
    fca: AdapterBank,
    /// Present on every level but the last.
    down: Option<DownLevel>,
}

#[derive(Debug)]
struct DownLevel {
    aggregation: SemanticAggregationParams,
    lift: Linear,
}

#[derive(Debug)]
struct DecoderLevel {
    merge: Linear,
    block: PointTransformerBlockParams,
    fca: AdapterBank,
}

#[derive(Debug)]
struct Architecture {
    embed: Linear,
    encoder: Vec<EncoderLevel>,
    decoder: Vec<DecoderLevel>,
    head: Linear,
}

/// The assembled multi-domain model.
#[derive(Debug)]
pub struct UniFieldModel<T: Scalar> {
    pub config: ModelConfig,
    pub registry: DomainRegistry,
    pub store: ParamStore<T>,
    arch: Architecture,
}

/// One recorded forward pass, ready for a loss head and backward.
pub struct ForwardPass<T: Scalar> {
    pub tape: Tape<T>,
    pub frame: Frame,
    /// Predictions with shape `[N]`.
    pub output: TensorId,
}

impl<T: Scalar> UniFieldModel<T> {
    /// Deterministically initialize a model from the config seed.
    pub fn build(config: ModelConfig, registry: DomainRegistry) -> Result<Self> {
        let config = config.resolve();
        config.validate()?;
        let flow_dims = registry.flow_dims();
        let mut store = ParamStore::new();
        let mut rng = Rng::new(config.seed).derive(0x0D31);

        let embed = Linear::fan_in(&mut store, &mut rng, "embed", 3, config.base_channels);

        let mut encoder = Vec::new();
        for level in 0..config.stages {
            let width = config.width(level);
            let block = PointTransformerBlockParams::new(
                &mut store,
                &mut rng,
                &format!("enc{level}.block"),
                width,
                config.ffn_ratio,
                config.block_norm,
            );
            let fca = AdapterBank::new(
                &mut store,
                &mut rng,
                &format!("enc{level}.fca"),
                &flow_dims,
                width,
            );
            let down = (level + 1 < config.stages).then(|| DownLevel {
                aggregation: SemanticAggregationParams::new(
                    &mut store,
                    &mut rng,
                    &format!("enc{level}.agg"),
                    width,
                    config.ffn_ratio,
                ),
                lift: Linear::fan_in(
                    &mut store,
                    &mut rng,
                    &format!("enc{level}.lift"),
                    width,
                    config.width(level + 1),
                ),
            });
            encoder.push(EncoderLevel { block, fca, down });
        }

        let mut decoder = Vec::new();
        for level in 0..config.stages.saturating_sub(1) {
            let width = config.width(level);
            let merge = Linear::fan_in(
                &mut store,
                &mut rng,
                &format!("dec{level}.merge"),
                config.width(level + 1) + width,
                width,
            );
            let block = PointTransformerBlockParams::new(
                &mut store,
                &mut rng,
                &format!("dec{level}.block"),
                width,
                config.ffn_ratio,
                config.block_norm,
            );
            let fca = AdapterBank::new(
                &mut store,
                &mut rng,
                &format!("dec{level}.fca"),
                &flow_dims,
                width,
            );
            decoder.push(DecoderLevel { merge, block, fca });
        }

        let head = Linear::fan_in(&mut store, &mut rng, "head", config.base_channels, 1);

        Ok(UniFieldModel {
            config,
            registry,
            store,
            arch: Architecture {
                embed,
                encoder,
                decoder,
                head,
            },
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.store.total_elements()
    }

    /// Fit per-domain flow standardization constants on training samples.
    pub fn fit_flow_standardization(&mut self, samples: &[crate::data::Sample]) {
        self.registry.fit_flow_stats(samples);
    }

    /// All parameter ids belonging to one domain's adapters, across levels.
    pub fn adapter_param_ids(&self, domain: usize) -> Result<Vec<ParamId>> {
        if domain >= self.registry.len() {
            return Err(Error::Routing(domain));
        }
        let mut out = Vec::new();
        let banks = self
            .arch
            .encoder
            .iter()
            .map(|l| &l.fca)
            .chain(self.arch.decoder.iter().map(|l| &l.fca));
        for bank in banks {
            let a = &bank.adapters[domain];
            out.extend([
                a.cond.l1.w, a.cond.l1.b, a.cond.l2.w, a.cond.l2.b,
                a.proj_in.lin.w, a.proj_in.lin.b, a.proj_in.gain, a.proj_in.bias,
                a.proj_out.lin.w, a.proj_out.lin.b, a.proj_out.gain, a.proj_out.bias,
            ]);
        }
        Ok(out)
    }

    /// Parameter ids shared by every domain (everything except adapters).
    pub fn backbone_param_ids(&self) -> Vec<ParamId> {
        let mut adapter: std::collections::HashSet<ParamId> = std::collections::HashSet::new();
        for d in 0..self.registry.len() {
            adapter.extend(self.adapter_param_ids(d).unwrap());
        }
        self.store
            .iter()
            .map(|(id, _)| id)
            .filter(|id| !adapter.contains(id))
            .collect()
    }

    pub fn fca_banks_per_site(&self) -> Vec<usize> {
        self.arch
            .encoder
            .iter()
            .map(|l| l.fca.adapters.len())
            .chain(self.arch.decoder.iter().map(|l| l.fca.adapters.len()))
            .collect()
    }

    fn check_inputs(&self, points: &PointSet, domain: usize, flow: &[f64]) -> Result<()> {
        if domain >= self.registry.len() {
            return Err(Error::Routing(domain));
        }
        self.registry.check_flow(domain, flow)?;
        if points.len() < self.config.k {
            return Err(Error::contract(format!(
                "forward needs at least k={} points, got {}",
                self.config.k,
                points.len()
            )));
        }
        Ok(())
    }

    /// Record a full forward pass on a fresh tape.
    pub fn forward_pass(
        &self,
        points: &PointSet,
        domain: usize,
        flow: &[f64],
    ) -> Result<ForwardPass<T>> {
        self.check_inputs(points, domain, flow)?;
        let cond_std = self.registry.standardize_flow(domain, flow)?;

        let mut tape: Tape<T> = Tape::new();
        let mut frame = Frame::new(&self.store);
        let output = {
            let mut ctx = Ctx::new(&mut tape, &self.store, &mut frame);
            self.forward_impl(&mut ctx, points, domain, &cond_std)?
        };
        Ok(ForwardPass {
            tape,
            frame,
            output,
        })
    }

    fn forward_impl(
        &self,
        ctx: &mut Ctx<T>,
        points: &PointSet,
        domain: usize,
        cond_std: &[f64],
    ) -> Result<TensorId> {
        let cfg = &self.config;
        let n = points.len();
        let cond = ctx.tape.constant(
            cond_std.iter().map(|&v| T::from_f64(v)).collect(),
            &[1, cond_std.len()],
        )?;

        let coords: Vec<T> = points.coords().iter().map(|&v| T::from_f64(v)).collect();
        let coords = ctx.tape.constant(coords, &[n, 3])?;
        let mut x = self.arch.embed.forward(ctx, coords)?;

        // encoder
        let mut positions: Vec<PointSet> = vec![points.clone()];
        let mut neighbor_tables: Vec<NeighborIndex> = Vec::new();
        let mut skips: Vec<TensorId> = Vec::new();
        for (level, enc) in self.arch.encoder.iter().enumerate() {
            let pos = &positions[level];
            let k_level = cfg.k.min(pos.len());
            let nbr = knn(pos, pos, k_level, SelfMode::Include)?;
            x = point_transformer_block(ctx, &enc.block, x, pos, &nbr)?;
            x = fca_forward(ctx, enc.fca.route(domain)?, x, cond)?;
            neighbor_tables.push(nbr);
            skips.push(x);

            if let Some(down) = &enc.down {
                let target = cfg.level_counts(n)[level + 1];
                let slot_k = cfg.slot_k.unwrap_or(cfg.k).min(pos.len());
                let slots = aggregate(
                    ctx,
                    &down.aggregation,
                    x,
                    pos,
                    target,
                    AggregateOptions {
                        k: slot_k,
                        iterations: cfg.slot_iterations,
                        neighbor_space: cfg.slot_neighbor_space,
                    },
                )?;
                x = down.lift.forward(ctx, slots.features)?;
                positions.push(slots.positions);
            }
        }

        // decoder
        for level in (0..self.arch.decoder.len()).rev() {
            let dec = &self.arch.decoder[level];
            let fine = &positions[level];
            let coarse = &positions[level + 1];
            let up = knn_interpolate(ctx.tape, x, coarse, fine, INTERP_K)?;
            let merged = ctx.tape.concat(up, skips[level], 1)?;
            x = dec.merge.forward(ctx, merged)?;
            x = point_transformer_block(ctx, &dec.block, x, fine, &neighbor_tables[level])?;
            x = fca_forward(ctx, dec.fca.route(domain)?, x, cond)?;
        }

        let y = self.arch.head.forward(ctx, x)?; // [N, 1]
        ctx.tape.reshape(y, &[n])
    }

    /// Point-wise predictions as f64, regardless of the working precision.
    pub fn predict(&self, points: &PointSet, domain: usize, flow: &[f64]) -> Result<Vec<f64>> {
        let pass = self.forward_pass(points, domain, flow)?;
        Ok(pass.tape.value(pass.output).iter().map(|v| v.to_f64()).collect())
    }

    /// Chunked inference: a seeded random permutation splits the points into
    /// groups of `chunk`; each group runs a separate forward pass and the
    /// outputs scatter back to input order. With chunk >= N this is exactly
    /// the plain forward pass.
    pub fn predict_chunked(
        &self,
        points: &PointSet,
        domain: usize,
        flow: &[f64],
        chunk: usize,
        seed: u64,
    ) -> Result<Vec<f64>> {
        if chunk < self.config.k {
            return Err(Error::contract(format!(
                "chunk {chunk} must be at least k={}",
                self.config.k
            )));
        }
        let n = points.len();
        if chunk >= n {
            return self.predict(points, domain, flow);
        }

        let sizes = chunk_plan(n, chunk, self.config.k);
        let mut perm: Vec<usize> = (0..n).collect();
        Rng::new(seed).derive(0xC40E).shuffle(&mut perm);

        let mut out = vec![0.0f64; n];
        let mut start = 0;
        for &size in &sizes {
            let group = &perm[start..start + size];
            let gpoints = points.select(group);
            let gpred = self.predict(&gpoints, domain, flow)?;
            for (&orig, &v) in group.iter().zip(&gpred) {
                out[orig] = v;
            }
            start += size;
        }
        Ok(out)
    }
}

/// Group sizes for chunked inference: full chunks, with a remainder smaller
/// than k folded into the final group so every group satisfies the forward
/// contract.
pub fn chunk_plan(n: usize, chunk: usize, k: usize) -> Vec<usize> {
    if chunk >= n {
        return vec![n];
    }
    let full = n / chunk;
    let rem = n % chunk;
    let mut sizes = vec![chunk; full];
    if rem >= k {
        sizes.push(rem);
    } else if rem > 0 {
        *sizes.last_mut().unwrap() += rem;
    }
    sizes
}
