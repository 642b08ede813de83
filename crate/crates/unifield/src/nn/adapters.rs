//! Flow-conditioned adapters: a per-domain residual module that modulates
//! point features with a per-channel scale and bias generated from the
//! domain's flow-condition vector. A bank holds one adapter per registered
//! domain; routing selects exactly one adapter per sample, so other domains'
//! adapters see neither the sample nor its gradient.

use crate::error::{Error, Result};
use crate::params::{Ctx, Init, ParamStore};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::TensorId;

use super::linear::{LinearNormGelu, Mlp2};

/// Minimum hidden width of the condition MLP; small flow vectors still get
/// some mixing capacity.
pub const COND_HIDDEN_MIN: usize = 16;

/// One domain's adapter at one network level.
///
/// The condition MLP maps the flow vector to per-channel (scale, bias); the
/// input/output projections are Linear -> LayerNorm -> GELU. The output
/// projection's linear layer starts at zero, so a fresh adapter is the
/// identity and the scale is parameterized as 1 + raw.
#[derive(Debug, Clone)]
pub struct AdapterParams {
    pub cond: Mlp2,
    pub proj_in: LinearNormGelu,
    pub proj_out: LinearNormGelu,
    pub flow_dim: usize,
    pub width: usize,
}

impl AdapterParams {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut Rng,
        name: &str,
        flow_dim: usize,
        width: usize,
    ) -> Self {
        let hidden = (4 * flow_dim).max(COND_HIDDEN_MIN);
        // raw (scale, bias) outputs start at zero => scale 1, bias 0
        let cond = Mlp2::new(
            store,
            rng,
            &format!("{name}.cond"),
            flow_dim,
            hidden,
            2 * width,
            Init::Zero,
        );
        let proj_in = LinearNormGelu::new(
            store,
            rng,
            &format!("{name}.in"),
            width,
            width,
            Init::FanIn { fan_in: width },
        );
        let proj_out = LinearNormGelu::new(
            store,
            rng,
            &format!("{name}.out"),
            width,
            width,
            Init::Zero,
        );
        AdapterParams {
            cond,
            proj_in,
            proj_out,
            flow_dim,
            width,
        }
    }
}

/// x + P_out((P_in(x) + bias) * scale), with (scale, bias) from the flow
/// vector. `cond` is a [1, flow_dim] tensor of (standardized) conditions.
pub fn fca_forward<T: Scalar>(
    ctx: &mut Ctx<T>,
    params: &AdapterParams,
    x: TensorId,
    cond: TensorId,
) -> Result<TensorId> {
    let cshape = ctx.tape.shape(cond).to_vec();
    if cshape != [1, params.flow_dim] {
        return Err(Error::DomainSchema {
            domain: "<adapter>".into(),
            expected: params.flow_dim,
            got: cshape.iter().product(),
        });
    }
    let d = params.width;
    let h = params.cond.forward(ctx, cond)?; // [1, 2D]
    let scale_raw = ctx.tape.slice_cols(h, 0, d)?;
    let scale = ctx.tape.add_scalar(scale_raw, 1.0);
    let bias = ctx.tape.slice_cols(h, d, d)?;

    let xi = params.proj_in.forward(ctx, x)?;
    let xi = ctx.tape.add_row(xi, bias)?;
    let xi = ctx.tape.mul_row(xi, scale)?;
    let y = params.proj_out.forward(ctx, xi)?;
    ctx.tape.add(x, y)
}

/// One adapter per registered domain, in registry order.
#[derive(Debug, Clone)]
pub struct AdapterBank {
    pub adapters: Vec<AdapterParams>,
}

impl AdapterBank {
    /// `flow_dims[s]` is the flow dimensionality of domain s.
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut Rng,
        name: &str,
        flow_dims: &[usize],
        width: usize,
    ) -> Self {
        let adapters = flow_dims
            .iter()
            .enumerate()
            .map(|(s, &fd)| AdapterParams::new(store, rng, &format!("{name}.d{s}"), fd, width))
            .collect();
        AdapterBank { adapters }
    }

    pub fn route(&self, domain: usize) -> Result<&AdapterParams> {
        self.adapters.get(domain).ok_or(Error::Routing(domain))
    }
}

/// Route each sample of a mixed batch through its own domain's adapter.
/// Equivalent to calling [`fca_forward`] per sample; other adapters receive
/// no signal at all.
pub fn routed_fca<T: Scalar>(
    ctx: &mut Ctx<T>,
    bank: &AdapterBank,
    xs: &[TensorId],
    conds: &[TensorId],
    domains: &[usize],
) -> Result<Vec<TensorId>> {
    if xs.len() != conds.len() || xs.len() != domains.len() {
        return Err(Error::contract(format!(
            "routed batch lengths disagree: {} features, {} conditions, {} domains",
            xs.len(),
            conds.len(),
            domains.len()
        )));
    }
    xs.iter()
        .zip(conds)
        .zip(domains)
        .map(|((&x, &c), &s)| fca_forward(ctx, bank.route(s)?, x, c))
        .collect()
}
