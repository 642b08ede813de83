use crate::error::Result;
use crate::params::{Ctx, Init, ParamId, ParamStore};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::TensorId;

use super::LAYERNORM_EPS;

/// Affine map [*, in] -> [*, out] with zero-initialized bias.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut Rng,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        w_init: Init,
    ) -> Self {
        let w = store.add(format!("{name}.w"), &[in_dim, out_dim], w_init, rng);
        let b = store.add(format!("{name}.b"), &[out_dim], Init::Zero, rng);
        Linear { w, b }
    }

    pub fn fan_in<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut Rng,
        name: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Self {
        Self::new(store, rng, name, in_dim, out_dim, Init::FanIn { fan_in: in_dim })
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<T>, x: TensorId) -> Result<TensorId> {
        let w = ctx.param(self.w)?;
        let b = ctx.param(self.b)?;
        let h = ctx.tape.matmul(x, w)?;
        ctx.tape.add_row(h, b)
    }
}

/// Two linear layers with a GELU between.
#[derive(Debug, Clone)]
pub struct Mlp2 {
    pub l1: Linear,
    pub l2: Linear,
}

impl Mlp2 {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut Rng,
        name: &str,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
        l2_init: Init,
    ) -> Self {
        let l1 = Linear::fan_in(store, rng, &format!("{name}.0"), in_dim, hidden);
        let l2 = Linear::new(store, rng, &format!("{name}.1"), hidden, out_dim, l2_init);
        Mlp2 { l1, l2 }
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<T>, x: TensorId) -> Result<TensorId> {
        let h = self.l1.forward(ctx, x)?;
        let h = ctx.tape.gelu(h);
        self.l2.forward(ctx, h)
    }
}

/// Linear -> LayerNorm -> GELU projection, the adapter building block.
#[derive(Debug, Clone)]
pub struct LinearNormGelu {
    pub lin: Linear,
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LinearNormGelu {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut Rng,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        lin_init: Init,
    ) -> Self {
        let lin = Linear::new(store, rng, &format!("{name}.lin"), in_dim, out_dim, lin_init);
        let gain = store.add(format!("{name}.ln.gain"), &[out_dim], Init::One, rng);
        let bias = store.add(format!("{name}.ln.bias"), &[out_dim], Init::Zero, rng);
        LinearNormGelu { lin, gain, bias }
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<T>, x: TensorId) -> Result<TensorId> {
        let h = self.lin.forward(ctx, x)?;
        let gain = ctx.param(self.gain)?;
        let bias = ctx.param(self.bias)?;
        let h = ctx.tape.layernorm(h, gain, bias, LAYERNORM_EPS)?;
        Ok(ctx.tape.gelu(h))
    }
}
