use crate::error::{Error, Result};
use crate::params::{Ctx, Init, ParamId, ParamStore};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::TensorId;

/// Gated recurrent unit over row-wise states: update gate z, reset gate r,
/// candidate h, output (1-z) * state + z * candidate.
#[derive(Debug, Clone)]
pub struct GruParams {
    pub w_z: ParamId,
    pub u_z: ParamId,
    pub b_z: ParamId,
    pub w_r: ParamId,
    pub u_r: ParamId,
    pub b_r: ParamId,
    pub w_h: ParamId,
    pub u_h: ParamId,
    pub b_h: ParamId,
    pub dim: usize,
}

impl GruParams {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut Rng,
        name: &str,
        dim: usize,
    ) -> Self {
        let fan = Init::FanIn { fan_in: dim };
        let mat = |suffix: &str, store: &mut ParamStore<T>, rng: &mut Rng| {
            store.add(format!("{name}.{suffix}"), &[dim, dim], fan, rng)
        };
        let w_z = mat("w_z", store, rng);
        let u_z = mat("u_z", store, rng);
        let b_z = store.add(format!("{name}.b_z"), &[dim], Init::Zero, rng);
        let w_r = mat("w_r", store, rng);
        let u_r = mat("u_r", store, rng);
        let b_r = store.add(format!("{name}.b_r"), &[dim], Init::Zero, rng);
        let w_h = mat("w_h", store, rng);
        let u_h = mat("u_h", store, rng);
        let b_h = store.add(format!("{name}.b_h"), &[dim], Init::Zero, rng);
        GruParams {
            w_z,
            u_z,
            b_z,
            w_r,
            u_r,
            b_r,
            w_h,
            u_h,
            b_h,
            dim,
        }
    }
}

/// One GRU update: state and input are both [K, D].
pub fn gru_cell<T: Scalar>(
    ctx: &mut Ctx<T>,
    params: &GruParams,
    state: TensorId,
    input: TensorId,
) -> Result<TensorId> {
    let (ss, is) = (ctx.tape.shape(state).to_vec(), ctx.tape.shape(input).to_vec());
    if ss != is || ss.len() != 2 || ss[1] != params.dim {
        return Err(Error::Shape {
            op: "gru_cell",
            lhs: ss,
            rhs: is,
        });
    }

    let gate = |ctx: &mut Ctx<T>, w, u, b| -> Result<TensorId> {
        let wt = ctx.param(w)?;
        let ut = ctx.param(u)?;
        let bt = ctx.param(b)?;
        let a = ctx.tape.matmul(input, wt)?;
        let c = ctx.tape.matmul(state, ut)?;
        let s = ctx.tape.add(a, c)?;
        ctx.tape.add_row(s, bt)
    };

    let z_pre = gate(ctx, params.w_z, params.u_z, params.b_z)?;
    let z = ctx.tape.sigmoid(z_pre);
    let r_pre = gate(ctx, params.w_r, params.u_r, params.b_r)?;
    let r = ctx.tape.sigmoid(r_pre);

    // candidate: tanh(input W_h + (r * state) U_h + b_h)
    let rs = ctx.tape.mul(r, state)?;
    let wh = ctx.param(params.w_h)?;
    let uh = ctx.param(params.u_h)?;
    let bh = ctx.param(params.b_h)?;
    let a = ctx.tape.matmul(input, wh)?;
    let c = ctx.tape.matmul(rs, uh)?;
    let pre = ctx.tape.add(a, c)?;
    let pre = ctx.tape.add_row(pre, bh)?;
    let cand = ctx.tape.tanh(pre);

    // (1 - z) * state + z * candidate
    let neg_z = ctx.tape.mul_scalar(z, -1.0);
    let one_minus_z = ctx.tape.add_scalar(neg_z, 1.0);
    let keep = ctx.tape.mul(one_minus_z, state)?;
    let take = ctx.tape.mul(z, cand)?;
    ctx.tape.add(keep, take)
}
