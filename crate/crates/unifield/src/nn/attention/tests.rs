use super::*;
use crate::geometry::{knn, SelfMode};
use crate::params::Frame;
use crate::rng::Rng;
use crate::tensor::Tape;

fn random_cloud(rng: &mut Rng, n: usize) -> PointSet {
    PointSet::new((0..3 * n).map(|_| rng.uniform_in(-1.0, 1.0)).collect()).unwrap()
}

/// Overwrite every parameter of the attention stack with values from a
/// dedicated stream, so the oracle and the tape read identical numbers.
fn randomize_params(store: &mut ParamStore<f64>, seed: u64) {
    let mut rng = Rng::new(seed);
    let ids: Vec<ParamId> = store.iter().map(|(id, _)| id).collect();
    for id in ids {
        let n = store.get(id).value.len();
        let vals: Vec<f64> = (0..n).map(|_| rng.uniform_in(-0.8, 0.8)).collect();
        store.set_value(id, vals).unwrap();
    }
}

// ---- plain-f64 straight-line reimplementation, no tape involved ----

fn o_linear(x: &[f64], w: &[f64], b: &[f64], din: usize, dout: usize) -> Vec<f64> {
    (0..dout)
        .map(|c| {
            let mut acc = b[c];
            for j in 0..din {
                acc += x[j] * w[j * dout + c];
            }
            acc
        })
        .collect()
}

fn o_gelu(v: &mut [f64]) {
    for x in v.iter_mut() {
        *x = *x * 0.5 * (1.0 + libm::erf(*x * std::f64::consts::FRAC_1_SQRT_2));
    }
}

fn o_mlp2(
    store: &ParamStore<f64>,
    m: &Mlp2,
    x: &[f64],
    din: usize,
    hidden: usize,
    dout: usize,
) -> Vec<f64> {
    let mut h = o_linear(
        x,
        &store.get(m.l1.w).value,
        &store.get(m.l1.b).value,
        din,
        hidden,
    );
    o_gelu(&mut h);
    o_linear(&h, &store.get(m.l2.w).value, &store.get(m.l2.b).value, hidden, dout)
}

/// Straight-line evaluation of one vector-attention layer.
fn oracle_attention(
    store: &ParamStore<f64>,
    params: &VectorAttentionParams,
    x: &[f64],
    points: &PointSet,
    nbr: &NeighborIndex,
    d: usize,
) -> Vec<f64> {
    let n = nbr.n_query();
    let k = nbr.k();
    let lin = |l: &Linear, row: &[f64]| {
        o_linear(row, &store.get(l.w).value, &store.get(l.b).value, d, d)
    };
    let mut out = vec![0.0; n * d];
    for i in 0..n {
        let xi = &x[i * d..(i + 1) * d];
        let q = lin(&params.query, xi);
        let mut logits = vec![vec![0.0; d]; k];
        let mut vals = vec![vec![0.0; d]; k];
        for (jj, &j) in nbr.row(i).iter().enumerate() {
            let xj = &x[j * d..(j + 1) * d];
            let kj = lin(&params.key, xj);
            let vj = lin(&params.value, xj);
            let (pi, pj) = (points.point(i), points.point(j));
            let diff = [pi[0] - pj[0], pi[1] - pj[1], pi[2] - pj[2]];
            let delta = o_mlp2(store, &params.pos_mlp, &diff, 3, d, d);
            for c in 0..d {
                vals[jj][c] = vj[c] + delta[c];
            }
            let pre: Vec<f64> = (0..d).map(|c| q[c] - kj[c] + delta[c]).collect();
            logits[jj] = o_mlp2(store, &params.attn_mlp, &pre, d, d, d);
        }
        for c in 0..d {
            let mx = logits.iter().map(|l| l[c]).fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l[c] - mx).exp()).collect();
            let total: f64 = exps.iter().sum();
            for jj in 0..k {
                out[i * d + c] += exps[jj] / total * vals[jj][c];
            }
        }
    }
    out
}

fn build_attention(seed: u64, d: usize) -> (ParamStore<f64>, VectorAttentionParams) {
    let mut rng = Rng::new(seed);
    let mut store = ParamStore::new();
    let params = VectorAttentionParams::new(&mut store, &mut rng, "attn", d);
    (store, params)
}

fn build_block(seed: u64, d: usize) -> (ParamStore<f64>, PointTransformerBlockParams) {
    let mut rng = Rng::new(seed);
    let mut store = ParamStore::new();
    let params = PointTransformerBlockParams::new(&mut store, &mut rng, "block", d, 4, false);
    (store, params)
}

#[test]
fn matches_straight_line_oracle() {
    let (mut store, params) = build_attention(10, 2);
    randomize_params(&mut store, 77);
    let mut rng = Rng::new(4);
    let points = random_cloud(&mut rng, 3);
    let nbr = knn(&points, &points, 2, SelfMode::Include).unwrap();
    let x: Vec<f64> = (0..6).map(|_| rng.normal()).collect();

    let mut tape = Tape::new();
    let mut frame = Frame::new(&store);
    let mut ctx = Ctx::new(&mut tape, &store, &mut frame);
    let xt = ctx.tape.constant(x.clone(), &[3, 2]).unwrap();
    let y = vector_self_attention(&mut ctx, &params, xt, &points, &nbr).unwrap();

    let expect = oracle_attention(&store, &params, &x, &points, &nbr, 2);
    for (a, b) in tape.value(y).iter().zip(&expect) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn single_neighbor_collapses_to_value_plus_self_offset() {
    let (mut store, params) = build_attention(11, 3);
    randomize_params(&mut store, 5);
    let mut rng = Rng::new(6);
    let points = random_cloud(&mut rng, 4);
    let nbr = knn(&points, &points, 1, SelfMode::Include).unwrap();
    let x: Vec<f64> = (0..12).map(|_| rng.normal()).collect();

    let mut tape = Tape::new();
    let mut frame = Frame::new(&store);
    let mut ctx = Ctx::new(&mut tape, &store, &mut frame);
    let xt = ctx.tape.constant(x.clone(), &[4, 3]).unwrap();
    let y = vector_self_attention(&mut ctx, &params, xt, &points, &nbr).unwrap();

    // softmax over one neighbor is 1, so y_i = V(x_i) + pos_mlp(0)
    let p0 = o_mlp2(&store, &params.pos_mlp, &[0.0, 0.0, 0.0], 3, 3, 3);
    for i in 0..4 {
        let vi = o_linear(
            &x[i * 3..(i + 1) * 3],
            &store.get(params.value.w).value,
            &store.get(params.value.b).value,
            3,
            3,
        );
        for c in 0..3 {
            let expect = vi[c] + p0[c];
            let got = tape.value(y)[i * 3 + c];
            assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
        }
    }
}

#[test]
fn attention_weights_sum_to_one_per_channel() {
    let (mut store, params) = build_attention(12, 4);
    randomize_params(&mut store, 9);
    let mut rng = Rng::new(13);
    let points = random_cloud(&mut rng, 10);
    let nbr = knn(&points, &points, 4, SelfMode::Include).unwrap();
    let x: Vec<f64> = (0..40).map(|_| rng.normal()).collect();

    let mut tape = Tape::new();
    let mut frame = Frame::new(&store);
    let mut ctx = Ctx::new(&mut tape, &store, &mut frame);
    let xt = ctx.tape.constant(x, &[10, 4]).unwrap();
    let (_, w) = vector_self_attention_with_weights(&mut ctx, &params, xt, &points, &nbr).unwrap();
    let sums = tape.sum_axis(w, 1).unwrap();
    for &s in tape.value(sums) {
        assert!((s - 1.0).abs() < 1e-6);
    }
}

#[test]
fn block_is_identity_with_zeroed_branch_outputs() {
    let (mut store, params) = build_block(14, 3);
    randomize_params(&mut store, 21);
    let d = 3;
    // zero V, the position MLP output layer, and the FFN second layer
    store.set_value(params.attn.value.w, vec![0.0; d * d]).unwrap();
    store.set_value(params.attn.value.b, vec![0.0; d]).unwrap();
    store
        .set_value(params.attn.pos_mlp.l2.w, vec![0.0; d * d])
        .unwrap();
    store.set_value(params.attn.pos_mlp.l2.b, vec![0.0; d]).unwrap();
    store
        .set_value(params.ffn.l2.w, vec![0.0; d * 4 * d])
        .unwrap();
    store.set_value(params.ffn.l2.b, vec![0.0; d]).unwrap();

    let mut rng = Rng::new(30);
    let points = random_cloud(&mut rng, 6);
    let nbr = knn(&points, &points, 3, SelfMode::Include).unwrap();
    let x: Vec<f64> = (0..18).map(|_| rng.normal()).collect();

    let mut tape = Tape::new();
    let mut frame = Frame::new(&store);
    let mut ctx = Ctx::new(&mut tape, &store, &mut frame);
    let xt = ctx.tape.constant(x.clone(), &[6, 3]).unwrap();
    let y = point_transformer_block(&mut ctx, &params, xt, &points, &nbr).unwrap();
    assert_eq!(tape.value(y), &x[..]);
}

#[test]
fn block_permutation_equivariance_f32() {
    let mut rng = Rng::new(15);
    let mut store: ParamStore<f32> = ParamStore::new();
    let params = PointTransformerBlockParams::new(&mut store, &mut rng, "b", 4, 4, false);
    let n = 12;
    let points = random_cloud(&mut rng, n);
    let x: Vec<f32> = (0..n * 4).map(|_| rng.normal() as f32).collect();

    let forward = |pts: &PointSet, feats: Vec<f32>| -> Vec<f32> {
        let nbr = knn(pts, pts, 4, SelfMode::Include).unwrap();
        let mut tape = Tape::new();
        let mut frame = Frame::new(&store);
        let mut ctx = Ctx::new(&mut tape, &store, &mut frame);
        let xt = ctx.tape.constant(feats, &[n, 4]).unwrap();
        let y = point_transformer_block(&mut ctx, &params, xt, pts, &nbr).unwrap();
        tape.value(y).to_vec()
    };

    let base = forward(&points, x.clone());

    let mut perm: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut perm);
    let ppoints = points.permute(&perm);
    let px: Vec<f32> = perm
        .iter()
        .flat_map(|&i| x[i * 4..(i + 1) * 4].to_vec())
        .collect();
    let permuted = forward(&ppoints, px);

    for (new_row, &old_row) in perm.iter().enumerate() {
        for c in 0..4 {
            let a = permuted[new_row * 4 + c];
            let b = base[old_row * 4 + c];
            assert!((a - b).abs() < 1e-6, "row {old_row} ch {c}: {a} vs {b}");
        }
    }
}

#[test]
fn zeroed_pos_encoder_makes_block_rigid_motion_invariant() {
    let (mut store, params) = build_block(16, 3);
    randomize_params(&mut store, 40);
    let d = 3;
    store
        .set_value(params.attn.pos_mlp.l2.w, vec![0.0; d * d])
        .unwrap();
    store.set_value(params.attn.pos_mlp.l2.b, vec![0.0; d]).unwrap();

    let mut rng = Rng::new(41);
    let n = 8;
    let points = random_cloud(&mut rng, n);
    let x: Vec<f64> = (0..n * d).map(|_| rng.normal()).collect();

    // rigid motion: rotation about z by 0.7 rad plus a translation
    let (s, c) = (0.7f64.sin(), 0.7f64.cos());
    let moved = PointSet::new(
        (0..n)
            .flat_map(|i| {
                let p = points.point(i);
                vec![c * p[0] - s * p[1] + 5.0, s * p[0] + c * p[1] - 2.0, p[2] + 0.5]
            })
            .collect(),
    )
    .unwrap();

    let forward = |pts: &PointSet| -> Vec<f64> {
        let nbr = knn(pts, pts, 3, SelfMode::Include).unwrap();
        let mut tape = Tape::new();
        let mut frame = Frame::new(&store);
        let mut ctx = Ctx::new(&mut tape, &store, &mut frame);
        let xt = ctx.tape.constant(x.clone(), &[n, d]).unwrap();
        let y = point_transformer_block(&mut ctx, &params, xt, pts, &nbr).unwrap();
        tape.value(y).to_vec()
    };

    let a = forward(&points);
    let b = forward(&moved);
    for (va, vb) in a.iter().zip(&b) {
        assert!((va - vb).abs() < 1e-9, "{va} vs {vb}");
    }
}

#[test]
fn block_gradient_matches_finite_differences() {
    let (mut store, params) = build_block(17, 2);
    randomize_params(&mut store, 50);
    let mut rng = Rng::new(51);
    let n = 4;
    let points = random_cloud(&mut rng, n);
    let nbr = knn(&points, &points, 2, SelfMode::Include).unwrap();
    let x: Vec<f64> = (0..n * 2).map(|_| rng.normal()).collect();

    let eval = |feats: &[f64], want_grad: bool| -> (f64, Option<Vec<f64>>) {
        let mut tape = Tape::new();
        let mut frame = Frame::new(&store);
        let mut ctx = Ctx::new(&mut tape, &store, &mut frame);
        let xt = ctx
            .tape
            .leaf(std::sync::Arc::new(feats.to_vec()), &[n, 2], true)
            .unwrap();
        let y = point_transformer_block(&mut ctx, &params, xt, &points, &nbr).unwrap();
        let loss = tape.mean_all(y);
        let v = tape.value(loss)[0];
        if want_grad {
            let grads = tape.backward(loss).unwrap();
            (v, Some(grads.get(xt).unwrap().to_vec()))
        } else {
            (v, None)
        }
    };

    let (_, g) = eval(&x, true);
    let g = g.unwrap();
    let eps = 1e-5;
    for j in 0..x.len() {
        let mut xp = x.clone();
        xp[j] += eps;
        let mut xm = x.clone();
        xm[j] -= eps;
        let num = (eval(&xp, false).0 - eval(&xm, false).0) / (2.0 * eps);
        let denom = g[j].abs().max(num.abs()).max(1e-3);
        assert!((g[j] - num).abs() / denom < 1e-4, "elem {j}: {} vs {num}", g[j]);
    }
}
