use super::*;
use crate::params::Frame;
use crate::rng::Rng;
use crate::tensor::Tape;

fn random_cloud(rng: &mut Rng, n: usize) -> PointSet {
    PointSet::new((0..3 * n).map(|_| rng.uniform_in(-1.0, 1.0)).collect()).unwrap()
}

fn setup(seed: u64, dim: usize) -> (ParamStore<f64>, SemanticAggregationParams) {
    let mut rng = Rng::new(seed);
    let mut store = ParamStore::new();
    let params = SemanticAggregationParams::new(&mut store, &mut rng, "agg", dim, 4);
    (store, params)
}

fn randomize(store: &mut ParamStore<f64>, seed: u64) {
    let mut rng = Rng::new(seed);
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    for id in ids {
        let n = store.get(id).value.len();
        store
            .set_value(id, (0..n).map(|_| rng.uniform_in(-0.7, 0.7)).collect())
            .unwrap();
    }
}

fn opts(k: usize) -> AggregateOptions {
    AggregateOptions {
        k,
        iterations: 1,
        neighbor_space: NeighborSpace::Coordinate,
    }
}

#[test]
fn closed_gate_identity_preserves_input_features() {
    let d = 3;
    let (mut store, params) = setup(1, d);
    randomize(&mut store, 2);
    // GRU update gate closed and FFN second layer zero: slots keep their
    // initial features, which are the selected rows of x.
    store.set_value(params.gru.b_z, vec![-30.0; d]).unwrap();
    store.set_value(params.gru.w_z, vec![0.0; d * d]).unwrap();
    store.set_value(params.gru.u_z, vec![0.0; d * d]).unwrap();
    store.set_value(params.ffn.l2.w, vec![0.0; d * 4 * d]).unwrap();
    store.set_value(params.ffn.l2.b, vec![0.0; d]).unwrap();

    let mut rng = Rng::new(3);
    let n = 7;
    let points = random_cloud(&mut rng, n);
    let x: Vec<f64> = (0..n * d).map(|_| rng.normal()).collect();

    let mut tape = Tape::new();
    let mut frame = Frame::new(&store);
    let mut ctx = Ctx::new(&mut tape, &store, &mut frame);
    let xt = ctx.tape.constant(x.clone(), &[n, d]).unwrap();
    let slots = aggregate(&mut ctx, &params, xt, &points, n, opts(3)).unwrap();

    // K = N: every input point is a slot, reordered by the sampling pass.
    let mut seen = slots.selected.clone();
    seen.sort_unstable();
    assert_eq!(seen, (0..n).collect::<Vec<_>>());
    let out = tape.value(slots.features);
    for (slot_row, &src) in slots.selected.iter().enumerate() {
        for c in 0..d {
            let got = out[slot_row * d + c];
            let want = x[src * d + c];
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
    }
}

#[test]
fn attention_weights_normalized_per_slot() {
    let d = 4;
    let (mut store, params) = setup(4, d);
    randomize(&mut store, 5);
    let mut rng = Rng::new(6);
    let n = 12;
    let points = random_cloud(&mut rng, n);
    let x: Vec<f64> = (0..n * d).map(|_| rng.normal()).collect();

    let mut tape = Tape::new();
    let mut frame = Frame::new(&store);
    let mut ctx = Ctx::new(&mut tape, &store, &mut frame);
    let xt = ctx.tape.constant(x, &[n, d]).unwrap();
    let (_, trace) = aggregate_traced(&mut ctx, &params, xt, &points, 4, opts(5)).unwrap();
    assert_eq!(trace.attention_weights.len(), 1);
    let sums = tape.sum_axis(trace.attention_weights[0], 1).unwrap();
    for &s in tape.value(sums) {
        assert!((s - 1.0).abs() < 1e-6);
    }
}

#[test]
fn one_iteration_means_one_gru_update() {
    let d = 2;
    let (store, params) = setup(7, d);
    let mut rng = Rng::new(8);
    let n = 6;
    let points = random_cloud(&mut rng, n);
    let x: Vec<f64> = (0..n * d).map(|_| rng.normal()).collect();

    for iterations in 1..=3 {
        let mut tape = Tape::new();
        let mut frame = Frame::new(&store);
        let mut ctx = Ctx::new(&mut tape, &store, &mut frame);
        let xt = ctx.tape.constant(x.clone(), &[n, d]).unwrap();
        let (_, trace) = aggregate_traced(
            &mut ctx,
            &params,
            xt,
            &points,
            2,
            AggregateOptions {
                k: 3,
                iterations,
                neighbor_space: NeighborSpace::Coordinate,
            },
        )
        .unwrap();
        assert_eq!(trace.gru_updates, iterations);
    }
}

/// Straight-line evaluation of one aggregation iteration for hand-checked
/// comparison: N=6, K=2, D=2.
#[test]
fn matches_straight_line_oracle() {
    let d = 2;
    let (mut store, params) = setup(9, d);
    randomize(&mut store, 10);
    let mut rng = Rng::new(11);
    let n = 6;
    let points = random_cloud(&mut rng, n);
    let x: Vec<f64> = (0..n * d).map(|_| rng.normal()).collect();
    let k = 3;

    let mut tape = Tape::new();
    let mut frame = Frame::new(&store);
    let mut ctx = Ctx::new(&mut tape, &store, &mut frame);
    let xt = ctx.tape.constant(x.clone(), &[n, d]).unwrap();
    let slots = aggregate(&mut ctx, &params, xt, &points, 2, opts(k)).unwrap();
    let got = tape.value(slots.features).to_vec();

    // ---- independent plain-loop evaluation ----
    let val = |id| store.get(id).value.clone();
    let lin = |w: &[f64], b: &[f64], x: &[f64], din: usize, dout: usize| -> Vec<f64> {
        (0..dout)
            .map(|c| {
                let mut acc = b[c];
                for j in 0..din {
                    acc += x[j] * w[j * dout + c];
                }
                acc
            })
            .collect()
    };
    let gelu = |v: Vec<f64>| -> Vec<f64> {
        v.into_iter()
            .map(|x| x * 0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2)))
            .collect()
    };
    let mlp2 = |m: &crate::nn::Mlp2, x: &[f64], din: usize, hid: usize, dout: usize| {
        let h = gelu(lin(&val(m.l1.w), &val(m.l1.b), x, din, hid));
        lin(&val(m.l2.w), &val(m.l2.b), &h, hid, dout)
    };
    let sigmoid = |x: f64| 1.0 / (1.0 + (-x).exp());

    // FPS seeded at the lexicographically smallest point, recomputed greedily
    let seed_pt = (0..n)
        .min_by(|&a, &b| {
            let (pa, pb) = (points.point(a), points.point(b));
            (pa[0], pa[1], pa[2]).partial_cmp(&(pb[0], pb[1], pb[2])).unwrap()
        })
        .unwrap();
    let mut centers = vec![seed_pt];
    {
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for cand in 0..n {
            let p = points.point(cand);
            let c0 = points.point(seed_pt);
            let dd = (p[0] - c0[0]).powi(2) + (p[1] - c0[1]).powi(2) + (p[2] - c0[2]).powi(2);
            if dd > best.0 || (dd == best.0 && cand < best.1) {
                best = (dd, cand);
            }
        }
        centers.push(best.1);
    }
    assert_eq!(centers, slots.selected);

    let mut expect = Vec::new();
    for (si, &ci) in centers.iter().enumerate() {
        let xs = &x[ci * d..(ci + 1) * d];
        // k nearest input points to the slot position
        let sp = points.point(ci);
        let mut cand: Vec<(f64, usize)> = (0..n)
            .map(|j| {
                let pj = points.point(j);
                (
                    (sp[0] - pj[0]).powi(2) + (sp[1] - pj[1]).powi(2) + (sp[2] - pj[2]).powi(2),
                    j,
                )
            })
            .collect();
        cand.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let nbrs: Vec<usize> = cand.iter().take(k).map(|&(_, j)| j).collect();

        let q = lin(&val(params.attn.query.w), &val(params.attn.query.b), xs, d, d);
        let mut logits = Vec::new();
        let mut vals = Vec::new();
        for &j in &nbrs {
            let xj = &x[j * d..(j + 1) * d];
            let kj = lin(&val(params.attn.key.w), &val(params.attn.key.b), xj, d, d);
            let vj = lin(&val(params.attn.value.w), &val(params.attn.value.b), xj, d, d);
            let pj = points.point(j);
            let diff = [sp[0] - pj[0], sp[1] - pj[1], sp[2] - pj[2]];
            let delta = mlp2(&params.attn.pos_mlp, &diff, 3, d, d);
            vals.push((0..d).map(|c| vj[c] + delta[c]).collect::<Vec<_>>());
            let pre: Vec<f64> = (0..d).map(|c| q[c] - kj[c] + delta[c]).collect();
            logits.push(mlp2(&params.attn.attn_mlp, &pre, d, d, d));
        }
        let mut y = vec![0.0; d];
        for c in 0..d {
            let mx = logits.iter().map(|l| l[c]).fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l[c] - mx).exp()).collect();
            let tot: f64 = exps.iter().sum();
            for (jj, v) in vals.iter().enumerate() {
                y[c] += exps[jj] / tot * v[c];
            }
        }
        // GRU update
        let g = &params.gru;
        let z: Vec<f64> = {
            let a = lin(&val(g.w_z), &val(g.b_z), &y, d, d);
            let b = lin(&val(g.u_z), &vec![0.0; d], xs, d, d);
            (0..d).map(|c| sigmoid(a[c] + b[c])).collect()
        };
        let r: Vec<f64> = {
            let a = lin(&val(g.w_r), &val(g.b_r), &y, d, d);
            let b = lin(&val(g.u_r), &vec![0.0; d], xs, d, d);
            (0..d).map(|c| sigmoid(a[c] + b[c])).collect()
        };
        let cand_h: Vec<f64> = {
            let rs: Vec<f64> = (0..d).map(|c| r[c] * xs[c]).collect();
            let a = lin(&val(g.w_h), &val(g.b_h), &y, d, d);
            let b = lin(&val(g.u_h), &vec![0.0; d], &rs, d, d);
            (0..d).map(|c| (a[c] + b[c]).tanh()).collect()
        };
        let mut h: Vec<f64> = (0..d)
            .map(|c| (1.0 - z[c]) * xs[c] + z[c] * cand_h[c])
            .collect();
        // residual FFN
        let f = mlp2(&params.ffn, &h, d, 4 * d, d);
        for c in 0..d {
            h[c] += f[c];
        }
        expect.extend(h);
        let _ = si;
    }

    for (a, b) in got.iter().zip(&expect) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn invariant_to_permuting_unselected_points() {
    let d = 3;
    let (mut store, params) = setup(12, d);
    randomize(&mut store, 13);
    let mut rng = Rng::new(14);
    let n = 10;
    let points = random_cloud(&mut rng, n);
    let x: Vec<f64> = (0..n * d).map(|_| rng.normal()).collect();

    let forward = |pts: &PointSet, feats: Vec<f64>| -> (Vec<f64>, Vec<usize>) {
        let mut tape = Tape::new();
        let mut frame = Frame::new(&store);
        let mut ctx = Ctx::new(&mut tape, &store, &mut frame);
        let xt = ctx.tape.constant(feats, &[n, d]).unwrap();
        let slots = aggregate(&mut ctx, &params, xt, pts, 3, opts(4)).unwrap();
        (tape.value(slots.features).to_vec(), slots.selected)
    };

    let (base, selected) = forward(&points, x.clone());

    // permutation fixing the selected indices
    let mut perm: Vec<usize> = (0..n).collect();
    let free: Vec<usize> = (0..n).filter(|i| !selected.contains(i)).collect();
    let mut shuffled = free.clone();
    rng.shuffle(&mut shuffled);
    for (slot, &target) in free.iter().zip(&shuffled) {
        perm[*slot] = target;
    }
    let ppoints = points.permute(&perm);
    let px: Vec<f64> = perm
        .iter()
        .flat_map(|&i| x[i * d..(i + 1) * d].to_vec())
        .collect();
    let (out, _) = forward(&ppoints, px);
    for (a, b) in out.iter().zip(&base) {
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
}

#[test]
fn relabeling_selected_points_keeps_canonical_slot_order() {
    // slot order is determined by coordinates (lex-min seed + max-min
    // sampling), so swapping the storage indices of selected points leaves
    // the refined features unchanged
    let d = 2;
    let (mut store, params) = setup(22, d);
    randomize(&mut store, 23);
    let mut rng = Rng::new(24);
    let n = 9;
    let points = random_cloud(&mut rng, n);
    let x: Vec<f64> = (0..n * d).map(|_| rng.normal()).collect();

    let forward = |pts: &PointSet, feats: Vec<f64>| -> (Vec<f64>, Vec<[f64; 3]>) {
        let mut tape = Tape::new();
        let mut frame = Frame::new(&store);
        let mut ctx = Ctx::new(&mut tape, &store, &mut frame);
        let xt = ctx.tape.constant(feats, &[n, d]).unwrap();
        let slots = aggregate(&mut ctx, &params, xt, pts, 3, opts(4)).unwrap();
        let coords = (0..slots.positions.len())
            .map(|i| slots.positions.point(i))
            .collect();
        (tape.value(slots.features).to_vec(), coords)
    };

    let (base, base_coords) = forward(&points, x.clone());

    // swap the first two selected indices in storage
    let selected = {
        let mut tape: Tape<f64> = Tape::new();
        let mut frame = Frame::new(&store);
        let mut ctx = Ctx::new(&mut tape, &store, &mut frame);
        let xt = ctx.tape.constant(x.clone(), &[n, d]).unwrap();
        aggregate(&mut ctx, &params, xt, &points, 3, opts(4))
            .unwrap()
            .selected
    };
    let mut perm: Vec<usize> = (0..n).collect();
    perm.swap(selected[0], selected[1]);
    let ppoints = points.permute(&perm);
    let px: Vec<f64> = perm
        .iter()
        .flat_map(|&i| x[i * d..(i + 1) * d].to_vec())
        .collect();
    let (relabeled, coords) = forward(&ppoints, px);

    assert_eq!(base_coords, coords, "slot coordinate sequence changed");
    for (a, b) in relabeled.iter().zip(&base) {
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
}

#[test]
fn slot_feature_gradients_match_finite_differences() {
    let d = 2;
    let (mut store, params) = setup(15, d);
    randomize(&mut store, 16);
    let mut rng = Rng::new(17);
    let n = 8;
    let points = random_cloud(&mut rng, n);
    let x: Vec<f64> = (0..n * d).map(|_| rng.normal()).collect();

    let eval = |feats: &[f64], want_grad: bool| -> (f64, Option<Vec<f64>>) {
        let mut tape = Tape::new();
        let mut frame = Frame::new(&store);
        let mut ctx = Ctx::new(&mut tape, &store, &mut frame);
        let xt = ctx
            .tape
            .leaf(std::sync::Arc::new(feats.to_vec()), &[n, d], true)
            .unwrap();
        let slots = aggregate(&mut ctx, &params, xt, &points, 3, opts(4)).unwrap();
        let loss = tape.mean_all(slots.features);
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

#[test]
fn rejects_more_slots_than_points() {
    let (store, params) = setup(18, 2);
    let mut rng = Rng::new(19);
    let points = random_cloud(&mut rng, 4);
    let mut tape: Tape<f64> = Tape::new();
    let mut frame = Frame::new(&store);
    let mut ctx = Ctx::new(&mut tape, &store, &mut frame);
    let xt = ctx.tape.constant(vec![0.0; 8], &[4, 2]).unwrap();
    assert!(aggregate(&mut ctx, &params, xt, &points, 5, opts(2)).is_err());
}

#[test]
fn feature_space_neighborhoods_follow_features() {
    let d = 2;
    let (store, params) = setup(20, d);
    let mut rng = Rng::new(21);
    let n = 6;
    let points = random_cloud(&mut rng, n);
    let x: Vec<f64> = (0..n * d).map(|_| rng.normal()).collect();

    let mut tape = Tape::new();
    let mut frame = Frame::new(&store);
    let mut ctx = Ctx::new(&mut tape, &store, &mut frame);
    let xt = ctx.tape.constant(x, &[n, d]).unwrap();
    let out = aggregate(
        &mut ctx,
        &params,
        xt,
        &points,
        2,
        AggregateOptions {
            k: 3,
            iterations: 2,
            neighbor_space: NeighborSpace::Feature,
        },
    );
    assert!(out.is_ok());
}
