//! Central finite-difference gradient suites.
//!
//! Every differentiable operation, the composed layers, and the end-to-end
//! tiny model are checked against two-sided differences at 64-bit with
//! eps = 1e-5. The numeric side only ever calls forward evaluation, so it is
//! independent of the backward implementation it certifies. Relative errors
//! use a floored denominator: max(|analytic|, |numeric|, 1e-3), which admits
//! finite-difference noise on near-zero gradients without masking real
//! disagreement.

use std::sync::Arc;

use crate::data::synthetic::cylinder_domain;
use crate::data::DomainRegistry;
use crate::error::Result;
use crate::geometry::{knn, PointSet, SelfMode};
use crate::model::{ModelConfig, UniFieldModel};
use crate::nn::{
    aggregate, fca_forward, gru_cell, point_transformer_block, AdapterParams, AggregateOptions,
    GruParams, NeighborSpace, PointTransformerBlockParams, SemanticAggregationParams,
};
use crate::params::{Ctx, Frame, ParamStore};
use crate::rng::Rng;
use crate::tensor::{Tape, TensorId};
use crate::train::l1_loss;

pub const FD_EPS: f64 = 1e-5;
const REL_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckReport {
    fn from_err(name: &str, max_rel_err: f64, tolerance: f64) -> Self {
        CheckReport {
            name: name.to_string(),
            max_rel_err,
            tolerance,
            passed: max_rel_err < tolerance,
        }
    }
}

#[derive(Debug, Default)]
pub struct GradCheckSummary {
    pub reports: Vec<CheckReport>,
}

impl GradCheckSummary {
    pub fn passed(&self) -> bool {
        self.reports.iter().all(|r| r.passed)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for r in &self.reports {
            out.push_str(&format!(
                "{:<38} max_rel_err {:>12.3e}  tol {:>8.0e}  {}\n",
                r.name,
                r.max_rel_err,
                r.tolerance,
                if r.passed { "PASS" } else { "FAIL" }
            ));
        }
        out
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

/// A scalar loss built on a tape from leaf tensors.
pub type LossFn<'a> = &'a dyn Fn(&mut Tape<f64>, &[TensorId]) -> Result<TensorId>;

/// Check d(loss)/d(inputs) for a tape-built scalar function of leaf tensors.
pub fn check_fn(
    name: &str,
    inputs: &[(Vec<f64>, Vec<usize>)],
    tolerance: f64,
    f: LossFn,
) -> CheckReport {
    let build = |data: &[Vec<f64>]| -> (Tape<f64>, Vec<TensorId>, TensorId) {
        let mut tape = Tape::new();
        let ids: Vec<TensorId> = data
            .iter()
            .zip(inputs)
            .map(|(d, (_, shape))| tape.leaf(Arc::new(d.clone()), shape, true).unwrap())
            .collect();
        let loss = f(&mut tape, &ids).expect("gradcheck function failed");
        (tape, ids, loss)
    };

    let base: Vec<Vec<f64>> = inputs.iter().map(|(d, _)| d.clone()).collect();
    let (tape, ids, loss) = build(&base);
    let grads = tape.backward(loss).expect("backward failed");

    let mut worst = 0.0f64;
    for (which, id) in ids.iter().enumerate() {
        let analytic = grads
            .get(*id)
            .map(|g| g.to_vec())
            .unwrap_or_else(|| vec![0.0; base[which].len()]);
        for j in 0..base[which].len() {
            let eval = |delta: f64| -> f64 {
                let mut data = base.clone();
                data[which][j] += delta;
                let (t, _, l) = build(&data);
                t.value(l)[0]
            };
            let numeric = (eval(FD_EPS) - eval(-FD_EPS)) / (2.0 * FD_EPS);
            worst = worst.max(rel_err(analytic[j], numeric));
        }
    }
    CheckReport::from_err(name, worst, tolerance)
}

fn rand_vec(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.normal()).collect()
}

fn random_cloud(rng: &mut Rng, n: usize) -> PointSet {
    PointSet::new((0..3 * n).map(|_| rng.uniform_in(-1.0, 1.0)).collect()).unwrap()
}

fn randomize_store(store: &mut ParamStore<f64>, seed: u64, scale: f64) {
    let mut rng = Rng::new(seed);
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    for id in ids {
        let n = store.get(id).value.len();
        store
            .set_value(id, (0..n).map(|_| rng.uniform_in(-scale, scale)).collect())
            .unwrap();
    }
}

/// Per-operation finite-difference suite.
pub fn op_suite() -> GradCheckSummary {
    let mut rng = Rng::new(0xF00D);
    let mut reports = Vec::new();

    reports.push(check_fn(
        "matmul 3x4 . 4x2",
        &[(rand_vec(&mut rng, 12), vec![3, 4]), (rand_vec(&mut rng, 8), vec![4, 2])],
        1e-6,
        &|t, ids| {
            let y = t.matmul(ids[0], ids[1])?;
            Ok(t.sum_all(y))
        },
    ));

    reports.push(check_fn(
        "elementwise add/sub/mul",
        &[(rand_vec(&mut rng, 8), vec![2, 4]), (rand_vec(&mut rng, 8), vec![2, 4])],
        1e-4,
        &|t, ids| {
            let a = t.add(ids[0], ids[1])?;
            let s = t.sub(a, ids[1])?;
            let m = t.mul(s, ids[0])?;
            Ok(t.sum_all(m))
        },
    ));

    reports.push(check_fn(
        "scalar ops",
        &[(rand_vec(&mut rng, 6), vec![6])],
        1e-4,
        &|t, ids| {
            let a = t.mul_scalar(ids[0], -1.75);
            let b = t.add_scalar(a, 0.5);
            Ok(t.mean_all(b))
        },
    ));

    reports.push(check_fn(
        "row and column broadcasts",
        &[
            (rand_vec(&mut rng, 12), vec![3, 4]),
            (rand_vec(&mut rng, 4), vec![4]),
            (rand_vec(&mut rng, 3), vec![3]),
        ],
        1e-4,
        &|t, ids| {
            let a = t.add_row(ids[0], ids[1])?;
            let b = t.mul_row(a, ids[1])?;
            let c = t.mul_col(b, ids[2])?;
            Ok(t.sum_all(c))
        },
    ));

    reports.push(check_fn(
        "gather with repeats",
        &[(rand_vec(&mut rng, 10), vec![5, 2])],
        1e-4,
        &|t, ids| {
            let g = t.gather(ids[0], Arc::new(vec![0, 2, 2, 4, 1, 2]))?;
            let sq = t.mul(g, g)?;
            Ok(t.sum_all(sq))
        },
    ));

    reports.push(check_fn(
        "concat and slice",
        &[(rand_vec(&mut rng, 6), vec![2, 3]), (rand_vec(&mut rng, 4), vec![2, 2])],
        1e-4,
        &|t, ids| {
            let c = t.concat(ids[0], ids[1], 1)?;
            let s = t.slice_cols(c, 1, 3)?;
            let r = t.concat(s, s, 0)?;
            Ok(t.mean_all(r))
        },
    ));

    reports.push(check_fn(
        "softmax over middle axis",
        &[(rand_vec(&mut rng, 24), vec![2, 3, 4])],
        1e-4,
        &|t, ids| {
            let s = t.softmax(ids[0], 1)?;
            let w = t.mul(s, ids[0])?;
            Ok(t.sum_all(w))
        },
    ));

    reports.push(check_fn(
        "reductions sum/mean/max",
        &[(rand_vec(&mut rng, 24), vec![2, 3, 4])],
        1e-4,
        &|t, ids| {
            let a = t.sum_axis(ids[0], 2)?;
            let b = t.mean_axis(a, 0)?;
            let c = t.max_axis(ids[0], 1)?;
            let cs = t.sum_all(c);
            let bs = t.sum_all(b);
            t.add(bs, cs)
        },
    ));

    reports.push(check_fn(
        "gelu",
        &[(rand_vec(&mut rng, 8), vec![8])],
        1e-4,
        &|t, ids| {
            let g = t.gelu(ids[0]);
            Ok(t.sum_all(g))
        },
    ));

    reports.push(check_fn(
        "sigmoid/tanh/abs",
        &[(rand_vec(&mut rng, 9), vec![9])],
        1e-4,
        &|t, ids| {
            let s = t.sigmoid(ids[0]);
            let h = t.tanh(s);
            let a = t.abs(h);
            Ok(t.mean_all(a))
        },
    ));

    reports.push(check_fn(
        "layernorm",
        &[
            (rand_vec(&mut rng, 12), vec![3, 4]),
            (rand_vec(&mut rng, 4), vec![4]),
            (rand_vec(&mut rng, 4), vec![4]),
        ],
        1e-5,
        &|t, ids| {
            let y = t.layernorm(ids[0], ids[1], ids[2], 1e-5)?;
            let w = t.mul(y, ids[0])?;
            Ok(t.sum_all(w))
        },
    ));

    reports.push(check_fn(
        "composed matmul-gelu-softmax chain",
        &[(rand_vec(&mut rng, 12), vec![3, 4]), (rand_vec(&mut rng, 8), vec![4, 2])],
        1e-5,
        &|t, ids| {
            let h = t.matmul(ids[0], ids[1])?;
            let g = t.gelu(h);
            let s = t.softmax(g, 1)?;
            let w = t.mul(s, g)?;
            Ok(t.mean_all(w))
        },
    ));

    GradCheckSummary { reports }
}

/// Layer-level suites: GRU cell, attention block, semantic aggregation,
/// flow-conditioned adapter.
pub fn layer_suite() -> GradCheckSummary {
    let mut reports = Vec::new();
    let mut rng = Rng::new(0xBEEF);

    // GRU cell on a 2x3 instance
    {
        let mut store: ParamStore<f64> = ParamStore::new();
        let params = GruParams::new(&mut store, &mut Rng::new(1), "gru", 3);
        randomize_store(&mut store, 2, 0.8);
        let state = rand_vec(&mut rng, 6);
        let input = rand_vec(&mut rng, 6);
        reports.push(check_fn(
            "gru_cell 2x3",
            &[(state, vec![2, 3]), (input, vec![2, 3])],
            1e-5,
            &|t, ids| {
                let mut frame = Frame::new(&store);
                let mut ctx = Ctx::new(t, &store, &mut frame);
                let y = gru_cell(&mut ctx, &params, ids[0], ids[1])?;
                Ok(t.sum_all(y))
            },
        ));
    }

    // attention block on 4 points
    {
        let mut store: ParamStore<f64> = ParamStore::new();
        let params =
            PointTransformerBlockParams::new(&mut store, &mut Rng::new(3), "block", 2, 4, false);
        randomize_store(&mut store, 4, 0.7);
        let points = random_cloud(&mut rng, 4);
        let nbr = knn(&points, &points, 2, SelfMode::Include).unwrap();
        let x = rand_vec(&mut rng, 8);
        reports.push(check_fn(
            "point_transformer_block 4 pts",
            &[(x, vec![4, 2])],
            1e-4,
            &|t, ids| {
                let mut frame = Frame::new(&store);
                let mut ctx = Ctx::new(t, &store, &mut frame);
                let y = point_transformer_block(&mut ctx, &params, ids[0], &points, &nbr)?;
                Ok(t.mean_all(y))
            },
        ));
    }

    // semantic aggregation on N=8, K=3
    {
        let mut store: ParamStore<f64> = ParamStore::new();
        let params =
            SemanticAggregationParams::new(&mut store, &mut Rng::new(5), "agg", 2, 4);
        randomize_store(&mut store, 6, 0.7);
        let points = random_cloud(&mut rng, 8);
        let x = rand_vec(&mut rng, 16);
        reports.push(check_fn(
            "semantic_aggregation N=8 K=3",
            &[(x, vec![8, 2])],
            1e-4,
            &|t, ids| {
                let mut frame = Frame::new(&store);
                let mut ctx = Ctx::new(t, &store, &mut frame);
                let slots = aggregate(
                    &mut ctx,
                    &params,
                    ids[0],
                    &points,
                    3,
                    AggregateOptions {
                        k: 4,
                        iterations: 1,
                        neighbor_space: NeighborSpace::Coordinate,
                    },
                )?;
                Ok(t.mean_all(slots.features))
            },
        ));
    }

    // flow-conditioned adapter
    {
        let mut store: ParamStore<f64> = ParamStore::new();
        let params = AdapterParams::new(&mut store, &mut Rng::new(7), "fca", 2, 3);
        randomize_store(&mut store, 8, 0.6);
        let x = rand_vec(&mut rng, 9);
        let cond = rand_vec(&mut rng, 2);
        reports.push(check_fn(
            "flow_conditioned_adapter",
            &[(x, vec![3, 3]), (cond, vec![1, 2])],
            1e-4,
            &|t, ids| {
                let mut frame = Frame::new(&store);
                let mut ctx = Ctx::new(t, &store, &mut frame);
                let y = fca_forward(&mut ctx, &params, ids[0], ids[1])?;
                Ok(t.mean_all(y))
            },
        ));
    }

    GradCheckSummary { reports }
}

/// End-to-end check: the L1 training loss of a tiny model (stages=2, D0=4,
/// N=32) against finite differences over every parameter.
pub fn end_to_end_suite() -> GradCheckSummary {
    let registry = DomainRegistry::new(vec![cylinder_domain()]).unwrap();
    let config = ModelConfig {
        preset: None,
        stages: 2,
        base_channels: 4,
        k: 4,
        seed: 0xE2E,
        ..Default::default()
    };
    let mut model = UniFieldModel::<f64>::build(config, registry).unwrap();
    // fully random parameters so no gradient path is trivially zero
    randomize_store(&mut model.store, 0xA11, 0.5);

    let mut rng = Rng::new(0xD0E);
    let points = random_cloud(&mut rng, 32);
    let flow = [30.0];
    let target: Vec<f64> = (0..32).map(|_| rng.normal()).collect();

    let loss_of = |model: &UniFieldModel<f64>| -> f64 {
        let mut pass = model.forward_pass(&points, 0, &flow).unwrap();
        let tgt = pass
            .tape
            .constant(target.clone(), &[32])
            .unwrap();
        let loss = l1_loss(&mut pass.tape, pass.output, tgt).unwrap();
        pass.tape.value(loss)[0]
    };

    // analytic gradients
    model.store.zero_grad();
    {
        let mut pass = model.forward_pass(&points, 0, &flow).unwrap();
        let tgt = pass.tape.constant(target.clone(), &[32]).unwrap();
        let loss = l1_loss(&mut pass.tape, pass.output, tgt).unwrap();
        let grads = pass.tape.backward(loss).unwrap();
        model.store.accumulate(&pass.frame, &grads, 1.0);
    }

    let ids: Vec<_> = model.store.iter().map(|(id, _)| id).collect();
    let mut worst = 0.0f64;
    for id in ids {
        let analytic = model.store.grad(id).to_vec();
        let base = model.store.get(id).value.to_vec();
        for j in 0..base.len() {
            let mut probe = |delta: f64| -> f64 {
                let mut v = base.clone();
                v[j] += delta;
                model.store.set_value(id, v).unwrap();
                loss_of(&model)
            };
            let plus = probe(FD_EPS);
            let minus = probe(-FD_EPS);
            model.store.set_value(id, base.clone()).unwrap();
            let numeric = (plus - minus) / (2.0 * FD_EPS);
            worst = worst.max(rel_err(analytic[j], numeric));
        }
    }

    GradCheckSummary {
        reports: vec![CheckReport::from_err(
            "end_to_end tiny model (stages=2 D0=4 N=32)",
            worst,
            1e-3,
        )],
    }
}

/// Every suite (the `gradcheck` CLI command and acceptance criterion run).
pub fn run_all() -> GradCheckSummary {
    let mut all = GradCheckSummary::default();
    all.reports.extend(op_suite().reports);
    all.reports.extend(layer_suite().reports);
    all.reports.extend(end_to_end_suite().reports);
    all
}
