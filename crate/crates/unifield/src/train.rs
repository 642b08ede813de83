//! Training objective, optimizer, and the mixed-domain training loop with
//! line-delimited JSON logging and checkpointing.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{MixedBatcher, Sample};
use crate::error::{Error, Result};
use crate::metrics::{self, MetricsReport};
use crate::model::{ForwardPass, UniFieldModel};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::{Tape, TensorId};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Mean absolute difference; the subgradient at zero is 0.
pub fn l1_loss<T: Scalar>(
    tape: &mut Tape<T>,
    pred: TensorId,
    target: TensorId,
) -> Result<TensorId> {
    if tape.shape(pred) != tape.shape(target) {
        return Err(Error::Shape {
            op: "l1_loss",
            lhs: tape.shape(pred).to_vec(),
            rhs: tape.shape(target).to_vec(),
        });
    }
    let diff = tape.sub(pred, target)?;
    let ad = tape.abs(diff);
    Ok(tape.mean_all(ad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Adam moments aligned with the parameter store, plus the step counter.
#[derive(Debug)]
pub struct OptimState<T> {
    pub step: usize,
    pub config: AdamConfig,
    /// (first, second) moment buffers per parameter.
    pub moments: Vec<(Vec<T>, Vec<T>)>,
}

impl<T: Scalar> OptimState<T> {
    pub fn new(store: &ParamStore<T>, config: AdamConfig) -> Self {
        OptimState {
            step: 0,
            config,
            moments: store
                .iter()
                .map(|(_, p)| (vec![T::ZERO; p.value.len()], vec![T::ZERO; p.value.len()]))
                .collect(),
        }
    }

    /// One bias-corrected Adam update over every parameter, in store order.
    /// `lr` overrides the base learning rate (schedules); parameters with
    /// zero gradient and zero moments stay untouched.
    pub fn apply(&mut self, store: &mut ParamStore<T>, lr: f64) {
        self.step += 1;
        let c = self.config;
        let t = self.step as f64;
        let bc1 = 1.0 - c.beta1.powf(t);
        let bc2 = 1.0 - c.beta2.powf(t);
        let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
        let one_m_b1 = T::from_f64(1.0 - c.beta1);
        let one_m_b2 = T::from_f64(1.0 - c.beta2);
        let epsv = T::from_f64(c.eps);
        let lr_t = T::from_f64(lr / bc1);
        let inv_sqrt_bc2 = T::from_f64(1.0 / bc2.sqrt());
        let wd = T::from_f64(c.weight_decay);

        let n = store.len();
        for i in 0..n {
            let id = crate::params::ParamId(i);
            let grad = store.grad(id).to_vec();
            let (m, v) = &mut self.moments[i];
            let value = store.value_mut(id);
            for j in 0..value.len() {
                let mut g = grad[j];
                if c.weight_decay != 0.0 {
                    g += wd * value[j];
                }
                m[j] = b1 * m[j] + one_m_b1 * g;
                v[j] = b2 * v[j] + one_m_b2 * g * g;
                let vhat_sqrt = (v[j] * inv_sqrt_bc2 * inv_sqrt_bc2).sqrt();
                value[j] -= lr_t * m[j] / (vhat_sqrt + epsv);
            }
        }
    }
}

/// Cosine decay from `base` to 10% of `base` over `total` steps.
pub fn cosine_lr(base: f64, step: usize, total: usize) -> f64 {
    let floor = 0.1 * base;
    if total <= 1 {
        return base;
    }
    let t = (step.min(total - 1)) as f64 / (total - 1) as f64;
    floor + 0.5 * (base - floor) * (1.0 + (std::f64::consts::PI * t).cos())
}

/// Scale gradients so their global L2 norm does not exceed `max_norm`.
pub fn clip_global_norm<T: Scalar>(store: &mut ParamStore<T>, max_norm: f64) -> f64 {
    let mut total = 0.0f64;
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    for &id in &ids {
        for g in store.grad(id) {
            let gv = g.to_f64();
            total += gv * gv;
        }
    }
    let norm = total.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = T::from_f64(max_norm / norm);
        for i in 0..store.len() {
            let id = crate::params::ParamId(i);
            let scaled: Vec<T> = store.grad(id).iter().map(|&g| g * scale).collect();
            store.set_grad(id, scaled);
        }
    }
    norm
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainOptions {
    /// Total optimizer steps; the learning-rate schedule always spans this,
    /// so interrupted and resumed runs follow one trajectory.
    pub steps: usize,
    /// Pause after this step, short of `steps` (partial leg before resume).
    pub stop_at: Option<usize>,
    pub adam: AdamConfig,
    pub clip_norm: Option<f64>,
    /// Evaluate every this many steps (0 = final evaluation only).
    pub eval_every: usize,
    /// Chunk size for held-out evaluation.
    pub eval_chunk: usize,
    pub out_dir: PathBuf,
    /// Seed for evaluation-time chunking.
    pub eval_seed: u64,
}

impl TrainOptions {
    pub fn quick(steps: usize, out_dir: PathBuf) -> Self {
        TrainOptions {
            steps,
            stop_at: None,
            adam: AdamConfig::default(),
            clip_norm: Some(1.0),
            eval_every: 0,
            eval_chunk: 8192,
            out_dir,
            eval_seed: 0,
        }
    }
}

#[derive(Debug, Serialize)]
struct StepRecord<'a> {
    kind: &'static str,
    step: usize,
    loss: f64,
    lr: f64,
    per_domain: &'a BTreeMap<String, f64>,
}

#[derive(Debug, Serialize)]
struct EvalRecord<'a> {
    kind: &'static str,
    step: usize,
    metrics: &'a MetricsReport,
}

#[derive(Debug)]
pub struct TrainSummary {
    pub steps_run: usize,
    pub final_metrics: Option<MetricsReport>,
    pub best_step: Option<usize>,
    pub log_path: PathBuf,
    pub last_checkpoint: PathBuf,
    pub best_checkpoint: Option<PathBuf>,
}

fn sample_pass<T: Scalar>(
    model: &UniFieldModel<T>,
    sample: &Sample,
) -> Result<(f64, crate::params::Frame, crate::tensor::Gradients<T>)> {
    let ForwardPass {
        mut tape,
        frame,
        output,
    } = model.forward_pass(&sample.points, sample.domain, &sample.flow)?;
    let target = tape.constant(
        sample.target.iter().map(|&v| T::from_f64(v)).collect(),
        &[sample.len()],
    )?;
    let loss = l1_loss(&mut tape, output, target)?;
    let loss_val = tape.value(loss)[0].to_f64();
    let grads = tape.backward(loss)?;
    Ok((loss_val, frame, grads))
}

/// Evaluate a model over samples with chunked inference.
pub fn evaluate<T: Scalar>(
    model: &UniFieldModel<T>,
    samples: &[Sample],
    chunk: usize,
    seed: u64,
) -> Result<MetricsReport> {
    let mut per_sample = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let pred = model.predict_chunked(
            &s.points,
            s.domain,
            &s.flow,
            chunk.max(model.config.k),
            seed.wrapping_add(i as u64),
        )?;
        let name = model.registry.get(s.domain)?.name.clone();
        per_sample.push((name, metrics::metrics(&pred, &s.target)?));
    }
    metrics::aggregate(&per_sample)
}

/// Run the training loop: per-step loss logging, periodic held-out
/// evaluation, best/last checkpoints, non-finite abort with a diagnostic
/// dump. Resumable via a pre-loaded optimizer state.
pub fn train<T: Scalar>(
    model: &mut UniFieldModel<T>,
    batcher: &mut MixedBatcher,
    eval_samples: &[Sample],
    optim: &mut OptimState<T>,
    opts: &TrainOptions,
) -> Result<TrainSummary> {
    fs::create_dir_all(&opts.out_dir)?;
    let log_path = opts.out_dir.join("train_log.jsonl");
    let mut log = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)?;
    let last_path = opts.out_dir.join("last.ufckpt");
    let best_path = opts.out_dir.join("best.ufckpt");

    let mut best: Option<(usize, f64)> = None;
    let mut final_metrics = None;
    let start_step = optim.step;
    let stop = opts.stop_at.unwrap_or(opts.steps).min(opts.steps);

    while optim.step < stop {
        let batch = batcher.next_batch();
        model.store.zero_grad();
        let (loss, per_domain) = batch_gradients(model, &batch)?;

        if !loss.is_finite() {
            let ids: Vec<String> = batch.iter().map(|s| s.tag.clone()).collect();
            let dump = opts.out_dir.join(format!("nonfinite_step{}.json", optim.step));
            let _ = fs::write(
                &dump,
                serde_json::to_string_pretty(&ids).unwrap_or_default(),
            );
            return Err(Error::NonFiniteLoss {
                step: optim.step,
                sample_ids: ids,
            });
        }

        if let Some(max_norm) = opts.clip_norm {
            clip_global_norm(&mut model.store, max_norm);
        }
        let lr = cosine_lr(optim.config.lr, optim.step, opts.steps);
        optim.apply(&mut model.store, lr);

        let record = StepRecord {
            kind: "step",
            step: optim.step,
            loss,
            lr,
            per_domain: &per_domain,
        };
        writeln!(log, "{}", serde_json::to_string(&record).unwrap())?;

        let due_eval = opts.eval_every > 0 && optim.step.is_multiple_of(opts.eval_every);
        let is_last = optim.step >= stop;
        if (due_eval || is_last) && !eval_samples.is_empty() {
            let report = evaluate(model, eval_samples, opts.eval_chunk, opts.eval_seed)?;
            let rec = EvalRecord {
                kind: "eval",
                step: optim.step,
                metrics: &report,
            };
            writeln!(log, "{}", serde_json::to_string(&rec).unwrap())?;
            let score = report.mae;
            if best.is_none_or(|(_, b)| score < b) {
                best = Some((optim.step, score));
                crate::checkpoint::save(model, Some(optim), &best_path)?;
            }
            if is_last {
                fs::write(
                    opts.out_dir.join("final_metrics.json"),
                    serde_json::to_string_pretty(&report).unwrap(),
                )?;
                final_metrics = Some(report);
            }
        }
    }

    crate::checkpoint::save(model, Some(optim), &last_path)?;
    Ok(TrainSummary {
        steps_run: optim.step - start_step,
        final_metrics,
        best_step: best.map(|(s, _)| s),
        log_path,
        last_checkpoint: last_path,
        best_checkpoint: best.map(|_| best_path),
    })
}

/// Forward/backward over a batch (samples in parallel when enabled), then a
/// deterministic sequential gradient merge in batch order. Returns the batch
/// loss and per-domain mean losses.
pub fn batch_gradients<T: Scalar>(
    model: &mut UniFieldModel<T>,
    batch: &[Sample],
) -> Result<(f64, BTreeMap<String, f64>)> {
    #[cfg(feature = "parallel")]
    let passes: Vec<_> = {
        let shared: &UniFieldModel<T> = model;
        batch
            .par_iter()
            .map(|s| sample_pass(shared, s))
            .collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let passes: Vec<_> = batch
        .iter()
        .map(|s| sample_pass(model, s))
        .collect::<Result<_>>()?;

    let scale = T::from_f64(1.0 / batch.len() as f64);
    let mut total = 0.0;
    let mut by_domain: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for (sample, (loss, frame, grads)) in batch.iter().zip(&passes) {
        model.store.accumulate(frame, grads, scale);
        total += loss;
        let name = model.registry.get(sample.domain)?.name.clone();
        let slot = by_domain.entry(name).or_insert((0.0, 0));
        slot.0 += loss;
        slot.1 += 1;
    }
    let per_domain = by_domain
        .into_iter()
        .map(|(k, (sum, n))| (k, sum / n as f64))
        .collect();
    Ok((total / batch.len() as f64, per_domain))
}

/// Parse the loss column back out of a training log.
pub fn read_log_losses(path: &Path) -> Result<Vec<(usize, f64)>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).map_err(|e| {
            Error::Parse {
                path: path.display().to_string(),
                line: 0,
                msg: e.to_string(),
            }
        })?;
        if v["kind"] == "step" {
            out.push((
                v["step"].as_u64().unwrap_or(0) as usize,
                v["loss"].as_f64().unwrap_or(f64::NAN),
            ));
        }
    }
    Ok(out)
}
