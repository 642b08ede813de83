//! Protocol harnesses: joint multi-domain training versus single-domain
//! training on the synthetic domains, with the data-scarce domain held at a
//! handful of training samples.

use std::path::PathBuf;

use serde::Serialize;

use crate::data::synthetic::{cylinder_domain, gen_cylinder, gen_sphere, sphere_domain};
use crate::data::{DomainRegistry, MixedBatcher, Sample};
use crate::error::Result;
use crate::metrics::MetricsReport;
use crate::model::{ModelConfig, UniFieldModel};
use crate::scalar::Scalar;
use crate::train::{train, AdamConfig, OptimState, TrainOptions};

#[derive(Debug, Clone)]
pub struct JointVsSingleOptions {
    /// Training samples for the data-rich cylinder domain.
    pub cylinder_train: usize,
    /// Training samples for the data-scarce sphere domain.
    pub sphere_train: usize,
    /// Held-out sphere samples evaluated by both conditions.
    pub sphere_test: usize,
    pub n_points: usize,
    pub points_per_sample: usize,
    pub noise_std: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seeds: Vec<u64>,
    pub config: ModelConfig,
    pub out_dir: PathBuf,
}

impl JointVsSingleOptions {
    /// The desk-scale protocol: sphere restricted to 5 training samples, the
    /// cylinder domain at 200. The step budget matters: the single-domain
    /// model overfits its 5 samples early, while the joint model needs the
    /// longer horizon for the scarce domain's share of mixed batches.
    pub fn desk_scale(out_dir: PathBuf) -> Self {
        JointVsSingleOptions {
            cylinder_train: 200,
            sphere_train: 5,
            sphere_test: 16,
            n_points: 128,
            points_per_sample: 96,
            noise_std: 0.0,
            steps: 2000,
            batch_size: 4,
            lr: 2e-3,
            seeds: vec![1, 2, 3],
            config: ModelConfig::tiny(0),
            out_dir,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionOutcome {
    /// Final evaluation per seed.
    pub per_seed: Vec<MetricsReport>,
    /// Seed-wise mean of the sphere-domain test MAE.
    pub mean_sphere_mae: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct JointVsSingleReport {
    pub joint: ConditionOutcome,
    pub single: ConditionOutcome,
}

impl JointVsSingleReport {
    /// The directional claim: joint training does not hurt the scarce
    /// domain, on seed-wise means.
    pub fn joint_wins(&self) -> bool {
        self.joint.mean_sphere_mae <= self.single.mean_sphere_mae
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str("condition        sphere-test MAE (per seed)            mean\n");
        for (label, c) in [("joint", &self.joint), ("single", &self.single)] {
            let seeds: Vec<String> = c
                .per_seed
                .iter()
                .map(|r| format!("{:.4}", r.per_domain.get("sphere").map_or(f64::NAN, |d| d.mae)))
                .collect();
            out.push_str(&format!(
                "{label:<16} {:<37} {:.4}\n",
                seeds.join(" "),
                c.mean_sphere_mae
            ));
        }
        out
    }
}

fn sphere_eval_set(opts: &JointVsSingleOptions, domain_index: usize) -> Result<Vec<Sample>> {
    (0..opts.sphere_test)
        .map(|i| {
            Ok(gen_sphere(opts.n_points, opts.noise_std, 0x7E57_0000 + i as u64)?
                .with_domain(domain_index))
        })
        .collect()
}

fn run_condition<T: Scalar>(
    opts: &JointVsSingleOptions,
    seed: u64,
    joint: bool,
) -> Result<MetricsReport> {
    let registry = if joint {
        DomainRegistry::new(vec![cylinder_domain(), sphere_domain()])?
    } else {
        DomainRegistry::new(vec![sphere_domain()])?
    };
    let sphere_idx = if joint { 1 } else { 0 };

    let mut train_set: Vec<Sample> = Vec::new();
    if joint {
        for i in 0..opts.cylinder_train {
            train_set.push(
                gen_cylinder(opts.n_points, opts.noise_std, 0xCC00_0000 + i as u64)?
                    .with_domain(0),
            );
        }
    }
    for i in 0..opts.sphere_train {
        train_set.push(
            gen_sphere(opts.n_points, opts.noise_std, 0x55AA_0000 + i as u64)?
                .with_domain(sphere_idx),
        );
    }
    let eval_set = sphere_eval_set(opts, sphere_idx)?;

    let mut config = opts.config.clone();
    config.seed = seed;
    let mut model = UniFieldModel::<T>::build(config, registry)?;
    model.fit_flow_standardization(&train_set);

    let mut batcher =
        MixedBatcher::new(train_set, opts.batch_size, opts.points_per_sample, seed)?;
    let mut optim = OptimState::new(
        &model.store,
        AdamConfig {
            lr: opts.lr,
            ..Default::default()
        },
    );
    let label = if joint { "joint" } else { "single" };
    let run_dir = opts.out_dir.join(format!("{label}-seed{seed}"));
    let train_opts = TrainOptions {
        eval_chunk: opts.n_points.max(16),
        ..TrainOptions::quick(opts.steps, run_dir)
    };
    let summary = train(&mut model, &mut batcher, &eval_set, &mut optim, &train_opts)?;
    Ok(summary
        .final_metrics
        .expect("training with an eval set always produces final metrics"))
}

fn outcome(per_seed: Vec<MetricsReport>) -> ConditionOutcome {
    let maes: Vec<f64> = per_seed
        .iter()
        .map(|r| r.per_domain.get("sphere").map_or(f64::NAN, |d| d.mae))
        .collect();
    ConditionOutcome {
        mean_sphere_mae: maes.iter().sum::<f64>() / maes.len() as f64,
        per_seed,
    }
}

/// Train joint and single-domain models across seeds and compare sphere-test
/// error. Runtime scales with steps * seeds; the desk-scale settings finish
/// in minutes.
pub fn joint_vs_single<T: Scalar>(opts: &JointVsSingleOptions) -> Result<JointVsSingleReport> {
    let mut joint_reports = Vec::new();
    let mut single_reports = Vec::new();
    for &seed in &opts.seeds {
        joint_reports.push(run_condition::<T>(opts, seed, true)?);
        single_reports.push(run_condition::<T>(opts, seed, false)?);
    }
    Ok(JointVsSingleReport {
        joint: outcome(joint_reports),
        single: outcome(single_reports),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ScarcityRow {
    pub sphere_train: usize,
    pub report: JointVsSingleReport,
    /// single MAE minus joint MAE on the scarce domain; positive means the
    /// jointly trained model is ahead.
    pub joint_advantage: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DataScarcityReport {
    pub rows: Vec<ScarcityRow>,
}

impl DataScarcityReport {
    pub fn render(&self) -> String {
        let mut out =
            String::from("sphere_train   joint MAE   single MAE   joint advantage\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{:<14} {:<11.4} {:<12.4} {:+.4}\n",
                r.sphere_train,
                r.report.joint.mean_sphere_mae,
                r.report.single.mean_sphere_mae,
                r.joint_advantage
            ));
        }
        out
    }
}

/// Sweep the scarce domain's training volume and rerun the joint-vs-single
/// comparison at each level, mirroring the data-volume ablation structure.
pub fn data_scarcity<T: Scalar>(
    base: &JointVsSingleOptions,
    sphere_volumes: &[usize],
) -> Result<DataScarcityReport> {
    let mut rows = Vec::new();
    for &volume in sphere_volumes {
        let mut opts = base.clone();
        opts.sphere_train = volume;
        opts.out_dir = base.out_dir.join(format!("volume{volume}"));
        let report = joint_vs_single::<T>(&opts)?;
        rows.push(ScarcityRow {
            sphere_train: volume,
            joint_advantage: report.single.mean_sphere_mae - report.joint.mean_sphere_mae,
            report,
        });
    }
    Ok(DataScarcityReport { rows })
}
