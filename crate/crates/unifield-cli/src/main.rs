//! Command-line driver: synthetic dataset generation, training, evaluation,
//! prediction, and the finite-difference verification suites.

mod config;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use unifield::checkpoint;
use unifield::data::io::{
    build_registry, load_sample, load_split, write_dataset, DatasetSpec, Manifest,
    SyntheticDomain,
};
use unifield::data::{DomainRegistry, MixedBatcher, Sample, Split};
use unifield::error::Error;
use unifield::model::UniFieldModel;
use unifield::scalar::Scalar;
use unifield::train::{evaluate, train, OptimState, TrainOptions};

use config::{resolve_data_path, RunConfig};

/// Exit codes: 0 success, 2 usage (clap), 3 config, 4 data, 5 numerical.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Config(String),
    Data(String),
    Numerical(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Config(_) => 3,
            CliError::Data(_) => 4,
            CliError::Numerical(_) => 5,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match &e {
            Error::Config(_) => CliError::Config(e.to_string()),
            Error::NonFiniteLoss { .. } | Error::GradCheck(_) => {
                CliError::Numerical(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "unifield", version, about = "Multi-domain surface-pressure model")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DomainArg {
    Cylinder,
    Sphere,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum GradcheckScale {
    Ops,
    Layers,
    EndToEnd,
    All,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset (samples + manifest) deterministically.
    GenSynthetic {
        #[arg(long)]
        domain: DomainArg,
        /// Training samples to generate.
        #[arg(long)]
        count: usize,
        /// Held-out samples to generate.
        #[arg(long, default_value_t = 0)]
        test_count: usize,
        #[arg(long, default_value_t = 1024)]
        n_points: usize,
        /// Gaussian noise added to the pressure coefficient.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Write packed binary samples instead of text.
        #[arg(long, default_value_t = false)]
        binary: bool,
        /// Cylinder-only condition warp coefficient.
        #[arg(long, default_value_t = 0.0)]
        warp: f64,
    },
    /// Train a model from a run config (optionally resuming a checkpoint).
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Dotted-path overrides, e.g. --set train.steps=500
        #[arg(long = "set")]
        overrides: Vec<String>,
        /// Overrides train.seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides output.dir.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Resume from a checkpoint saved by a previous run.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the test split of manifests.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, required = true)]
        manifest: Vec<PathBuf>,
        /// Chunked-inference group size.
        #[arg(long, default_value_t = 8192)]
        chunk: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Metrics JSON output path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict the pressure field for one sample file.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Sample file (.ufs or .ufsb).
        #[arg(long)]
        sample: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8192)]
        chunk: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the finite-difference gradient suites.
    Gradcheck {
        #[arg(long, value_enum, default_value_t = GradcheckScale::All)]
        scale: GradcheckScale,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cmd: Cmd) -> Result<(), CliError> {
    match cmd {
        Cmd::GenSynthetic {
            domain,
            count,
            test_count,
            n_points,
            noise,
            seed,
            out,
            binary,
            warp,
        } => {
            let spec = DatasetSpec {
                domain: match domain {
                    DomainArg::Cylinder => SyntheticDomain::Cylinder,
                    DomainArg::Sphere => SyntheticDomain::Sphere,
                },
                train_count: count,
                test_count,
                n_points,
                noise_std: noise,
                seed,
                binary,
                warp,
            };
            let manifest = write_dataset(&spec, &out)?;
            println!(
                "wrote {} train + {} test samples, manifest {}",
                count,
                test_count,
                manifest.display()
            );
            Ok(())
        }
        Cmd::Train {
            config,
            overrides,
            seed,
            out,
            checkpoint,
        } => {
            let mut run_config = RunConfig::load(&config, &overrides)?;
            if let Some(s) = seed {
                run_config.train.seed = s;
            }
            if let Some(o) = out {
                run_config.output.dir = o;
            }
            match run_config.train.dtype.as_str() {
                "f64" => cmd_train::<f64>(run_config, checkpoint),
                "f32" => cmd_train::<f32>(run_config, checkpoint),
                other => Err(CliError::Config(format!(
                    "train.dtype must be f32 or f64, got '{other}'"
                ))),
            }
        }
        Cmd::Eval {
            checkpoint,
            manifest,
            chunk,
            seed,
            out,
        } => match checkpoint_dtype(&checkpoint)?.as_str() {
            "f64" => cmd_eval::<f64>(&checkpoint, &manifest, chunk, seed, out.as_deref()),
            _ => cmd_eval::<f32>(&checkpoint, &manifest, chunk, seed, out.as_deref()),
        },
        Cmd::Predict {
            checkpoint,
            sample,
            out,
            chunk,
            seed,
        } => match checkpoint_dtype(&checkpoint)?.as_str() {
            "f64" => cmd_predict::<f64>(&checkpoint, &sample, &out, chunk, seed),
            _ => cmd_predict::<f32>(&checkpoint, &sample, &out, chunk, seed),
        },
        Cmd::Gradcheck { scale } => cmd_gradcheck(scale),
    }
}

fn checkpoint_dtype(path: &Path) -> Result<String, CliError> {
    checkpoint::peek_dtype(path).map_err(CliError::from)
}

fn load_manifests(paths: &[PathBuf]) -> Result<Vec<Manifest>, CliError> {
    paths
        .iter()
        .map(|p| Manifest::load(&resolve_data_path(p)).map_err(CliError::from))
        .collect()
}

fn load_all_samples(
    manifests: &[Manifest],
    registry: &DomainRegistry,
    split: Split,
) -> Result<Vec<Sample>, CliError> {
    let mut out = Vec::new();
    for m in manifests {
        out.extend(load_split(m, registry, split)?);
    }
    Ok(out)
}

fn cmd_train<T: Scalar>(
    run_config: RunConfig,
    resume: Option<PathBuf>,
) -> Result<(), CliError> {
    if run_config.data.train_manifests.is_empty() {
        return Err(CliError::Config(
            "data.train_manifests must list at least one manifest".into(),
        ));
    }
    let train_manifests = load_manifests(&run_config.data.train_manifests)?;

    let (mut model, mut optim, train_samples) = match &resume {
        None => {
            let registry = build_registry(&train_manifests)?;
            let train_samples = load_all_samples(&train_manifests, &registry, Split::Train)?;
            let mut model = UniFieldModel::<T>::build(run_config.model.clone(), registry)?;
            model.fit_flow_standardization(&train_samples);
            let optim = OptimState::new(&model.store, run_config.train.adam());
            (model, optim, train_samples)
        }
        Some(path) => {
            let (model, optim) = checkpoint::load::<T>(path)?;
            let optim = optim.ok_or_else(|| {
                CliError::Data(format!(
                    "checkpoint {} lacks optimizer state; cannot resume",
                    path.display()
                ))
            })?;
            // standardization constants come from the checkpoint registry
            let train_samples =
                load_all_samples(&train_manifests, &model.registry, Split::Train)?;
            (model, optim, train_samples)
        }
    };

    let eval_samples = if run_config.data.eval_manifests.is_empty() {
        load_all_samples(&train_manifests, &model.registry, Split::Test)?
    } else {
        let eval_manifests = load_manifests(&run_config.data.eval_manifests)?;
        load_all_samples(&eval_manifests, &model.registry, Split::Test)?
    };

    let mut batcher = MixedBatcher::new(
        train_samples,
        run_config.train.batch_size,
        run_config.data.points_per_sample,
        run_config.train.seed,
    )?;
    // deterministic resume: skip the batches earlier steps consumed
    for _ in 0..optim.step {
        batcher.next_batch();
    }

    let out_dir = run_config.output.dir.clone();
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", out_dir.display())))?;
    std::fs::write(out_dir.join("config.toml"), run_config.resolved_toml())
        .map_err(|e| CliError::Data(e.to_string()))?;

    let opts = TrainOptions {
        steps: run_config.train.steps,
        stop_at: run_config.train.stop_at,
        adam: run_config.train.adam(),
        clip_norm: run_config.train.clip_norm,
        eval_every: run_config.train.eval_every,
        eval_chunk: run_config.train.chunk,
        out_dir: out_dir.clone(),
        eval_seed: run_config.train.seed,
    };

    println!(
        "training: {} parameters, {} train samples, {} eval samples, dtype {}",
        model.parameter_count(),
        batcher.sample_count(),
        eval_samples.len(),
        T::dtype_name()
    );
    let summary = train(&mut model, &mut batcher, &eval_samples, &mut optim, &opts)?;
    println!(
        "done: {} steps, log {}, last checkpoint {}",
        summary.steps_run,
        summary.log_path.display(),
        summary.last_checkpoint.display()
    );
    if let Some(m) = &summary.final_metrics {
        println!("final eval: mse {:.6} mae {:.6}", m.mse, m.mae);
        for (name, d) in &m.per_domain {
            println!("  {name}: mse {:.6} mae {:.6}", d.mse, d.mae);
        }
    }
    Ok(())
}

fn cmd_eval<T: Scalar>(
    ckpt: &Path,
    manifests: &[PathBuf],
    chunk: usize,
    seed: u64,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let (model, _) = checkpoint::load::<T>(ckpt)?;
    let manifests = load_manifests(manifests)?;
    let samples = load_all_samples(&manifests, &model.registry, Split::Test)?;
    if samples.is_empty() {
        return Err(CliError::Data("no test-split samples to evaluate".into()));
    }
    let report = evaluate(&model, &samples, chunk, seed)?;
    let json = serde_json::to_string_pretty(&report).expect("metrics serialize");
    match out {
        Some(path) => {
            std::fs::write(path, &json).map_err(|e| CliError::Data(e.to_string()))?;
            println!("wrote {}", path.display());
        }
        None => println!("{json}"),
    }
    Ok(())
}

fn cmd_predict<T: Scalar>(
    ckpt: &Path,
    sample_path: &Path,
    out: &Path,
    chunk: usize,
    seed: u64,
) -> Result<(), CliError> {
    let (model, _) = checkpoint::load::<T>(ckpt)?;
    let sample = load_sample(&resolve_data_path(sample_path), &model.registry)?;
    let pred = model.predict_chunked(&sample.points, sample.domain, &sample.flow, chunk, seed)?;

    let mut text = String::from("# x y z p_pred p_true error\n");
    for (i, (&yp, &yt)) in pred.iter().zip(&sample.target).enumerate() {
        let p = sample.points.point(i);
        text.push_str(&format!(
            "{} {} {} {} {} {}\n",
            p[0],
            p[1],
            p[2],
            yp,
            yt,
            yp - yt
        ));
    }
    std::fs::write(out, text).map_err(|e| CliError::Data(e.to_string()))?;
    println!("wrote {} predictions to {}", sample.len(), out.display());
    Ok(())
}

fn cmd_gradcheck(scale: GradcheckScale) -> Result<(), CliError> {
    let summary = match scale {
        GradcheckScale::Ops => unifield::gradcheck::op_suite(),
        GradcheckScale::Layers => unifield::gradcheck::layer_suite(),
        GradcheckScale::EndToEnd => unifield::gradcheck::end_to_end_suite(),
        GradcheckScale::All => unifield::gradcheck::run_all(),
    };
    print!("{}", summary.render());
    if summary.passed() {
        println!("all gradient checks passed");
        Ok(())
    } else {
        Err(CliError::Numerical(
            "one or more gradient checks failed".into(),
        ))
    }
}
