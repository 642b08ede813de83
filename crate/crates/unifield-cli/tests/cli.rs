//! End-to-end command tests driving the compiled binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_unifield"))
}

fn workdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("unifield-cli-{tag}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("process runs");
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn gen(dir: &Path, domain: &str, count: usize, test_count: usize, n_points: usize, seed: u64) {
    run_ok(
        bin()
            .arg("gen-synthetic")
            .args(["--domain", domain])
            .args(["--count", &count.to_string()])
            .args(["--test-count", &test_count.to_string()])
            .args(["--n-points", &n_points.to_string()])
            .args(["--seed", &seed.to_string()])
            .args(["--out", dir.to_str().unwrap()]),
    );
}

fn write_config(path: &Path, body: &str) {
    fs::write(path, body).unwrap();
}

#[test]
fn gen_writes_counted_files_and_is_byte_deterministic() {
    let root = workdir("gen");
    let a = root.join("a");
    let b = root.join("b");
    gen(&a, "cylinder", 10, 0, 32, 7);
    gen(&b, "cylinder", 10, 0, 32, 7);

    let files: Vec<_> = fs::read_dir(a.join("samples")).unwrap().collect();
    assert_eq!(files.len(), 10);
    assert!(a.join("manifest.ufm").exists());
    assert_eq!(
        fs::read(a.join("manifest.ufm")).unwrap(),
        fs::read(b.join("manifest.ufm")).unwrap()
    );
    assert_eq!(
        fs::read(a.join("samples/train_0003.ufs")).unwrap(),
        fs::read(b.join("samples/train_0003.ufs")).unwrap()
    );
}

#[test]
fn unknown_domain_is_usage_error() {
    let root = workdir("baddomain");
    let out = bin()
        .arg("gen-synthetic")
        .args(["--domain", "torus"])
        .args(["--count", "1"])
        .args(["--out", root.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert_eq!(out.status.code(), Some(2));
}

fn train_config(root: &Path, manifests: &[&Path], steps: usize) -> PathBuf {
    let lists: Vec<String> = manifests
        .iter()
        .map(|m| format!("\"{}\"", m.display()))
        .collect();
    let cfg = root.join("run.toml");
    write_config(
        &cfg,
        &format!(
            r#"
[model]
preset = "tiny"
k = 8
seed = 3

[data]
train_manifests = [{}]
points_per_sample = 24

[train]
steps = {steps}
batch_size = 2
lr = 2e-3
eval_every = {steps}
chunk = 64
seed = 5

[output]
dir = "{}"
"#,
            lists.join(", "),
            root.join("run").display()
        ),
    );
    cfg
}

#[test]
fn train_eval_predict_round_trip() {
    let root = workdir("pipeline");
    let cyl = root.join("cyl");
    let sph = root.join("sph");
    gen(&cyl, "cylinder", 4, 2, 24, 1);
    gen(&sph, "sphere", 4, 2, 24, 2);

    let cfg = train_config(
        &root,
        &[&cyl.join("manifest.ufm"), &sph.join("manifest.ufm")],
        6,
    );
    let out = run_ok(bin().args(["train", "--config", cfg.to_str().unwrap()]));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("cylinder:"), "{stdout}");
    assert!(stdout.contains("sphere:"), "{stdout}");

    let run_dir = root.join("run");
    assert!(run_dir.join("config.toml").exists());
    assert!(run_dir.join("train_log.jsonl").exists());
    let ckpt = run_dir.join("last.ufckpt");
    assert!(ckpt.exists());

    // eval reproduces the final logged metrics
    let metrics_path = root.join("metrics.json");
    run_ok(bin().args([
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--manifest",
        cyl.join("manifest.ufm").to_str().unwrap(),
        "--manifest",
        sph.join("manifest.ufm").to_str().unwrap(),
        "--chunk",
        "64",
        "--seed",
        "5",
        "--out",
        metrics_path.to_str().unwrap(),
    ]));
    let eval_metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&metrics_path).unwrap()).unwrap();
    for key in ["mse", "mae", "rel_l2_percent", "rel_l1_percent"] {
        assert!(eval_metrics.get(key).is_some(), "missing {key}");
        for domain in ["cylinder", "sphere"] {
            assert!(
                eval_metrics["per_domain"][domain].get(key).is_some(),
                "missing per-domain {domain}.{key}"
            );
        }
    }

    let log = fs::read_to_string(run_dir.join("train_log.jsonl")).unwrap();
    let final_eval: serde_json::Value = log
        .lines()
        .filter_map(|l| serde_json::from_str::<serde_json::Value>(l).ok())
        .rfind(|v| v["kind"] == "eval")
        .unwrap();
    let logged = final_eval["metrics"]["mae"].as_f64().unwrap();
    let fresh = eval_metrics["mae"].as_f64().unwrap();
    assert!(
        (logged - fresh).abs() <= 1e-6,
        "eval mismatch: logged {logged} vs fresh {fresh}"
    );

    // predict a single sample file with all columns
    let pred_path = root.join("pred.txt");
    run_ok(bin().args([
        "predict",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--sample",
        cyl.join("samples/test_0000.ufs").to_str().unwrap(),
        "--out",
        pred_path.to_str().unwrap(),
        "--chunk",
        "64",
    ]));
    let pred = fs::read_to_string(&pred_path).unwrap();
    let mut lines = pred.lines();
    assert_eq!(lines.next().unwrap(), "# x y z p_pred p_true error");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 24);
    let first: Vec<f64> = rows[0]
        .split_whitespace()
        .map(|t| t.parse().unwrap())
        .collect();
    assert_eq!(first.len(), 6);
    assert!((first[3] - first[4] - first[5]).abs() < 1e-12);
}

#[test]
fn single_domain_report_omits_other_domains() {
    let root = workdir("single");
    let cyl = root.join("cyl");
    gen(&cyl, "cylinder", 3, 1, 24, 4);
    let cfg = train_config(&root, &[&cyl.join("manifest.ufm")], 4);
    let out = run_ok(bin().args(["train", "--config", cfg.to_str().unwrap()]));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("cylinder:"));
    assert!(!stdout.contains("sphere:"));
}

#[test]
fn resume_continues_step_counter() {
    let root = workdir("resume");
    let cyl = root.join("cyl");
    gen(&cyl, "cylinder", 4, 1, 24, 9);
    let cfg = train_config(&root, &[&cyl.join("manifest.ufm")], 8);

    // first leg stops early
    run_ok(bin().args([
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--set",
        "train.stop_at=3",
    ]));
    let run_dir = root.join("run");
    let ckpt = run_dir.join("last.ufckpt");
    assert!(ckpt.exists());

    // resumed leg finishes the schedule
    run_ok(bin().args([
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
    ]));
    let log = fs::read_to_string(run_dir.join("train_log.jsonl")).unwrap();
    let steps: Vec<u64> = log
        .lines()
        .filter_map(|l| serde_json::from_str::<serde_json::Value>(l).ok())
        .filter(|v| v["kind"] == "step")
        .map(|v| v["step"].as_u64().unwrap())
        .collect();
    // counter continues exactly: 1..=3 then 4..=8 with no repeats
    assert_eq!(steps, (1..=8).collect::<Vec<u64>>());
}

#[test]
fn config_errors_use_exit_code_three() {
    let root = workdir("cfgerr");
    let cfg = root.join("bad.toml");
    write_config(&cfg, "[train]\nstepz = 5\n");
    let out = bin()
        .args(["train", "--config", cfg.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));

    // well-formed config but missing manifests -> config error as well
    let cfg2 = root.join("empty.toml");
    write_config(&cfg2, "[train]\nsteps = 1\n");
    let out = bin()
        .args(["train", "--config", cfg2.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn data_errors_use_exit_code_four() {
    let out = bin()
        .args(["eval", "--checkpoint", "/nonexistent.ufckpt", "--manifest", "/nope.ufm"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn gradcheck_ops_pass_quickly() {
    let out = run_ok(bin().args(["gradcheck", "--scale", "ops"]));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("all gradient checks passed"));
    assert!(stdout.contains("matmul"));
}

#[test]
fn f32_training_and_eval_round_trip() {
    let root = workdir("f32");
    let cyl = root.join("cyl");
    gen(&cyl, "cylinder", 3, 1, 24, 17);
    let cfg = train_config(&root, &[&cyl.join("manifest.ufm")], 4);
    run_ok(bin().args([
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--set",
        "train.dtype=f32",
    ]));
    let ckpt = root.join("run/last.ufckpt");
    // eval dispatches on the checkpoint's recorded dtype
    let out = run_ok(bin().args([
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--manifest",
        cyl.join("manifest.ufm").to_str().unwrap(),
        "--chunk",
        "64",
    ]));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("\"mae\""), "{stdout}");
}

#[test]
fn data_root_env_var_resolves_relative_manifests() {
    let root = workdir("dataroot");
    let cyl = root.join("cyl");
    gen(&cyl, "cylinder", 2, 1, 24, 13);
    let cfg = root.join("run.toml");
    write_config(
        &cfg,
        &format!(
            r#"
[model]
preset = "tiny"
k = 8

[data]
train_manifests = ["cyl/manifest.ufm"]
points_per_sample = 24

[train]
steps = 2
batch_size = 2
chunk = 64

[output]
dir = "{}"
"#,
            root.join("run").display()
        ),
    );
    run_ok(
        bin()
            .env("UNIFIELD_DATA_ROOT", &root)
            .args(["train", "--config", cfg.to_str().unwrap()]),
    );
    assert!(root.join("run/last.ufckpt").exists());
}

#[test]
fn chunk_flag_changes_grouping_not_output_length() {
    let root = workdir("chunk");
    let cyl = root.join("cyl");
    gen(&cyl, "cylinder", 3, 1, 48, 11);
    let cfg = train_config(&root, &[&cyl.join("manifest.ufm")], 3);
    run_ok(bin().args(["train", "--config", cfg.to_str().unwrap()]));
    let ckpt = root.join("run/last.ufckpt");

    for chunk in ["16", "48"] {
        let pred_path = root.join(format!("pred-{chunk}.txt"));
        run_ok(bin().args([
            "predict",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--sample",
            cyl.join("samples/test_0000.ufs").to_str().unwrap(),
            "--out",
            pred_path.to_str().unwrap(),
            "--chunk",
            chunk,
        ]));
        let pred = fs::read_to_string(&pred_path).unwrap();
        assert_eq!(pred.lines().count(), 49); // header + 48 points
    }
}
