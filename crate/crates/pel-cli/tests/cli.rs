//! End-to-end tests of the `pel` binary: subcommands, output files, exit
//! codes, and rerun determinism.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pel_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pel"))
}

/// A small config so every invocation stays fast.
fn write_small_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("run.cfg");
    fs::write(
        &path,
        "\
# small smoke-test setup
n_classes=4
n_super_groups=2
input_dim=8
samples_per_class_train=6
samples_per_class_test=4
hidden_dims=
feature_dim=8
epochs=2
",
    )
    .unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    pel_bin().args(args).output().expect("binary runs")
}

fn assert_code(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn train_writes_metrics_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small_config(dir.path());
    let out_dir = dir.path().join("out");
    let out = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    let metrics = fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("epoch,train_loss,train_accuracy,test_accuracy,prototype_drift,wall_seconds"));
    assert_eq!(metrics.lines().count(), 1 + 2, "one row per epoch");
    assert!(out_dir.join("model.bin").exists());
    assert!(out_dir.join("bank.txt").exists());
}

#[test]
fn train_rerun_is_bit_identical_except_wall_clock() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small_config(dir.path());
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out_dir in [&out_a, &out_b] {
        let out = run(&[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert_code(&out, 0);
    }
    assert_eq!(
        fs::read(out_a.join("model.bin")).unwrap(),
        fs::read(out_b.join("model.bin")).unwrap()
    );
    assert_eq!(
        fs::read(out_a.join("bank.txt")).unwrap(),
        fs::read(out_b.join("bank.txt")).unwrap()
    );
    let rows = |p: &Path| -> Vec<String> {
        fs::read_to_string(p.join("metrics.csv"))
            .unwrap()
            .lines()
            .map(|l| {
                // Strip the wall-clock column; it is the one legitimate
                // difference between reruns.
                let fields: Vec<&str> = l.split(',').collect();
                fields[..fields.len() - 1].join(",")
            })
            .collect()
    };
    assert_eq!(rows(&out_a), rows(&out_b));
}

#[test]
fn gen_data_round_trips_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small_config(dir.path());
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out_dir in [&out_a, &out_b] {
        let out = run(&[
            "gen-data",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert_code(&out, 0);
    }
    for name in ["train.csv", "test.csv"] {
        assert_eq!(
            fs::read(out_a.join(name)).unwrap(),
            fs::read(out_b.join(name)).unwrap(),
            "{name} differs between reruns"
        );
    }
    let train = pel::data::load_csv(&out_a.join("train.csv")).unwrap();
    assert_eq!(train.len(), 4 * 6);
    let test = pel::data::load_csv(&out_a.join("test.csv")).unwrap();
    assert_eq!(test.len(), 4 * 4);
}

#[test]
fn sweep_beta_emits_one_row_per_beta() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small_config(dir.path());
    let out_dir = dir.path().join("out");
    let out = run(&[
        "sweep-beta",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--set",
        "sweep_betas=4,6,8",
    ]);
    assert_code(&out, 0);
    let csv = fs::read_to_string(out_dir.join("beta_sweep.csv")).unwrap();
    assert!(csv.starts_with("beta,test_accuracy,status"));
    assert_eq!(csv.lines().count(), 1 + 3);
    assert_eq!(csv.matches(",ok").count(), 3);
}

#[test]
fn bench_noise_writes_the_grid_and_workers_do_not_change_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small_config(dir.path());
    let seq_dir = dir.path().join("seq");
    let par_dir = dir.path().join("par");
    for (out_dir, workers) in [(&seq_dir, "1"), (&par_dir, "2")] {
        let out = pel_bin()
            .env("PEL_WORKERS", workers)
            .args([
                "bench-noise",
                "--config",
                cfg.to_str().unwrap(),
                "--out",
                out_dir.to_str().unwrap(),
                "--set",
                "noise_rates=0,0.3",
                "--set",
                "n_replicates=2",
                "--set",
                "epochs=1",
            ])
            .output()
            .expect("binary runs");
        assert_code(&out, 0);
    }
    let csv = fs::read_to_string(seq_dir.join("noise_grid.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 3, "2 rates x 3 strategies");
    assert_eq!(csv.matches(",ok").count(), 6);
    assert_eq!(
        fs::read(seq_dir.join("noise_grid.csv")).unwrap(),
        fs::read(par_dir.join("noise_grid.csv")).unwrap(),
        "worker-slot count changed the results"
    );
}

#[test]
fn unknown_config_key_exits_2_and_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "betta=6\n").unwrap();
    let out = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_code(&out, 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("betta"), "stderr: {stderr}");
}

#[test]
fn missing_config_file_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "train",
        "--config",
        "/nonexistent/run.cfg",
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_code(&out, 2);
}

#[test]
fn divergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small_config(dir.path());
    let out = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
        "--set",
        "lr=1e18",
        "--set",
        "epochs=50",
    ]);
    assert_code(&out, 3);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("diverged"), "stderr: {stderr}");
}

#[test]
fn gradcheck_passes_and_lists_every_group() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = run(&["gradcheck", "--out", out_dir.to_str().unwrap()]);
    assert_code(&out, 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    for group in [
        "encoder0.weight",
        "encoder0.bias",
        "encoder1.weight",
        "encoder1.bias",
        "head.weight",
        "head.bias",
    ] {
        assert!(stdout.contains(group), "missing group {group}: {stdout}");
    }
    assert!(stdout.contains("PASS"));
    assert!(out_dir.join("gradcheck.csv").exists());
}

#[test]
fn perturbed_gradients_exit_4() {
    let out = run(&["gradcheck", "--inject-grad-error", "0.5"]);
    assert_code(&out, 4);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("FAIL"));
}
