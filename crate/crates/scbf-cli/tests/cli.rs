//! End-to-end tests of the command-line pipeline on small configurations.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_scbf")
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn tmp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("scbf-cli-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

const SMALL_CONFIG: &str = "example = \"pendulum\"\npoints = 8\ntransitions = 300\ndt = 0.01\nseed = 11\ntrials = 20\nepochs = 30\nhorizon_steps = 80\n";

#[test]
fn missing_dt_exits_2_and_names_the_field() {
    let dir = tmp_dir("missing-dt");
    std::fs::write(
        dir.join("bad.toml"),
        "example = \"pendulum\"\npoints = 8\ntransitions = 300\nseed = 11\n",
    )
    .unwrap();
    let out = run_in(&dir, &["sample", "--config", "bad.toml", "--out", "d.txt"]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("dt"), "stderr must name the field: {stderr}");
}

#[test]
fn unknown_variant_is_a_usage_error() {
    let dir = tmp_dir("bad-variant");
    std::fs::write(dir.join("cfg.toml"), SMALL_CONFIG).unwrap();
    let out = run_in(
        &dir,
        &["evaluate", "--config", "cfg.toml", "--variant", "zcbf"],
    );
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("zcbf"), "{stderr}");
}

#[test]
fn ddscbf_without_weights_fails() {
    let dir = tmp_dir("no-weights");
    std::fs::write(dir.join("cfg.toml"), SMALL_CONFIG).unwrap();
    let out = run_in(
        &dir,
        &["evaluate", "--config", "cfg.toml", "--variant", "ddscbf"],
    );
    assert_ne!(out.status.code(), Some(0));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("weights"), "{stderr}");
}

#[test]
fn single_point_smoke_run() {
    let dir = tmp_dir("smoke");
    std::fs::write(
        dir.join("one.toml"),
        "example = \"pendulum\"\npoints = 1\ntransitions = 5\ndt = 0.01\nseed = 3\n",
    )
    .unwrap();
    let out = run_in(&dir, &["sample", "--config", "one.toml", "--out", "one.txt"]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(dir.join("one.txt")).unwrap();
    assert_eq!(text.lines().count(), 2, "header plus one record");
    assert!(dir.join("one.txt.manifest").exists());
}

#[test]
fn cbf_variant_runs_without_weights() {
    let dir = tmp_dir("cbf-only");
    std::fs::write(dir.join("cfg.toml"), SMALL_CONFIG).unwrap();
    let out = run_in(
        &dir,
        &[
            "evaluate",
            "--config",
            "cfg.toml",
            "--variant",
            "cbf",
            "--out",
            "cbf.csv",
        ],
    );
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("cbf"), "{stdout}");
    assert!(dir.join("cbf.csv").exists());
}

#[test]
fn constant_target_toy_dataset_trains_to_tiny_loss() {
    let dir = tmp_dir("toy-train");
    // Hand-written dataset: four points, constant target 0.01.
    let mut text = String::from(
        "scbf-dataset v1 label=toy N=4 n=1 dt=1.0e-2 seed=0 mode=uniform region=-1.0,1.0;-1.0,1.0 excluded=0\n",
    );
    for (x, y) in [(-0.5, 0.1), (0.2, -0.3), (0.7, 0.6), (-0.9, -0.8)] {
        text.push_str(&format!("{x} {y} 1.0e-2\n"));
    }
    std::fs::write(dir.join("toy.txt"), text).unwrap();
    let out = run_in(
        &dir,
        &[
            "train",
            "--dataset",
            "toy.txt",
            "--out",
            "toy-weights.txt",
            "--epochs",
            "2000",
            "--learning-rate",
            "1e-3",
        ],
    );
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    let mse: f64 = stdout
        .split("final mse ")
        .nth(1)
        .and_then(|s| s.split(';').next())
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    assert!(mse <= 1e-6, "final mse {mse}");
    assert!(dir.join("toy-weights.txt").exists());
    assert!(dir.join("toy-weights.loss.csv").exists());
}

#[test]
fn corrupt_dataset_is_a_parse_error() {
    let dir = tmp_dir("corrupt");
    std::fs::write(dir.join("bad.txt"), "scbf-dataset v1 label=x N=2\n1 2 3\n").unwrap();
    let out = run_in(
        &dir,
        &["train", "--dataset", "bad.txt", "--out", "w.txt"],
    );
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("parse error"), "{stderr}");
}

#[test]
fn rerun_reproduces_primary_outputs_byte_for_byte() {
    let dir = tmp_dir("rerun");
    std::fs::write(dir.join("cfg.toml"), SMALL_CONFIG).unwrap();
    let sample = |out: &str| {
        let st = run_in(&dir, &["sample", "--config", "cfg.toml", "--out", out]);
        assert!(st.status.success());
        std::fs::read(dir.join(out)).unwrap()
    };
    let a = sample("a.txt");
    let mut b = sample("b.txt");
    // The header embeds the manifest path, which necessarily differs
    // between output names; normalize it before comparing.
    let a_text = String::from_utf8(a).unwrap().replace("a.txt", "OUT");
    let b_text = String::from_utf8(std::mem::take(&mut b))
        .unwrap()
        .replace("b.txt", "OUT");
    assert_eq!(a_text, b_text);

    // Identical command line twice: byte-identical.
    let c = sample("c.txt");
    let d = sample("c.txt");
    assert_eq!(c, d);

    // Train twice from the same dataset: identical weights.
    for out in ["w1.txt", "w2.txt"] {
        let st = run_in(
            &dir,
            &[
                "train", "--dataset", "c.txt", "--out", out, "--epochs", "20",
            ],
        );
        assert!(st.status.success());
    }
    let w1 = std::fs::read_to_string(dir.join("w1.txt"))
        .unwrap()
        .replace("w1.txt", "OUT");
    let w2 = std::fs::read_to_string(dir.join("w2.txt"))
        .unwrap()
        .replace("w2.txt", "OUT");
    assert_eq!(w1, w2);

    // Evaluation CSV reruns identically too.
    for out in ["e1.csv", "e1.csv"] {
        let st = run_in(
            &dir,
            &[
                "evaluate", "--config", "cfg.toml", "--variant", "cbf", "--out", out,
            ],
        );
        assert!(st.status.success());
    }
    let e_first = std::fs::read(dir.join("e1.csv")).unwrap();
    let st = run_in(
        &dir,
        &[
            "evaluate", "--config", "cfg.toml", "--variant", "cbf", "--out", "e1.csv",
        ],
    );
    assert!(st.status.success());
    let e_second = std::fs::read(dir.join("e1.csv")).unwrap();
    assert_eq!(e_first, e_second);
}

#[test]
fn out_dir_env_var_redirects_relative_outputs() {
    let dir = tmp_dir("outdir");
    let sub = dir.join("artifacts");
    std::fs::create_dir_all(&sub).unwrap();
    std::fs::write(
        dir.join("one.toml"),
        "example = \"pendulum\"\npoints = 1\ntransitions = 5\ndt = 0.01\nseed = 3\n",
    )
    .unwrap();
    let out = Command::new(bin())
        .args(["sample", "--config", "one.toml", "--out", "redirected.txt"])
        .current_dir(&dir)
        .env("SCBF_OUT_DIR", &sub)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(sub.join("redirected.txt").exists());
    assert!(!dir.join("redirected.txt").exists());
}

#[test]
fn diagnose_emits_expected_rows() {
    let dir = tmp_dir("diag");
    std::fs::write(dir.join("cfg.toml"), SMALL_CONFIG).unwrap();
    let out = run_in(
        &dir,
        &["diagnose", "--config", "cfg.toml", "--out", "diag.csv"],
    );
    assert!(out.status.success());
    let text = std::fs::read_to_string(dir.join("diag.csv")).unwrap();
    let lln_rows: Vec<&str> = text.lines().filter(|l| l.starts_with("lln_l1")).collect();
    assert_eq!(lln_rows.len(), 3);
    let errs: Vec<f64> = lln_rows
        .iter()
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
    assert_eq!(
        text.lines().filter(|l| l.starts_with("dt_bias")).count(),
        3
    );
}
