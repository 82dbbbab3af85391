//! Command-line surface: exit codes, error channels, and the documented
//! command examples on a miniature dataset.

use std::path::Path;
use std::process::{Command, Output};

fn ntc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ntc"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

const TINY_SYNTH: &str = r#"
[[class]]
name = "web"
count = 80
server_ports = [443, 80]
client_port_range = [32768, 32967]
pattern = "alternating"
flip_prob = 0.05
min_packets = 3
max_packets = 8
iat = { dist = "lognormal", mu = -4.0, sigma = 0.8 }
payload = { dist = "normal", mu = 600.0, sigma = 150.0 }
window = { dist = "normal", mu = 26000.0, sigma = 4000.0 }

[[class]]
name = "dns"
count = 60
server_ports = [53]
client_port_range = [32768, 32967]
pattern = "alternating"
flip_prob = 0.0
min_packets = 2
max_packets = 4
iat = { dist = "lognormal", mu = -6.0, sigma = 0.7 }
payload = { dist = "normal", mu = 90.0, sigma = 30.0 }
window = { dist = "constant", value = 0.0 }

[[class]]
name = "voice"
count = 24
server_port_range = [10000, 10099]
client_port_range = [32768, 32967]
pattern = "alternating"
flip_prob = 0.1
min_packets = 6
max_packets = 10
iat = { dist = "mix2", mu1 = 0.02, sigma1 = 0.004, mu2 = 0.0005, sigma2 = 0.0002, w1 = 0.7 }
payload = { dist = "normal", mu = 160.0, sigma = 20.0 }
window = { dist = "normal", mu = 4000.0, sigma = 900.0 }
"#;

const TINY_PLAN: &str = "seed = 3\n\n[[target]]\nclass = \"voice\"\ncount = 60\n";

const TINY_RUN: &str = r#"
output_dir = "out"

[dataset]
synthetic = "synth.toml"
seed = 9

[split]
train_fraction = 0.8
seed = 9

[augment]
plan = "plan.toml"

[generator]
hidden = 8
epochs = 4
lr = 0.02
batch_size = 8
window_top_k = 16

[classifier]
preset = "custom"
blocks = 1
heads = 2
model_dim = 16
ff_widths = [16]
head_widths = [16]
epochs = 2
batch_size = 64
lr = 0.002
dropout = 0.0
seed = 9
input_mode = "fs"
onehot_port_cap = 128
"#;

fn setup(dir: &Path) {
    std::fs::write(dir.join("synth.toml"), TINY_SYNTH).unwrap();
    std::fs::write(dir.join("plan.toml"), TINY_PLAN).unwrap();
    std::fs::write(dir.join("run.toml"), TINY_RUN).unwrap();
}

#[test]
fn missing_input_file_exits_2_with_stderr_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = ntc(dir.path(), &["ingest", "--input", "no-such-file.csv"]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("no-such-file.csv"), "stderr: {stderr}");
}

#[test]
fn synthetic_without_seed_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let out = ntc(dir.path(), &["ingest", "--synthetic", "synth.toml"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_flag_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = ntc(dir.path(), &["ingest", "--frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn ingest_synthetic_prints_class_counts_and_caches() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let out = ntc(
        dir.path(),
        &["ingest", "--synthetic", "synth.toml", "--seed", "7", "--out", "out"],
    );
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("web"));
    assert!(stdout.contains("voice"));
    assert!(stdout.contains("total 164"));
    assert!(dir.path().join("out/datasets/dataset.csv").exists());
}

#[test]
fn ingest_csv_roundtrip_of_cached_dataset() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    assert!(ntc(
        dir.path(),
        &["ingest", "--synthetic", "synth.toml", "--seed", "7", "--out", "out"],
    )
    .status
    .success());
    // The cached CSV loads back through the file path.
    let out = ntc(
        dir.path(),
        &["ingest", "--input", "out/datasets/dataset.csv", "--format", "csv", "--out", "again"],
    );
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("total 164"));
}

#[test]
fn invalid_plan_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    std::fs::write(dir.path().join("plan.toml"), "seed = 1\n[[target]]\nclass = \"nope\"\ncount = 10\n")
        .unwrap();
    let out = ntc(dir.path(), &["augment", "--config", "run.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope"));
}

#[test]
fn eval_on_missing_model_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let out = ntc(
        dir.path(),
        &["eval", "--model", "absent.bin", "--test", "also-absent.csv"],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn compare_requires_two_reports() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("one.rep"), "scheme x\n").unwrap();
    let out = ntc(dir.path(), &["compare", "--reports", "one.rep"]);
    assert_eq!(out.status.code(), Some(2));
}

/// The documented example sequence: augment in both modes, train both input
/// modes from one config, evaluate, compare.
#[test]
fn full_command_sequence_works() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());

    assert!(ntc(dir.path(), &["augment", "--config", "run.toml", "--mode", "lstm-kde"])
        .status
        .success());
    assert!(ntc(dir.path(), &["augment", "--config", "run.toml", "--mode", "oversample"])
        .status
        .success());
    assert!(dir.path().join("out/datasets/train_augmented.csv").exists());
    assert!(dir.path().join("out/datasets/train_oversampled.csv").exists());
    assert!(dir.path().join("out/models/generators.bin").exists());

    // Both input modes run from the same config.
    for (mode, scheme) in [("fs", "fs-run"), ("onehot", "onehot-run")] {
        let out = ntc(
            dir.path(),
            &[
                "train",
                "--config",
                "run.toml",
                "--input-mode",
                mode,
                "--scheme",
                scheme,
            ],
        );
        assert!(
            out.status.success(),
            "train {mode} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        let model = format!("out/models/classifier_{scheme}.bin");
        let report = format!("out/reports/eval_{scheme}.rep");
        let out = ntc(
            dir.path(),
            &[
                "eval",
                "--model",
                &model,
                "--test",
                "out/datasets/test.csv",
                "--out",
                &report,
            ],
        );
        assert!(out.status.success());
        let stdout = String::from_utf8_lossy(&out.stdout);
        assert!(stdout.contains("precision"), "missing metric table: {stdout}");
    }

    let out = ntc(
        dir.path(),
        &[
            "compare",
            "--reports",
            "out/reports/eval_fs-run.rep",
            "out/reports/eval_onehot-run.rep",
            "--out",
            "out/reports/compare.rep",
        ],
    );
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("fs-run") && stdout.contains("onehot-run"));
    assert!(dir.path().join("out/reports/compare.rep").exists());
}
