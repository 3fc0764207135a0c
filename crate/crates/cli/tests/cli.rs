//! End-to-end CLI tests: subcommands, exit codes, and run-directory layout.

use std::path::{Path, PathBuf};
use std::process::Command;

fn invrisk() -> Command {
    Command::new(env!("CARGO_BIN_EXE_invrisk"))
}

/// Tiny 2-class corpus plus a config sized for seconds-long runs.
fn make_workspace(dir: &Path) -> PathBuf {
    let gen = |root: &Path, seed: u64| {
        invrisk_core::synth::write_synthetic_dataset(root, &["alpha", "beta"], 12, 8, seed).unwrap()
    };
    gen(&dir.join("data/target_train"), 1);
    gen(&dir.join("data/target_test"), 2);
    invrisk_core::synth::write_synthetic_public_dataset(
        &dir.join("data/public"),
        &["alpha", "beta"],
        16,
        8,
        3,
    )
    .unwrap();
    let config = format!(
        r#"{{
  "name": "clitest",
  "datasets": {{
    "target_train": "{}",
    "target_test": "{}",
    "public": "{}"
  }},
  "target": {{ "arch": "plain_cnn:w4:d1", "train": {{ "epochs": 6, "batch_size": 8, "learning_rate": 0.02, "weight_decay": 0.0 }} }},
  "evaluation": {{ "arch": "mobile_cnn:w4:d1", "train": {{ "epochs": 4, "batch_size": 8, "learning_rate": 0.02, "weight_decay": 0.0 }} }},
  "proxy": {{ "train": {{ "epochs": 2, "batch_size": 8, "learning_rate": 0.01 }} }},
  "gan": {{ "train": {{ "latent_dim": 8, "epochs": 6, "batch_size": 8, "architecture_scale": 1 }} }},
  "attack": {{ "kind": "fv", "steps": 6, "step_size": 0.1, "jitter_pixels": 0 }},
  "n_per_class": 2,
  "n_trials": 1,
  "master_seed": 4242,
  "output_root": "{}",
  "backends": {{ "mode": "stub" }}
}}"#,
        dir.join("data/target_train").display(),
        dir.join("data/target_test").display(),
        dir.join("data/public").display(),
        dir.join("runs").display()
    );
    let path = dir.join("config.json");
    std::fs::write(&path, config).unwrap();
    path
}

#[test]
fn validate_reports_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = make_workspace(dir.path());
    let output = invrisk()
        .args(["validate", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert!(output.status.success(), "{output:?}");
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("config ok"), "{stdout}");
    assert!(stdout.contains("attack=fv"));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = make_workspace(dir.path());
    let text = std::fs::read_to_string(&config)
        .unwrap()
        .replace("\"master_seed\": 4242,", "\"master_seed\": 4242,\n  \"bogus_key\": true,");
    std::fs::write(&config, text).unwrap();
    let output = invrisk()
        .args(["validate", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2), "{output:?}");
    assert!(String::from_utf8_lossy(&output.stderr).contains("bogus_key"));
}

#[test]
fn missing_config_flag_exits_2() {
    let output = invrisk().arg("validate").output().unwrap();
    assert_eq!(output.status.code(), Some(2), "{output:?}");
}

#[test]
fn full_run_emits_report_and_rerun_requires_resume() {
    let dir = tempfile::tempdir().unwrap();
    let config = make_workspace(dir.path());
    let output = invrisk()
        .args(["run", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("risk level:"), "{stdout}");

    let run_dir = dir.path().join("runs/clitest-seed4242");
    for artifact in [
        "config.json",
        "state.json",
        "report.json",
        "report.csv",
        "summary.md",
        "models/target/params.bin",
        "gan/generator.bin",
        "reconstructions/trial-000/index.json",
        "captions/trial-000.captions.json",
        "metrics/trial-000.json",
    ] {
        assert!(run_dir.join(artifact).exists(), "missing {artifact}");
    }

    // a second `run` on the same directory must refuse and point at resume
    let output = invrisk()
        .args(["run", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2), "{output:?}");
    assert!(String::from_utf8_lossy(&output.stderr).contains("resume"));

    // resume on the finished directory reproduces the report line
    let output = invrisk()
        .args(["resume", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert!(output.status.success(), "{output:?}");
    assert!(String::from_utf8_lossy(&output.stdout).contains("risk level:"));
}

#[test]
fn staged_subcommands_walk_the_dag() {
    let dir = tempfile::tempdir().unwrap();
    let config = make_workspace(dir.path());
    let run_dir = dir.path().join("runs/clitest-seed4242");

    for (subcommand, artifact) in [
        ("train-target", "models/target/params.bin"),
        ("train-gan", "gan/generator.bin"),
        ("attack", "reconstructions/trial-000/index.json"),
        ("caption", "captions/trial-000.candidates.json"),
        ("evaluate", "metrics/trial-000.json"),
        ("report", "report.json"),
    ] {
        let output = invrisk()
            .args([subcommand, "--config"])
            .arg(&config)
            .output()
            .unwrap();
        assert!(
            output.status.success(),
            "{subcommand} failed: {}",
            String::from_utf8_lossy(&output.stderr)
        );
        assert!(
            run_dir.join(artifact).exists(),
            "{subcommand} did not produce {artifact}"
        );
    }
}

#[test]
fn unreachable_backend_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let config = make_workspace(dir.path());
    let text = std::fs::read_to_string(&config).unwrap().replace(
        r#""backends": { "mode": "stub" }"#,
        r#""backends": { "mode": "http", "caption_url": "http://127.0.0.1:1", "text_url": "http://127.0.0.1:1", "similarity_url": "http://127.0.0.1:1" }"#,
    );
    std::fs::write(&config, text).unwrap();
    let output = invrisk()
        .args(["run", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(4), "{output:?}");
}

#[test]
fn stub_backends_flag_overrides_http_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = make_workspace(dir.path());
    let text = std::fs::read_to_string(&config).unwrap().replace(
        r#""backends": { "mode": "stub" }"#,
        r#""backends": { "mode": "http", "caption_url": "http://127.0.0.1:1", "text_url": "http://127.0.0.1:1", "similarity_url": "http://127.0.0.1:1" }"#,
    );
    std::fs::write(&config, text).unwrap();
    let output = invrisk()
        .args(["run", "--stub-backends", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
}

#[test]
fn seed_override_changes_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let config = make_workspace(dir.path());
    let output = invrisk()
        .args(["train-target", "--seed", "777", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert!(output.status.success(), "{output:?}");
    assert!(dir.path().join("runs/clitest-seed777/models/target").exists());
}
