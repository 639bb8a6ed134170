//! End-to-end checks of the command-line binary: override handling, the
//! cached pipeline, scripted evaluation, and checkpoint compatibility
//! guards. Each test works in its own temporary run directory.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tasklang"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Tiny-budget override set shared by the pipeline tests.
const SMOKE: &[&str] = &[
    "--set",
    "corpus.dataset_n=40",
    "--set",
    "lm.d_lm=12",
    "--set",
    "mlm.steps=8",
    "--set",
    "mlm.batch_size=8",
    "--set",
    "vae.steps=8",
    "--set",
    "vae.batch_size=8",
    "--set",
    "vae.z_dim=4",
    "--set",
    "ppo.total_steps=60",
    "--set",
    "ppo.rollout_horizon=30",
    "--set",
    "ppo.epochs=1",
    "--set",
    "ppo.minibatch_size=8",
    "--set",
    "ppo.instruction_count=2",
    "--set",
    "eval.episodes=4",
];

#[test]
fn set_overrides_apply_on_both_sides_of_the_subcommand() {
    let out = run(&[
        "--set",
        "mlm.steps=123",
        "show-config",
        "--set",
        "vae.steps=77",
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("steps = 123"), "outer --set dropped:\n{text}");
    assert!(text.contains("steps = 77"), "inner --set dropped:\n{text}");
}

#[test]
fn later_set_occurrences_win_on_conflicting_keys() {
    let out = run(&["--set", "mlm.steps=1", "show-config", "--set", "mlm.steps=9"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("steps = 9"), "later override lost:\n{text}");
    assert!(!text.contains("steps = 1\n"), "earlier override survived:\n{text}");
}

#[test]
fn set_rejects_unknown_keys_and_bad_values() {
    let out = run(&["--set", "nonexistent.key=1", "show-config"]);
    assert!(!out.status.success());
    let out = run(&["--set", "mlm.steps=notanumber", "show-config"]);
    assert!(!out.status.success());
}

#[test]
fn pipeline_smoke_writes_all_artifacts_and_caches_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();

    let mut args: Vec<&str> = SMOKE.to_vec();
    args.extend_from_slice(&["--out", out_dir, "run-pipeline"]);
    let first = run(&args);
    assert!(first.status.success(), "pipeline failed: {}", stderr(&first));

    for f in [
        "resolved-config.toml",
        "dataset.jsonl",
        "tl.ckpt.json",
        "tl_curve.jsonl",
        "translator.ckpt.json",
        "translator_curve.jsonl",
        "policy.ckpt.json",
        "policy_curve.jsonl",
        "eval_report.json",
        "manifest.json",
    ] {
        assert!(dir.path().join(f).exists(), "missing artifact {f}");
    }

    let manifest_before = std::fs::read(dir.path().join("manifest.json")).unwrap();
    let second = run(&args);
    assert!(second.status.success(), "rerun failed: {}", stderr(&second));
    let after = std::fs::read(dir.path().join("manifest.json")).unwrap();
    assert_eq!(manifest_before, after, "cached rerun rewrote the manifest");
}

#[test]
fn scripted_policy_evaluation_reports_near_perfect_success() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "--out",
        dir.path().to_str().unwrap(),
        "--set",
        "eval.episodes=20",
        "eval",
        "--policy",
        "scripted",
        "--seeds",
        "3",
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(
        text.contains("1.000") || text.contains("0.9"),
        "scripted policy should be near-perfect:\n{text}"
    );
}

#[test]
fn checkpoint_loading_rejects_config_drift() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();

    let mut args: Vec<&str> = SMOKE.to_vec();
    args.extend_from_slice(&["--out", out_dir, "collect-dataset"]);
    let out = run(&args);
    assert!(out.status.success(), "collect: {}", stderr(&out));

    let mut args: Vec<&str> = SMOKE.to_vec();
    args.extend_from_slice(&["--out", out_dir, "train-tl"]);
    let out = run(&args);
    assert!(out.status.success(), "train-tl: {}", stderr(&out));

    // Same overrides except a different language-model width: the stored
    // generator checkpoint must be refused, not silently reinterpreted.
    let mut drifted: Vec<String> = SMOKE.iter().map(|s| s.to_string()).collect();
    for w in drifted.iter_mut() {
        if w == "lm.d_lm=12" {
            *w = "lm.d_lm=16".to_string();
        }
    }
    let mut cmd = bin();
    cmd.args(&drifted).args(["--out", out_dir, "train-translator"]);
    let out = cmd.output().unwrap();
    assert!(!out.status.success(), "config drift must be rejected");
    let err = stderr(&out);
    assert!(
        err.contains("incompatible") || err.contains("hash"),
        "unexpected error text: {err}"
    );
}
