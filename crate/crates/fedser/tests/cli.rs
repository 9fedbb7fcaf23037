use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fedser::experiment::Summary;
use fedser::formats::{read_json, PlanRecord};

fn fedser(args: &[&str], cwd: &Path) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_fedser"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "fedser {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

const CONFIG: &str = r#"
name = "smoke"
trials = 2
folds = [0]
checkpoint_every = 1
workers = 2

[data]
kind = "manifest"
path = "corpus/manifest.csv"

[features]
mel_bins = 16
segment_frames = 16

[arch]
channels = [4, 8]
groups = 2

[partition]
mode = "per_speaker"
fold_strategy = "k_fold"
k = 3

[federation]
num_devices = 4
rounds = 2
"#;

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fedser(
        &[
            "synth",
            "--out",
            "corpus",
            "--samples-per-class",
            "12",
            "--speakers",
            "4",
            "--frames",
            "16",
            "--mel-bins",
            "16",
            "--csv",
        ],
        dir.path(),
    );
    fs::write(dir.path().join("smoke.toml"), CONFIG).unwrap();
    dir
}

#[test]
fn synth_partition_run_eval_compare() {
    let dir = setup();
    let d = dir.path();
    let manifest = fs::read_to_string(d.join("corpus/manifest.csv")).unwrap();
    assert_eq!(
        manifest.lines().next(),
        Some("path,speaker_id,label,session")
    );
    assert_eq!(manifest.lines().count(), 49);
    assert!(d.join("corpus/features/spk00_c0_0000.csv").exists());

    fedser(
        &[
            "partition",
            "--config",
            "smoke.toml",
            "--fold",
            "1",
            "--out",
            "plan.json",
        ],
        d,
    );
    let plan: PlanRecord = read_json(&d.join("plan.json")).unwrap();
    assert_eq!(plan.fold, 1);
    assert_eq!(plan.num_devices, 4);

    for run in ["a", "b"] {
        fedser(&["run", "--config", "smoke.toml", "--out-dir", run], d);
    }
    let metrics = fs::read(d.join("a/metrics.jsonl")).unwrap();
    assert!(!metrics.is_empty());
    assert_eq!(metrics, fs::read(d.join("b/metrics.jsonl")).unwrap());
    assert_eq!(
        fs::read(d.join("a/summary.json")).unwrap(),
        fs::read(d.join("b/summary.json")).unwrap()
    );
    let summary: Summary = read_json(&d.join("a/summary.json")).unwrap();
    assert!(summary.complete);
    assert_eq!(summary.folds[0].trial_ua.len(), 2);
    for f in [
        "config.resolved.toml",
        "fold00/trial01/model.fsp",
        "fold00/trial00/round0001.fsp",
    ] {
        assert!(d.join("a").join(f).exists(), "{f}");
    }

    let out = fedser(
        &[
            "eval",
            "--config",
            "smoke.toml",
            "--params",
            "a/fold00/trial00/model.fsp",
            "--fold",
            "0",
            "--out",
            "eval.json",
        ],
        d,
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("UA"));

    fedser(
        &[
            "run",
            "--config",
            "smoke.toml",
            "--out-dir",
            "c",
            "--beta",
            "0",
            "--rounds",
            "1",
        ],
        d,
    );
    let out = fedser(&["compare", "a/summary.json", "c/summary.json"], d);
    assert!(String::from_utf8_lossy(&out.stdout).contains("mean delta"));
}

#[test]
fn eval_refuses_other_architecture() {
    let dir = setup();
    let d = dir.path();
    fedser(
        &[
            "run",
            "--config",
            "smoke.toml",
            "--out-dir",
            "a",
            "--trials",
            "1",
        ],
        d,
    );
    fs::write(
        d.join("wide.toml"),
        CONFIG.replace("channels = [4, 8]", "channels = [4, 12]"),
    )
    .unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_fedser"))
        .args([
            "eval",
            "--config",
            "wide.toml",
            "--params",
            "a/fold00/trial00/model.fsp",
        ])
        .current_dir(d)
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("fingerprint"));
}

#[test]
fn bad_flags_are_rejected() {
    let dir = setup();
    for args in [
        &["run", "--config", "smoke.toml", "--participation", "0"][..],
        &["run", "--config", "smoke.toml", "--tau-min", "0.95"][..],
        &[
            "run",
            "--config",
            "smoke.toml",
            "--scheduler-mode",
            "sideways",
        ][..],
    ] {
        let out = Command::new(env!("CARGO_BIN_EXE_fedser"))
            .args(args)
            .current_dir(dir.path())
            .output()
            .unwrap();
        assert!(!out.status.success(), "{args:?}");
    }
}
