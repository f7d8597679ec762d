use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn dpaug(args: &[&str], envs: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dpaug"));
    cmd.args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("spawn dpaug")
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Fixture data plus a small run config; returns the config path.
fn setup(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    ok(dpaug(&["make-fixture", "--out", data.to_str().unwrap(), "--classes", "4"], &[]));
    let cfg = dir.join("run.toml");
    std::fs::write(
        &cfg,
        r#"teachers = 4
queries = 60
n_aug = 40

[paths]
private = "data/private.jsonl"
public = "data/public.jsonl"
vocab = "data/vocab.json"
out = "run"

[model]
dim = 8192
epochs = 5
"#,
    )
    .unwrap();
    cfg
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = setup(tmp.path());
    let c = cfg.to_str().unwrap();
    assert_eq!(dpaug(&["partition", "--config", c, "--teachers", "0"], &[]).status.code(), Some(2));
    assert_eq!(
        dpaug(&["run", "--config", c, "--sigma-kd", "6", "--epsilon-kd", "4"], &[]).status.code(),
        Some(2)
    );
    // Distillation before any teachers exist.
    assert_eq!(dpaug(&["distill", "--config", c], &[]).status.code(), Some(2));
    assert_eq!(dpaug(&["no-such-command"], &[]).status.code(), Some(2));
}

#[test]
fn staged_run_with_access_audit() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = setup(tmp.path());
    let c = cfg.to_str().unwrap();
    let audit = tmp.path().join("audit.log");
    let env = [("DPAUG_ACCESS_AUDIT", audit.as_path())];
    for stage in ["ingest", "partition", "train-teachers", "distill", "tutor", "generate", "select"] {
        ok(dpaug(&[stage, "--config", c], &env));
    }
    let run = tmp.path().join("run");
    let report = ok(dpaug(&["account", "--run", run.to_str().unwrap()], &env));
    assert!(report.contains("KD"), "{report}");
    assert!(run.join("augmented.jsonl").is_file());
    assert!(run.join("manifest.json").is_file());

    let log = std::fs::read_to_string(&audit).unwrap_or_default();
    let readers: Vec<&str> = log.lines().filter_map(|l| l.split('\t').next()).collect();
    for stage in ["distill", "generate", "select", "account"] {
        assert!(!readers.contains(&stage), "{stage} opened the private corpus: {log}");
    }
    assert!(readers.contains(&"ingest"));

    // Spending stages do not run twice against the same ledger.
    assert_ne!(dpaug(&["distill", "--config", c], &[]).status.code(), Some(0));
    assert_ne!(dpaug(&["tutor", "--config", c], &[]).status.code(), Some(0));
}

#[test]
fn run_refuses_to_overwrite_without_force() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = setup(tmp.path());
    let c = cfg.to_str().unwrap();
    ok(dpaug(&["run", "--config", c], &[]));
    assert_eq!(dpaug(&["run", "--config", c], &[]).status.code(), Some(2));
    ok(dpaug(&["run", "--config", c, "--force"], &[]));
}

#[test]
fn eval_grid_writes_series() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("grid.toml");
    std::fs::write(
        &cfg,
        r#"[fixture]
classes = 3
private_per_class = 30
test_per_class = 10
public_per_class = 200
public_test = 30

[base]
teachers = 3
queries = 40
n_aug = 30

[base.model]
dim = 4096
epochs = 4

[downstream]
dim = 4096
epochs = 4

[grid]
epsilons = [2.0]
teacher_counts = [3]
train_sizes = [30]
seeds = [0]
methods = ["private", "random", "ours"]
"#,
    )
    .unwrap();
    let out = tmp.path().join("grid");
    ok(dpaug(&["eval", "grid", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()], &[]));
    for f in ["report.json", "downstream.csv", "teachers.csv", "distribution.csv"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let rows = std::fs::read_to_string(out.join("downstream.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 3);
}
