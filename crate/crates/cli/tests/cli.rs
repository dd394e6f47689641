use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const MINIMAL: &str = r#"
schema_version = 1
variant = "PR-FL"
clients = 3
seed = 5

[network]
client_upload = [3.0, 1.0, 0.5]
client_download = [12.0, 8.0, 4.0]

[density]
pruning_interval = 3

[schedule]
max_rounds = 8

[data]
samples_per_client = 40
test_samples = 100
"#;

fn prfl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prfl")).args(args).output().unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn metrics_rows(dir: &Path) -> usize {
    fs::read_to_string(dir.join("metrics.csv")).unwrap().lines().count() - 1
}

#[test]
fn run_writes_metrics_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "run.toml", MINIMAL);
    let out = tmp.path().join("out");
    let res = prfl(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(metrics_rows(&out) >= 1);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["variant"], "PR-FL");
    assert_eq!(summary["seed"], 5);
}

#[test]
fn overrides_apply() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "run.toml", MINIMAL);
    let out = tmp.path().join("out");
    let res = prfl(&[
        "run",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "11",
        "--variant",
        "FedAsyn",
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["variant"], "FedAsyn");
    assert_eq!(summary["seed"], 11);
}

#[test]
fn repeated_runs_write_identical_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "run.toml", MINIMAL);
    let mut files = Vec::new();
    for name in ["a", "b"] {
        let out = tmp.path().join(name);
        assert!(prfl(&["run", "--config", &cfg, "--out", out.to_str().unwrap()])
            .status
            .success());
        files.push(fs::read(out.join("metrics.csv")).unwrap());
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn malformed_config_exits_2_without_output() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    for (name, text) in [
        ("syntax.toml", "schema_version = 1\nvariant = \"PR-FL\"\nclients = \n"),
        (
            "unknown.toml",
            "schema_version = 1\nvariant = \"PR-FL\"\nclients = 3\nseed = 1\ncolour = \"red\"\n",
        ),
        (
            "variant.toml",
            "schema_version = 1\nvariant = \"PR-XL\"\nclients = 3\nseed = 1\n",
        ),
        (
            "range.toml",
            &MINIMAL.replace("pruning_interval = 3", "pruning_interval = 0"),
        ),
    ] {
        let cfg = write_config(tmp.path(), name, text);
        let res = prfl(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert_eq!(
            res.status.code(),
            Some(2),
            "{name}: {}",
            String::from_utf8_lossy(&res.stderr)
        );
        assert!(!res.stderr.is_empty());
        assert!(!out.exists(), "{name} left output behind");
    }
    let res = prfl(&["run", "--config", tmp.path().join("absent.toml").to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn dry_run_prints_the_resolved_config_and_runs_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "run.toml", MINIMAL);
    let out = tmp.path().join("out");
    let res = prfl(&["run", "--config", &cfg, "--out", out.to_str().unwrap(), "--dry-run"]);
    assert!(res.status.success());
    let text = String::from_utf8(res.stdout).unwrap();
    for key in ["beta", "eta_g", "delta_rho", "model_size_mb", "max_rounds = 8"] {
        assert!(text.contains(key), "missing {key} in\n{text}");
    }
    assert!(!out.exists());
}

#[test]
fn validate_accepts_and_rejects() {
    let tmp = tempfile::tempdir().unwrap();
    let good = write_config(tmp.path(), "good.toml", MINIMAL);
    let res = prfl(&["validate", "--config", &good]);
    assert!(res.status.success());
    assert!(String::from_utf8(res.stdout).unwrap().contains("schema_version = 1"));
    let bad = write_config(tmp.path(), "bad.toml", &MINIMAL.replace("clients = 3", "clients = 4"));
    assert_eq!(prfl(&["validate", "--config", &bad]).status.code(), Some(2));
}

#[test]
fn sweep_prints_a_table() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "sweep.toml", MINIMAL);
    let root = tmp.path().join("sweep");
    let res = prfl(&[
        "sweep",
        "--config",
        &cfg,
        "--variants",
        "PR-FL,FedAvg,FedAsyn",
        "--out",
        root.to_str().unwrap(),
        "--threshold",
        "0.3",
        "--threshold",
        "1.5",
        "--cutoff",
        "1000",
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let table = String::from_utf8(res.stdout).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 4, "{table}");
    for (line, label) in lines[1..].iter().zip(["PR-FL", "FedAvg", "FedAsyn"]) {
        assert!(line.starts_with(label), "{line}");
        assert!(metrics_rows(&root.join(label)) >= 1);
    }
}

#[test]
fn sweep_dry_run_lists_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "sweep.toml", MINIMAL);
    let root = tmp.path().join("sweep");
    let res = prfl(&[
        "sweep",
        "--config",
        &cfg,
        "--variants",
        "PR-FL,FedFix",
        "--out",
        root.to_str().unwrap(),
        "--cutoff",
        "10",
        "--dry-run",
    ]);
    assert!(res.status.success());
    assert_eq!(String::from_utf8(res.stdout).unwrap().lines().count(), 2);
    assert!(!root.exists());
    let res = prfl(&[
        "sweep",
        "--config",
        &cfg,
        "--variants",
        "PR-FL,nope",
        "--cutoff",
        "10",
        "--dry-run",
    ]);
    assert_eq!(res.status.code(), Some(2));
}
