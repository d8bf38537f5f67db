use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn sldac(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sldac")).args(args).output().unwrap()
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Writes a copy of `lqr_reduced.json` with `edit` applied.
fn edited_config(dir: &Path, edit: impl FnOnce(&mut serde_json::Value)) -> PathBuf {
    let mut cfg: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(config("lqr_reduced.json")).unwrap()).unwrap();
    edit(&mut cfg);
    let path = dir.join("cfg.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    path
}

#[test]
fn grad_check_passes_with_defaults() {
    let out = sldac(&["grad-check"]);
    assert!(out.status.success(), "{}", stdout(&out));
    assert_eq!(stdout(&out).lines().filter(|l| l.starts_with("PASS")).count(), 2);
}

#[test]
fn oracle_check_reports_every_suite() {
    let out = sldac(&["oracle-check", "--instances", "10", "--seed", "3"]);
    let text = stdout(&out);
    assert!(out.status.success(), "{text}");
    assert!(text.contains("grid search") && text.contains("Bellman"), "{text}");
}

#[test]
fn validate_config_rejects_indivisible_batches() {
    let dir = tempfile::tempdir().unwrap();
    let path = edited_config(dir.path(), |c| {
        c["batch_size"] = 3.into();
        c["inner_iters"] = 2.into();
    });
    let out = sldac(&["validate-config", "--config", path.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(stdout(&out).contains("error:"), "{}", stdout(&out));
}

#[test]
fn validate_config_warns_on_out_of_region_exponents() {
    let dir = tempfile::tempdir().unwrap();
    let path = edited_config(dir.path(), |c| {
        for (name, k) in [("alpha", 0.6), ("beta", 0.7), ("eta", 0.0), ("gamma", 0.3)] {
            c["schedules"][name]["exponent"] = k.into();
        }
    });
    let out = sldac(&["validate-config", "--config", path.to_str().unwrap()]);
    let text = stdout(&out);
    assert!(out.status.success(), "{text}");
    assert!(text.contains("warning:") && text.contains("config is valid"), "{text}");
}

#[test]
fn run_writes_metrics_summary_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let path = edited_config(dir.path(), |c| {
        c["iterations"] = 200.into();
        c["baseline_steps"] = 100.into();
    });
    let out_dir = dir.path().join("out");
    let out = sldac(&["run", "--config", path.to_str().unwrap(), "--seeds", "3,8", "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for seed in [3, 8] {
        let metrics = std::fs::read_to_string(out_dir.join(format!("seed{seed}.metrics.csv"))).unwrap();
        assert_eq!(metrics.lines().count(), 201);
        assert!(out_dir.join(format!("seed{seed}/policy.mean.mlp")).exists());
        assert!(out_dir.join(format!("seed{seed}/window.ndjson")).exists());
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    let seeds: Vec<u64> = summary["seeds"].as_array().unwrap().iter().map(|s| s["seed"].as_u64().unwrap()).collect();
    assert_eq!(seeds, [3, 8]);
}

#[test]
fn missing_config_is_an_error() {
    let out = sldac(&["run", "--config", "/nonexistent/cfg.json"]);
    assert!(!out.status.success());
}
