//! End-to-end runs of the command-line binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_jointcheck"))
}

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data")
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn small_check_config(dir: &Path) -> PathBuf {
    let cfg = serde_json::json!({
        "model": {"family": "beta_symmetric", "hyperparameters": {"grid_size": 128}},
        "data": {"source": "csv", "path": data_dir().join("beta_sample.csv")},
        "statistics": [{"kind": "quantile", "q": 0.05}, {"kind": "quantile", "q": 0.95}],
        "monte_carlo": {
            "posterior_draws": 50, "inner_draws": 20,
            "calibration_replications": 10, "calibration_draws": 20, "calibration_inner": 20,
            "n_prior": 10, "m_sampling": 200, "l_estimate": 50,
            "kde_samples": [500], "partial_grid_size": 16, "partial_draws": 50,
            "grid_step": 0.001
        },
        "seed": 11
    });
    let path = dir.join("check.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn check_writes_every_pvalue_kind() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_check_config(dir.path());
    let out = dir.path().join("out");
    let o = run(bin().args(["-q", "check", "--config"]).arg(&cfg).arg("--out").arg(&out));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(out.join("pvalues.csv")).unwrap();
    assert!(table.starts_with("# jointcheck "));
    for kind in ["post_p", "sampled_p", "joint_p", "sampled_joint_p", "cal_p", "part_p"] {
        assert!(table.lines().any(|l| l.starts_with(&format!("{kind},"))), "missing {kind}:\n{table}");
    }
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["command"], "check");
    // stdout carries the report too
    let stdout: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(stdout.is_object());
}

#[test]
fn copula_curves_table_shape() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(bin().args(["-q", "copula-curves", "--kind", "independence", "--d", "2..10", "--out"]).arg(dir.path()));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(dir.path().join("bound_curves.csv")).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "p,d,v,alpha,bound,s_star");
    assert_eq!(rows.len() - 1, 36);
}

#[test]
fn exit_codes_separate_config_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\n  \"model\": 3\n}").unwrap();
    let o = run(bin().args(["check", "--config"]).arg(&bad));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad.json:2:"));

    let o = run(bin().args(["check", "--config"]).arg(dir.path().join("missing.json")));
    assert_ne!(o.status.code(), Some(0));

    let o = run(bin().args(["no-such-command"]));
    assert_eq!(o.status.code(), Some(2));

    // a dataset whose length disagrees with the model is a configuration error
    let cfg = serde_json::json!({
        "model": {"family": "beta_symmetric", "hyperparameters": {"grid_size": 64, "n_obs": 7}},
        "data": {"source": "csv", "path": data_dir().join("beta_sample.csv")},
        "statistics": [{"kind": "mean"}],
        "seed": 1
    });
    let path = dir.path().join("mismatch.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    let o = run(bin().args(["-q", "bound", "--config"]).arg(&path));
    assert_eq!(o.status.code(), Some(2));

    // an output directory that cannot be created is a runtime failure
    let cfg = small_check_config(dir.path());
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let o = run(bin().args(["-q", "bound", "--config"]).arg(&cfg).arg("--out").arg(blocker.join("sub")));
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_check_config(dir.path());
    let mut outs = Vec::new();
    for threads in ["1", "3"] {
        let out = dir.path().join(format!("t{threads}"));
        let o = run(bin().args(["-q", "--threads", threads, "check", "--config"]).arg(&cfg).arg("--out").arg(&out));
        assert!(o.status.success());
        outs.push(out);
    }
    let mut names: Vec<_> = std::fs::read_dir(&outs[0]).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() >= 4);
    for n in names {
        assert_eq!(std::fs::read(outs[0].join(&n)).unwrap(), std::fs::read(outs[1].join(&n)).unwrap(), "{n:?}");
    }
}
