use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cohprod"))
}

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("cohprod-cli-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("config.toml");
    std::fs::write(&p, body).unwrap();
    p
}

const SCAN: &str = r#"
scenario = "dfs-scan"
[model]
coupling = "number-coupled"
n_sites = 3
hopping = 0.2
sector = { kind = "single-excitation", include_vacuum = true }
modes = [{ omega = 1.0, n_cut = 3 }]
chi = [[0.3, 0.0]]
[run]
dt = 0.1
t_final = 1.0
[checks]
expected_dfs_count = EXPECTED
"#;

#[test]
fn list_scenarios() {
    let out = bin().arg("list-scenarios").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for s in ["dfs-scan", "d2-vs-oracle", "dimer-dephasing", "pumped-frohlich", "stationary-bath"] {
        assert!(text.lines().any(|l| l == s), "{s} missing");
    }
}

#[test]
fn validate_reports_every_violation() {
    let dir = scratch("validate");
    let p = config(
        &dir,
        r#"
scenario = "d2-vs-oracle"
[model]
coupling = "number-coupled"
temperature = -1.0
modes = [{ omega = 0.0, n_cut = 5 }]
chi = [[0.3, 0.0]]
[run]
dt = 0.1
t_final = 1.0
"#,
    );
    let out = bin().arg("validate").arg(&p).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("mode frequency must be positive"), "{err}");
    assert!(err.contains("temperature"), "{err}");
}

#[test]
fn run_exit_codes_and_plot_data() {
    let dir = scratch("run");
    let root = dir.join("out");

    // two simultaneous eigenspaces of N̂: vacuum and the one-quantum band
    let ok = config(&dir, &SCAN.replace("EXPECTED", "2"));
    let out = bin().arg("run").arg(&ok).env("COHPROD_OUTPUT_ROOT", &root).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let run_dir = root.join("dfs-scan");
    assert!(run_dir.join("report.json").exists());
    assert!(run_dir.join("dfs.csv").exists());

    let out = bin().arg("plot-data").arg(&run_dir).output().unwrap();
    assert!(out.status.success());
    let tidy = std::fs::read_to_string(run_dir.join("plot_data.csv")).unwrap();
    assert!(tidy.starts_with("file,column,x,value"));

    let bad = config(&dir, &SCAN.replace("EXPECTED", "5"));
    let out = bin().arg("run").arg(&bad).env("COHPROD_OUTPUT_ROOT", &root).output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    let abort = config(
        &dir,
        r#"
scenario = "d2-vs-oracle"
[model]
coupling = "davydov"
n_sites = 3
hopping = 0.4
modes = [{ omega = 1.0, n_cut = 3 }, { omega = 1.0, n_cut = 3 }, { omega = 1.0, n_cut = 3 }]
chi = [[0.3, 0.0], [0.3, 0.0], [0.3, 0.0]]
[run]
dt = 0.01
t_final = 1.0
force = true
[initial]
amplitudes = [[1.0, 0.0], [0.0, 0.0], [0.0, 0.0]]
"#,
    );
    let out = bin().arg("run").arg(&abort).env("COHPROD_OUTPUT_ROOT", &root).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    let report = std::fs::read_to_string(root.join("d2-vs-oracle/report.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(v["outcome"], "abort");
    assert_eq!(v["abort"]["step"], 1);

    let out = bin().arg("run").arg(dir.join("missing.toml")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
