use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const AUTONOMOUS: &str = r#"
[phi]
family = "power"
p = 2.0

[f]
family = "power"
delta = 0.3333333333333333
d_infinity = 1.0

[problem]
alpha = 0.0
gamma = 0.0
lambda = 1.0
R = 1.4674161077003312

[solver]
max_ell = 3
"#;

fn nodal(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nodal"))
        .current_dir(dir)
        .env_remove("NODAL_OUTPUT_DIR")
        .args(args)
        .output()
        .unwrap()
}

fn with_config(body: &str) -> TempDir {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("run.toml"), body).unwrap();
    dir
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn shoot_writes_one_profile_per_level() {
    let dir = with_config(AUTONOMOUS);
    let out = nodal(dir.path(), &["--config", "run.toml", "--output-dir", "out", "shoot"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut names: Vec<_> = fs::read_dir(dir.path().join("out"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(
        names,
        ["profile_ell0.csv", "profile_ell1.csv", "profile_ell2.csv", "profile_ell3.csv", "summary.json"]
    );
    let csv = fs::read_to_string(dir.path().join("out/profile_ell2.csv")).unwrap();
    assert!(csv.lines().count() > 10);
}

#[test]
fn deterministic_reruns_are_identical() {
    let dir = with_config(AUTONOMOUS);
    let args = |o: &'static str| ["--config", "run.toml", "--output-dir", o, "--deterministic", "shoot"];
    assert!(nodal(dir.path(), &args("a")).status.success());
    assert!(nodal(dir.path(), &args("b")).status.success());
    for name in ["summary.json", "profile_ell0.csv", "profile_ell3.csv"] {
        let a = fs::read(dir.path().join("a").join(name)).unwrap();
        let b = fs::read(dir.path().join("b").join(name)).unwrap();
        assert!(a == b, "{name} differs");
    }
}

#[test]
fn summary_config_round_trips() {
    let dir = with_config(AUTONOMOUS);
    assert!(nodal(dir.path(), &["--config", "run.toml", "--output-dir", "a", "--deterministic", "shoot"])
        .status
        .success());
    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("a/summary.json")).unwrap()).unwrap();
    let cfg: nodal_core::RunConfig = serde_json::from_value(summary["config"].clone()).unwrap();
    fs::write(dir.path().join("again.toml"), cfg.to_toml()).unwrap();
    assert!(nodal(dir.path(), &["--config", "again.toml", "--output-dir", "b", "--deterministic", "shoot"])
        .status
        .success());
    let a = fs::read(dir.path().join("a/profile_ell3.csv")).unwrap();
    let b = fs::read(dir.path().join("b/profile_ell3.csv")).unwrap();
    assert!(a == b);
    assert_eq!(summary["results"]["d_levels"].as_array().unwrap().len(), 4);
    assert!(summary.get("timestamp").is_none());
}

#[test]
fn validate_rejects_exponential_phi() {
    let body = AUTONOMOUS.replace(
        "family = \"power\"\np = 2.0",
        "family = \"custom\"\nphi = \"exp(t)\"\ngamma1 = 2.0\ngamma2 = 3.0",
    );
    let dir = with_config(&body);
    let out = nodal(dir.path(), &["--config", "run.toml", "validate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).contains("violated"));
}

#[test]
fn validate_accepts_autonomous_benchmark() {
    let dir = with_config(AUTONOMOUS);
    let out = nodal(dir.path(), &["--config", "run.toml", "validate"]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
}

#[test]
fn lambda_threshold_prints_two_for_unit_radius() {
    let dir = with_config(&AUTONOMOUS.replace("R = 1.4674161077003312", "R = 1.0"));
    let out = nodal(dir.path(), &["--config", "run.toml", "--output-dir", "o", "lambda-threshold"]);
    assert!(out.status.success());
    assert_eq!(stdout(&out).lines().next(), Some("2.0"));
}

#[test]
fn unwritable_output_dir_exits_two() {
    let dir = with_config(AUTONOMOUS);
    fs::write(dir.path().join("blocker"), "").unwrap();
    let out = nodal(dir.path(), &["--config", "run.toml", "--output-dir", "blocker/sub", "shoot"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_key_is_a_domain_error() {
    let dir = with_config(&format!("{AUTONOMOUS}colour = \"blue\"\n"));
    let out = nodal(dir.path(), &["--config", "run.toml", "validate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));
}

#[test]
fn output_dir_from_environment() {
    let dir = with_config(AUTONOMOUS);
    let out = Command::new(env!("CARGO_BIN_EXE_nodal"))
        .current_dir(dir.path())
        .env("NODAL_OUTPUT_DIR", "from-env")
        .args(["--config", "run.toml", "solve-ivp"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("from-env/profile_ivp.csv").exists());
    assert!(dir.path().join("from-env/summary.json").exists());
}

#[test]
fn toml_summary_format() {
    let dir = with_config(AUTONOMOUS);
    let out = nodal(dir.path(), &["--config", "run.toml", "--output-dir", "o", "--format", "toml", "zeros"]);
    assert!(out.status.success());
    let text = fs::read_to_string(dir.path().join("o/summary.toml")).unwrap();
    let parsed: toml::Value = text.parse().unwrap();
    assert_eq!(parsed["command"].as_str(), Some("zeros"));
}

#[test]
fn tolerance_flags_override_config() {
    let dir = with_config(AUTONOMOUS);
    let out = nodal(
        dir.path(),
        &["--config", "run.toml", "--output-dir", "o", "--deterministic", "--abs-tol", "1e-9", "--max-ell", "1", "shoot"],
    );
    assert!(out.status.success());
    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("o/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config"]["solver"]["abs_tol"].as_f64(), Some(1e-9));
    assert_eq!(summary["results"]["d_levels"].as_array().unwrap().len(), 2);
}
