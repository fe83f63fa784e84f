use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};

const MINIMAL: &str = r#"
modes = 8
horizon = 1.0
covariance = { decay_rate = 1.0 }
drift = { kind = "saturating", scale = 1.0 }
diffusion = { kind = "multiplicative", sigma = 0.5 }
"#;

const SMALL: &str = r#"
modes = 8
horizon = 1.0
covariance = { decay_rate = 1.0 }
drift = { kind = "saturating", scale = 1.0 }
diffusion = { kind = "multiplicative", sigma = 0.5 }
step_counts = [4, 8, 16]
samples = 50
reference_factor = 4
"#;

fn splitpde(dir: &Path, sub: &str, config: &str, extra: &[&str]) -> Output {
    let cfg = dir.join("run.toml");
    fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_splitpde"))
        .arg(sub)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .args(extra)
        .output()
        .unwrap()
}

fn summary(dir: &Path, name: &str) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("out").join(name)).unwrap()).unwrap()
}

#[test]
fn minimal_config_echoes_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let out = splitpde(dir.path(), "beta", MINIMAL, &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let s = summary(dir.path(), "beta.json");
    let cfg = &s["resolved_config"];
    assert_eq!(cfg["beta_expected"], 1.0);
    assert_eq!(cfg["samples"], 200);
    assert_eq!(cfg["seed"], 0);
    assert_eq!(cfg["reference_factor"], 32);
    assert_eq!(cfg["tolerance"], 0.1);
    assert_eq!(cfg["step_counts"], serde_json::json!([16, 32, 64, 128, 256, 512]));
    assert_eq!(cfg["initial"], "cubic-decay");
    assert_eq!(cfg["covariance"]["amplitude"], 1.0);
    for key in ["operator", "inner", "consistency", "stability", "flow_increment", "regularity"] {
        assert!(cfg.get(key).is_some(), "missing default block {key}");
    }
}

#[test]
fn digest_is_recomputable_from_resolved_block() {
    let dir = tempfile::tempdir().unwrap();
    assert!(splitpde(dir.path(), "beta", MINIMAL, &[]).status.success());
    let s = summary(dir.path(), "beta.json");
    let text = serde_json::to_string(&s["resolved_config"]).unwrap();
    let digest: String = Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect();
    assert_eq!(s["manifest"]["config_digest"], digest.as_str());
    assert_eq!(s["manifest"]["experiment_kind"], "beta");
    assert_eq!(s["manifest"]["tool_version"], env!("CARGO_PKG_VERSION"));
}

#[test]
fn beta_for_white_noise_is_just_below_half() {
    let dir = tempfile::tempdir().unwrap();
    let config = MINIMAL.replace("decay_rate = 1.0", "decay_rate = 0.0");
    let out = splitpde(dir.path(), "beta", &config, &[]);
    assert!(out.status.success());
    let printed: Value = serde_json::from_slice(&out.stdout).unwrap();
    let beta = printed["beta_expected"].as_f64().unwrap();
    assert!(beta < 0.5 && beta > 0.45, "{beta}");
    assert!(!dir.path().join("out/beta.csv").exists());
}

#[test]
fn unknown_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let out = splitpde(dir.path(), "converge", &format!("{MINIMAL}gamma = 2\n"), &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gamma"));
}

#[test]
fn missing_and_non_positive_keys_are_named() {
    let dir = tempfile::tempdir().unwrap();
    let out = splitpde(dir.path(), "converge", &MINIMAL.replace("modes = 8", ""), &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("modes"));
    let out = splitpde(dir.path(), "converge", &MINIMAL.replace("horizon = 1.0", "horizon = 0.0"), &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("horizon"));
}

#[test]
fn missing_config_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_splitpde"))
        .args(["converge", "--config"])
        .arg(dir.path().join("absent.toml"))
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn noiseless_converge_takes_the_degenerate_exit() {
    let dir = tempfile::tempdir().unwrap();
    let config = SMALL
        .replace(r#"{ kind = "saturating", scale = 1.0 }"#, r#"{ kind = "zero" }"#)
        .replace(r#"{ kind = "multiplicative", sigma = 0.5 }"#, r#"{ kind = "zero" }"#);
    let out = splitpde(dir.path(), "converge", &config, &[]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    let s = summary(dir.path(), "converge.json");
    assert_eq!(s["flags"], serde_json::json!(["degenerate"]));
    assert!(s["fitted_order"].is_null());
}

#[test]
fn csv_layout_and_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    assert!(splitpde(dir.path(), "converge", SMALL, &[]).status.success());
    let first = fs::read_to_string(dir.path().join("out/converge.csv")).unwrap();
    let lines: Vec<&str> = first.lines().collect();
    assert_eq!(lines[0], "h,N,mse,rms,stderr,local_slope");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("0.25,4,") && lines[1].ends_with(','));
    assert!(lines[3].starts_with("0.0625,16,"));

    assert!(splitpde(dir.path(), "converge", SMALL, &["--workers", "3"]).status.success());
    let second = fs::read_to_string(dir.path().join("out/converge.csv")).unwrap();
    assert_eq!(first, second);

    assert!(splitpde(dir.path(), "converge", SMALL, &["--seed", "9"]).status.success());
    let reseeded = fs::read_to_string(dir.path().join("out/converge.csv")).unwrap();
    assert_ne!(first, reseeded);
    assert_eq!(summary(dir.path(), "converge.json")["manifest"]["seed"], 9);
}

#[test]
fn tolerance_failure_is_fatal_only_under_strict() {
    let dir = tempfile::tempdir().unwrap();
    let config = format!("{SMALL}tolerance = 1e-9\n");
    let out = splitpde(dir.path(), "converge", &config, &[]);
    assert!(out.status.success());
    assert_eq!(summary(dir.path(), "converge.json")["pass"], false);
    let out = splitpde(dir.path(), "converge", &config, &["--strict"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn every_experiment_writes_its_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let config = format!(
        "{SMALL}\n[consistency]\nstep_sizes = [0.125, 0.0625, 0.03125]\nsubsteps = 8\n\n[flow_increment]\ns_values = [0.0625, 0.03125, 0.015625]\n"
    );
    for (sub, stem) in [
        ("consistency", "consistency"),
        ("stability", "stability"),
        ("flow-increment", "flow-increment"),
        ("regularity", "regularity"),
    ] {
        let out = splitpde(dir.path(), sub, &config, &[]);
        assert!(out.status.success(), "{sub}: {}", String::from_utf8_lossy(&out.stderr));
        let csv = fs::read_to_string(dir.path().join(format!("out/{stem}.csv"))).unwrap();
        assert!(csv.starts_with("h,N,mse,rms,stderr,local_slope\n"));
        let s = summary(dir.path(), &format!("{stem}.json"));
        assert!(s["pass"].is_boolean(), "{sub}");
        assert_eq!(s["manifest"]["experiment_kind"], stem);
    }
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    for name in ["trace-class.toml", "white-noise.toml"] {
        let text = fs::read_to_string(dir.join(name)).unwrap();
        let cfg = splitpde::config::parse_config(&text).unwrap();
        cfg.validate().unwrap();
    }
}
