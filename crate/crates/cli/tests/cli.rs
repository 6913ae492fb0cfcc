//! End-to-end tests of the `plab` binary: exit codes, error wording, the
//! staleness and tamper guards, and the reproduction loop.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn plab(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_plab"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// A configuration small enough that every subcommand finishes in seconds.
const SMALL_CONFIG: &str = r#"
[kernel]
name = "gaussian"
amplitude = 1.0
width = 1.0

[potential]
name = "quadratic"
stiffness = 1.0

[domain]
dimension = 1
half_width = 2.5
points_per_axis = 256

[temperature]
theta_values = [4.0]
n_particles = 32

[chains]
seed = 3
chains = 1
burn_in_sweeps = 30
thinning_sweeps = 1
samples_per_chain = 40

[analysis]
x_star = [0.1]
window_sides = [1.0, 2.0]
gate_side = 2.0
epsilon_values = [0.5]
y_points = [[0.0]]
k_orders = [1]
correlation_bins = 2

[output]
directory = "run"
"#;

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("config.toml");
    fs::write(&path, body).unwrap();
    path
}

#[test]
fn config_errors_name_the_offending_field() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = SMALL_CONFIG.replace(
        "theta_values = [4.0]\nn_particles = 32",
        "n_values = [40, 80]\ns = 1.5",
    );
    write_config(tmp.path(), &bad);
    let out = plab(&["validate-kernel", "--config", "config.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr_of(&out));
    assert!(
        stderr_of(&out).contains("temperature.s"),
        "expected the field path in: {}",
        stderr_of(&out)
    );
}

#[test]
fn unknown_config_keys_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = SMALL_CONFIG.replace("stiffness = 1.0", "stiffness = 1.0\nbogus_knob = 3");
    write_config(tmp.path(), &bad);
    let out = plab(&["validate-kernel", "--config", "config.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(
        stderr_of(&out).contains("bogus_knob"),
        "expected the unknown key in: {}",
        stderr_of(&out)
    );
}

#[test]
fn validate_kernel_records_a_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), SMALL_CONFIG);
    let out = plab(&["validate-kernel", "--config", "config.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("run/manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["subcommands"][0], "validate-kernel");
    assert!(manifest["artifacts"]["validation.json"].is_string());
    let validation: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("run/validation.json")).unwrap())
            .unwrap();
    assert_eq!(validation["report"]["pass"], true);
}

#[test]
fn changed_config_makes_the_directory_stale() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), SMALL_CONFIG);
    let first = plab(&["validate-kernel", "--config", "config.toml"], tmp.path());
    assert_eq!(first.status.code(), Some(0));
    write_config(tmp.path(), &SMALL_CONFIG.replace("seed = 3", "seed = 4"));
    let second = plab(&["validate-kernel", "--config", "config.toml"], tmp.path());
    assert_eq!(second.status.code(), Some(2));
    assert!(
        stderr_of(&second).contains("stale"),
        "expected a staleness complaint in: {}",
        stderr_of(&second)
    );
}

#[test]
fn seed_flag_changes_the_effective_config() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), SMALL_CONFIG);
    let out = plab(
        &["validate-kernel", "--config", "config.toml", "--out", "a", "--seed", "99"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let copy = fs::read_to_string(tmp.path().join("a/config.toml")).unwrap();
    assert!(copy.contains("seed = 99"), "copy should carry the override:\n{copy}");
    // The recorded copy replays to the same hash, so reproduce accepts it.
    let rep = plab(&["reproduce", "--out", "a"], tmp.path());
    assert_eq!(rep.status.code(), Some(0), "stderr: {}", stderr_of(&rep));
}

#[test]
fn analyze_without_samples_names_the_missing_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), SMALL_CONFIG);
    let solve = plab(&["solve-thermal", "--config", "config.toml"], tmp.path());
    assert_eq!(solve.status.code(), Some(0), "stderr: {}", stderr_of(&solve));
    let out = plab(&["analyze", "--config", "config.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_of(&out);
    assert!(
        err.contains("samples_theta_4.csv") && err.contains("plab sample"),
        "expected the artifact name and the remedy in: {err}"
    );
}

#[test]
fn reproduce_detects_a_tampered_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), SMALL_CONFIG);
    let run = plab(&["validate-kernel", "--config", "config.toml"], tmp.path());
    assert_eq!(run.status.code(), Some(0));
    let target = tmp.path().join("run/validation.json");
    let mut body = fs::read_to_string(&target).unwrap();
    body = body.replace("true", "folse");
    fs::write(&target, body).unwrap();
    let rep = plab(&["reproduce", "--out", "run"], tmp.path());
    assert_eq!(rep.status.code(), Some(2));
    assert!(
        stderr_of(&rep).contains("validation.json"),
        "expected the edited artifact to be named in: {}",
        stderr_of(&rep)
    );
}

#[test]
fn full_small_pipeline_reproduces_byte_identically() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), SMALL_CONFIG);
    for sub in ["validate-kernel", "solve-thermal", "sample", "analyze"] {
        let out = plab(&[sub, "--config", "config.toml"], tmp.path());
        assert_eq!(out.status.code(), Some(0), "{sub} stderr: {}", stderr_of(&out));
    }
    let rep = plab(&["reproduce", "--out", "run"], tmp.path());
    assert_eq!(rep.status.code(), Some(0), "stderr: {}", stderr_of(&rep));
    let text = String::from_utf8_lossy(&rep.stdout).into_owned();
    assert!(text.contains("byte-for-byte"), "unexpected stdout: {text}");
}

#[test]
fn out_of_regime_sweep_warns_and_skips_gates() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = SMALL_CONFIG.replace(
        "theta_values = [4.0]\nn_particles = 32",
        "n_values = [30, 60]\ns = 0.3\nallow_out_of_regime = true",
    );
    write_config(tmp.path(), &cfg);
    let out = plab(&["sweep", "--config", "config.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    assert!(
        stderr_of(&out).contains("regime"),
        "expected an out-of-regime warning in: {}",
        stderr_of(&out)
    );
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("run/sweep_report.json")).unwrap())
            .unwrap();
    assert_eq!(report["in_regime"], false);
}
