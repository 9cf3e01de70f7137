use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn opcon(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_opcon")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn scalar_source() -> String {
    opcon_core::scenario::BUILTINS[0].1.to_string()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn batch_run_writes_one_directory_per_scenario() {
    let out = tempfile::tempdir().unwrap();
    let o = opcon(&["run", "--builtin", "scalar-servo", "--builtin", "aircraft-lateral", "--out", out.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for name in ["scalar-servo", "aircraft-lateral"] {
        let dir = out.path().join(name);
        let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest["scenario"], name);
        assert_eq!(manifest["passed"], true);
        for f in manifest["files"].as_array().unwrap() {
            let bytes = fs::read(dir.join(f["path"].as_str().unwrap())).unwrap();
            assert_eq!(f["sha256"].as_str().unwrap(), hex_digest(&bytes));
            assert_eq!(f["bytes"].as_u64().unwrap(), bytes.len() as u64);
        }
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[test]
fn inverted_box_is_a_config_error_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.toml", &scalar_source().replace("min = [-0.5]", "min = [0.5]"));
    let o = opcon(&["design", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("limited.min[0]"), "{}", stderr(&o));
}

#[test]
fn missing_inputs_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(code(&opcon(&["design", "--out", out])), 2);
    assert_eq!(code(&opcon(&["design", "--config", "/nonexistent/scenario.toml", "--out", out])), 2);
    assert_eq!(code(&opcon(&["design", "--builtin", "nope", "--out", out])), 2);
    let o = opcon(&["compare", "--builtin", "aircraft-lateral", "--out", out]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("plant"));
    assert_eq!(code(&opcon(&["simulate", "--builtin", "scalar-servo", "--dt", "-1", "--out", out])), 2);
}

#[test]
fn singular_sensitivity_is_a_design_error() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"
name = "singular"

[plant]
states = ["x1", "x2"]
inputs = ["u1", "u2"]
a = { rows = 2, cols = 2, data = [-1.0, 0.0, 0.0, -2.0] }
b = { rows = 2, cols = 2, data = [1.0, 1.0, 1.0, 1.0] }

[limited]
names = ["x1", "x2"]
units = ["1", "1"]
c = { rows = 2, cols = 2, data = [1.0, 0.0, 0.0, 1.0] }
min = [-0.5, -0.5]
max = [0.5, 0.5]

[barrier]
roots = [[-1.0], [-1.0]]

[baseline]
kind = "proportional"
k_x = { rows = 2, cols = 2, data = [0.0, 0.0, 0.0, 0.0] }
"#;
    let cfg = write_config(dir.path(), "singular.toml", text);
    let o = opcon(&["design", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn failed_check_exits_four_and_still_writes_artifacts() {
    let out = tempfile::tempdir().unwrap();
    let o = opcon(&["simulate", "--builtin", "scalar-servo", "--dt", "0.4", "--out", out.path().to_str().unwrap()]);
    assert_eq!(code(&o), 4);
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
    let manifest = fs::read_to_string(out.path().join("scalar-servo/manifest.json")).unwrap();
    assert!(manifest.contains("\"passed\": false"));
}

#[test]
fn unwritable_output_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("plain-file");
    fs::write(&file, "x").unwrap();
    let o = opcon(&["design", "--builtin", "scalar-servo", "--out", file.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
}

#[test]
fn batch_reports_the_most_severe_failure() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "bad.toml", &scalar_source().replace("min = [-0.5]", "min = [0.5]"));
    let o = opcon(&["simulate", "--builtin", "scalar-servo", "--config", &bad, "--dt", "0.4", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(dir.path().join("scalar-servo/manifest.json").exists());
}

#[test]
fn compare_writes_side_by_side_traces() {
    let out = tempfile::tempdir().unwrap();
    let o = opcon(&["compare", "--builtin", "scalar-servo", "--out", out.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(out.path().join("scalar-servo/compare.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "t,x_cmd,x_cbf,u_cbf,pi_cbf,x_proj,u_proj,pi_proj");
    assert_eq!(csv.lines().count(), 10_002);
}
