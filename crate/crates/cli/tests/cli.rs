use std::path::Path;
use std::process::{Command, Output};

fn simpleray(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_simpleray")).args(args).output().expect("spawn simpleray")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

fn run_ok(args: &[&str]) -> String {
    let out = simpleray(args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap().trim().to_string()
}

fn stderr_of_failure(args: &[&str]) -> String {
    let out = simpleray(args);
    assert!(!out.status.success());
    String::from_utf8(out.stderr).unwrap()
}

const XRAY: &str = "[triple]\nmetric = \"gauss1\"\n[field]\norder = 0\nid = \"bump:1,0.2,0.1,0.1\"\n[rays]\nn_alpha = 24\nn_beta = 12\nimage_n = 24\nmax_iter = 60\n";

#[test]
fn xray_writes_artifacts_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "x.toml", XRAY);
    let out = tmp.path().join("out");
    let dir = run_ok(&["xray", "--config", &cfg, "--output", out.to_str().unwrap()]);
    let dir = Path::new(&dir);
    for f in ["config.toml", "sinogram.sino", "sinogram.csv", "summary.json", "manifest.json"] {
        assert!(dir.join(f).is_file(), "missing {f}");
    }
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "xray");
    assert_eq!(manifest["seed"], 1);
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 16);
    assert!(manifest["artifacts"].as_array().unwrap().iter().any(|a| a == "sinogram.sino"));
    let csv = std::fs::read_to_string(dir.join("sinogram.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 24 * 12);
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "x.toml", XRAY);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let da = run_ok(&["xray", "--config", &cfg, "--output", a.to_str().unwrap()]);
    let db = run_ok(&["--threads", "1", "xray", "--config", &cfg, "--output", b.to_str().unwrap()]);
    for f in ["config.toml", "sinogram.sino", "sinogram.csv", "summary.json"] {
        let x = std::fs::read(Path::new(&da).join(f)).unwrap();
        let y = std::fs::read(Path::new(&db).join(f)).unwrap();
        assert_eq!(x, y, "{f} differs");
    }
}

#[test]
fn invert_round_trip_and_metric_check() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "x.toml", XRAY);
    let out = tmp.path().join("out");
    let dir = run_ok(&["xray", "--config", &cfg, "--output", out.to_str().unwrap()]);
    let sino = Path::new(&dir).join("sinogram.sino");
    // `sinogram` is a top-level key and must come before the first table.
    let inv_cfg = write_config(tmp.path(), "inv.toml", &format!("sinogram = {:?}\n{XRAY}", sino.to_str().unwrap()));
    let inv = run_ok(&["invert", "--config", &inv_cfg, "--output", out.to_str().unwrap()]);
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(Path::new(&inv).join("summary.json")).unwrap()).unwrap();
    assert!(summary["relative_residual"].as_f64().unwrap() < 1e-2, "{summary}");
    assert!(Path::new(&inv).join("field.grid").is_file());
    assert!(Path::new(&inv).join("plot.py").is_file());

    let wrong = write_config(tmp.path(), "wrong.toml", &format!("sinogram = {:?}\n[triple]\nmetric = \"euclid\"\n", sino.to_str().unwrap()));
    let err = stderr_of_failure(&["invert", "--config", &wrong, "--output", out.to_str().unwrap()]);
    assert!(err.contains("gauss1"), "{err}");
}

#[test]
fn parse_errors_carry_line_and_column() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.toml", "seed = 1\n[triple]\nmetric = 3\n");
    let err = stderr_of_failure(&["shoot", "--config", &cfg]);
    assert!(err.contains("line 3") && err.contains("column 10"), "{err}");
}

#[test]
fn unknown_registry_id_fails_before_work() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.toml", "[triple]\nmetric = \"nosuchmetric\"\n");
    let out = tmp.path().join("out");
    let err = stderr_of_failure(&["shoot", "--config", &cfg, "--output", out.to_str().unwrap()]);
    assert!(err.contains("nosuchmetric"), "{err}");
    assert!(!out.exists());
}

#[test]
fn default_config_parses_back() {
    let text = run_ok(&["default-config"]);
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "d.toml", &text);
    let out = tmp.path().join("out");
    let dir = run_ok(&["distance", "--config", &cfg, "--output", out.to_str().unwrap()]);
    let s: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(Path::new(&dir).join("summary.json")).unwrap()).unwrap();
    // Euclidean unit disk, antipodal boundary points.
    assert!((s["distance"].as_f64().unwrap() - 2.0).abs() < 1e-6, "{s}");
}

#[test]
fn shipped_configs_are_valid() {
    let ex = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../ex");
    let tmp = tempfile::tempdir().unwrap();
    let mut n = 0;
    for e in std::fs::read_dir(ex).unwrap() {
        let p = e.unwrap().path();
        run_ok(&["shoot", "--config", p.to_str().unwrap(), "--output", tmp.path().to_str().unwrap()]);
        n += 1;
    }
    assert!(n >= 2);
}
