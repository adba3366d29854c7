use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn floerlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_floerlab")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn zero_hamiltonian_is_a_resolution_failure() {
    let out = tempfile::tempdir().unwrap();
    let cfg = configs().join("zero.toml");
    let o = floerlab(&["orbits", "--config", cfg.to_str().unwrap(), "--out", out.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("degenerate"));
}

#[test]
fn config_errors_exit_with_four() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "n = 1\ntol_flore = 1e-8\n").unwrap();
    let o = floerlab(&["orbits", "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("tol_flore"));
    let missing = dir.path().join("missing.toml");
    assert_eq!(floerlab(&["orbits", "--config", missing.to_str().unwrap()]).status.code(), Some(4));
    assert_eq!(floerlab(&["morse"]).status.code(), Some(4));
    std::fs::write(&bad, "n = 1\nN = 1\n").unwrap();
    assert_eq!(floerlab(&["orbits", "--config", bad.to_str().unwrap()]).status.code(), Some(4));
}

#[test]
fn cz_of_diagonal_paths() {
    for (lambda, want) in [("3.141592653589793", "-1"), ("9.42477796076938", "-3"), ("-3.141592653589793", "1")] {
        let o = floerlab(&["cz", "--lambda", lambda]);
        assert!(o.status.success());
        assert_eq!(stdout(&o).trim(), want);
    }
    let o = floerlab(&["cz", "--lambda", "3.141592653589793", "--dim", "2"]);
    assert_eq!(stdout(&o).trim(), "-2");
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("path.json");
    std::fs::write(&p, r#"{"generator": [[2.0, 0.0], [0.0, -3.0]], "steps": 128}"#).unwrap();
    let o = floerlab(&["cz", "--path", p.to_str().unwrap()]);
    assert_eq!(stdout(&o).trim(), "0");
    assert_eq!(floerlab(&["cz", "--lambda", "0"]).status.code(), Some(3));
}

#[test]
fn fredholm_diag_single_and_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let o = floerlab(&["fredholm-diag", "--a", "3.141592653589793", "--b", "15.707963267948966", "--out", d]);
    assert!(o.status.success());
    let text = stdout(&o);
    let row = text.lines().nth(1).unwrap();
    assert!(row.ends_with(",4,0,4,4"), "{row}");
    assert_eq!(std::fs::read_to_string(dir.path().join("fredholm.csv")).unwrap(), text);
    let o = floerlab(&["fredholm-diag", "--out", d]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().count(), 10);
}

#[test]
fn orbits_artifacts_are_reproducible() {
    let cfg = configs().join("cos_cos.toml");
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for (dir, threads) in [(&a, "1"), (&b, "4")] {
        let o = floerlab(&[
            "orbits",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            dir.path().to_str().unwrap(),
            "--threads",
            threads,
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(stdout(&o).contains("[PASS] criterion  3"));
    }
    for f in ["orbits.json", "indices.json", "summary.json"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        assert_eq!(x, std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let orbits: serde_json::Value = serde_json::from_slice(&std::fs::read(a.path().join("orbits.json")).unwrap()).unwrap();
    let cz: Vec<i64> = orbits.as_array().unwrap().iter().map(|o| o["cz"].as_i64().unwrap()).collect();
    assert_eq!(cz.len(), 4);
    assert_eq!(cz.iter().sum::<i64>(), 0);
}
