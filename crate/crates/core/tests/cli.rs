//! End-to-end runs of the `rcond` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn rcond(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rcond")).args(args).arg("--out").arg(dir).output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn price_writes_one_row_and_a_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "command = \"price\"\nn_paths = 2000\nlambda_tilde = [0.5]\n");
    let out = rcond(&["--config", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(dir.path().join("price.csv")).unwrap();
    assert_eq!(table.lines().count(), 2);
    assert!(fs::read_to_string(dir.path().join("trace.csv")).unwrap().lines().count() > 2);
}

#[test]
fn effective_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "command = \"sweep\"\nn_paths = 1000\nlambda = [0.0, 0.2]\nseed = 5\n");
    assert_eq!(rcond(&["--config", &cfg], dir.path()).status.code(), Some(0));
    let table = fs::read(dir.path().join("table.csv")).unwrap();
    let effective = dir.path().join("effective_config.toml");
    let echoed = fs::read(&effective).unwrap();

    let replay = dir.path().join("replay.toml");
    fs::copy(&effective, &replay).unwrap();
    let again = rcond(&["--config", replay.to_str().unwrap()], dir.path());
    assert_eq!(again.status.code(), Some(0));
    assert_eq!(fs::read(dir.path().join("table.csv")).unwrap(), table);
    assert_eq!(fs::read(&effective).unwrap(), echoed);
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "command = \"sweep\"\nvolatility = 0.3\n");
    let out = rcond(&["--config", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("volatility"));

    let cfg = write_config(dir.path(), "command = \"price\"\nlambda = [0.1]\nlambda_tilde = [0.1]\n");
    assert_eq!(rcond(&["--config", &cfg], dir.path()).status.code(), Some(2));
    assert_eq!(rcond(&["--command", "nonsense"], dir.path()).status.code(), Some(2));
    assert_eq!(rcond(&[], dir.path()).status.code(), Some(2));
}

#[test]
fn sparse_demo_rows_cover_the_grid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "command = \"sparse-demo\"\nsparse_radii = [0.5, 1.0]\nsparse_levels = [1, 2]\n");
    assert_eq!(rcond(&["--config", &cfg], dir.path()).status.code(), Some(0));
    let text = fs::read_to_string(dir.path().join("sparsity.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("sigma,d,before,after"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r[3] >= r[2]));
}
