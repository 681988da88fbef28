//! Helpers for driving the `fdp` binary from tests.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

/// A desk-scale run configuration: 16×32×32 phantoms, 6/2/2 splits.
pub const SMALL_CONFIG: &str = "\
[splits]
train = 6
val = 2
test = 2

[phantom]
dims = [16, 32, 32]
lesion_radius = [2.0, 4.0]

[frm]
epochs = 3
";

pub fn fdp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fdp"))
        .args(args)
        .current_dir(dir)
        .env_remove("FDP_THREADS")
        .output()
        .expect("fdp binary runs")
}

/// Runs `fdp`, panicking with its stderr unless it exits 0.
pub fn fdp_ok(dir: &Path, args: &[&str]) -> String {
    let out = fdp(dir, args);
    assert!(out.status.success(), "fdp {args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// A scratch directory holding `config.toml` with [`SMALL_CONFIG`].
pub fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("config.toml"), SMALL_CONFIG).unwrap();
    dir
}

/// Every file under `root`, keyed by relative path.
pub fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

/// Header and rows of a CSV file.
pub fn csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let mut lines = text.lines().map(|l| l.split(',').map(str::to_string).collect::<Vec<_>>());
    let header = lines.next().unwrap();
    (header, lines.collect())
}

pub fn column(header: &[String], rows: &[Vec<String>], name: &str) -> Vec<f64> {
    let i = header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name} in {header:?}"));
    rows.iter().map(|r| r[i].parse().unwrap()).collect()
}
