//! Helpers for driving the `vaelab` binary in integration tests.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn vaelab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_vaelab"))
}

pub fn run_ok(args: &[&str]) -> Output {
    let out = vaelab().args(args).output().expect("spawn vaelab");
    assert!(
        out.status.success(),
        "vaelab {:?} failed with {:?}\nstderr: {}",
        args,
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn run_expect_code(args: &[&str], code: i32) -> Output {
    let out = vaelab().args(args).output().expect("spawn vaelab");
    assert_eq!(
        out.status.code(),
        Some(code),
        "vaelab {:?}\nstderr: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Deterministic synthetic digit IDX files for driving the CLI.
pub fn digit_fixture(dir: &Path, n: usize, seed: u64) -> (PathBuf, PathBuf) {
    let ds = vaelab_core::data::synth_digits(n, seed).unwrap();
    let images = dir.join(format!("digits-{n}-{seed}-images.idx"));
    let labels = dir.join(format!("digits-{n}-{seed}-labels.idx"));
    vaelab_core::data::write_idx(&ds, &images, Some(&labels)).unwrap();
    (images, labels)
}

pub fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

pub fn read_text(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

/// Parse a metrics.csv column by header name; rows keyed by step.
pub fn metrics_column(csv: &str, column: &str) -> Vec<(usize, f64)> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().expect("metrics header").split(',').collect();
    let col = header
        .iter()
        .position(|h| *h == column)
        .unwrap_or_else(|| panic!("no column '{column}' in {header:?}"));
    lines
        .map(|line| {
            let fields: Vec<&str> = line.split(',').collect();
            (
                fields[0].parse::<usize>().expect("step"),
                fields[col].parse::<f64>().expect("value"),
            )
        })
        .collect()
}
