#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures/toy")
        .join(rel)
}

/// Runs the CLI with `args`, writing under `out`.
pub fn cli(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_affect-tune"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn ok(o: Output) -> Output {
    assert!(
        o.status.success(),
        "command failed:\n{}\n{}",
        stdout(&o),
        stderr(&o)
    );
    o
}

pub fn config(name: &str) -> String {
    fixture(name).display().to_string()
}

/// Every line of a JSONL run manifest whose `event` equals `kind`.
pub fn manifest_events(out: &Path, kind: &str) -> Vec<serde_json::Value> {
    std::fs::read_to_string(out.join("run_manifest.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap())
        .filter(|v| v["event"] == kind)
        .map(|v| v["data"].clone())
        .collect()
}
