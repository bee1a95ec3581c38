//! Helpers shared by the integration tests.

#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use metric_recon::kinematics::RobotModel;
use metric_recon::scene::{generate_scene, GenConfig, SceneBundle};

pub fn robot() -> RobotModel {
    RobotModel::default_arm()
}

pub fn small_bundle(seed: u64) -> SceneBundle {
    generate_scene(seed, &GenConfig::with_size(64, 48), &robot()).expect("scene generates")
}

/// Runs the command-line binary with `args`.
pub fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_metric-recon"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn path(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// Generates `scenes` small scenes under `dir` through the binary.
pub fn gen_small(dir: &Path, seed: u64, scenes: usize) {
    let out = cli(&[
        "gen-scenes",
        "--seed",
        &seed.to_string(),
        "--scenes",
        &scenes.to_string(),
        "--width",
        "64",
        "--height",
        "48",
        "--out",
        path(dir),
    ]);
    assert!(out.status.success(), "gen-scenes failed: {}", stderr(&out));
}

pub fn read_json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(p).expect("readable")).expect("valid json")
}
