//! Helpers shared by the CLI integration tests.
#![allow(dead_code)]

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

pub const TINY: &str = "\
seed = 3
data.source_images = 12
data.target_images = 10
data.test_images = 6
shapes.image_size = 32
student.input_size = 32
student.grid = 8
student.channels = 8,8,8
student.head_kernel = 3
teacher.input_size = 32
teacher.grid = 8
teacher.channels = 8,12,12
teacher.head_kernel = 3
train.epochs = 2
train.batch_size = 4
train.val_size = 3
train.warmup_epochs = 0
adapt.epochs = 2
adapt.w = 1
adapt.batch_size = 4
adapt.val_size = 3
mix.canvas = 32
";

pub const SUITE: &str = "# two kinds, all severities\ncontrast:1-5\nbrightness:1-5\n";

pub fn simrod(dir: &Path, args: &[&str]) -> Output {
    simrod_seeded(dir, args, None)
}

/// Runs the binary with `SIMROD_SEED` set to `seed`, or unset.
pub fn simrod_seeded(dir: &Path, args: &[&str], seed: Option<u64>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_simrod"));
    cmd.current_dir(dir).args(args);
    match seed {
        Some(s) => cmd.env("SIMROD_SEED", s.to_string()),
        None => cmd.env_remove("SIMROD_SEED"),
    };
    cmd.output().expect("binary runs")
}

pub fn ok(dir: &Path, args: &[&str]) -> String {
    ok_seeded(dir, args, None)
}

/// Stdout of a successful run; panics with stderr otherwise.
pub fn ok_seeded(dir: &Path, args: &[&str], seed: Option<u64>) -> String {
    let out = simrod_seeded(dir, args, seed);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// The full recipe; returns the final report JSON.
pub fn recipe(dir: &Path) -> String {
    fs::write(dir.join("run.conf"), TINY).unwrap();
    fs::write(dir.join("suite.txt"), SUITE).unwrap();
    let c = ["--config", "run.conf"];
    let with = |args: &[&'static str]| -> Vec<&'static str> { args.iter().chain(c.iter()).copied().collect() };
    ok(dir, &with(&["gen-data", "--out", "data"]));
    ok(dir, &with(&["corrupt", "--input", "data/target-raw", "--output", "data/target"]));
    ok(dir, &with(&["train-source", "--data", "data/source", "--out", "models/student.ck"]));
    ok(dir, &with(&["train-source", "--teacher", "--data", "data/source", "--out", "models/teacher.ck"]));
    ok(
        dir,
        &with(&[
            "adapt", "--mode", "teacher", "--model", "models/student.ck", "--teacher", "models/teacher.ck",
            "--source", "data/source", "--target", "data/target", "--out", "runs/teacher",
        ]),
    );
    ok(
        dir,
        &with(&[
            "evaluate", "--model", "models/student.ck", "--data", "data/test", "--suite", "suite.txt", "--out",
            "reports/source.json",
        ]),
    );
    let line = ok(
        dir,
        &with(&[
            "evaluate", "--model", "runs/teacher/model.ck", "--data", "data/test", "--suite", "suite.txt",
            "--source-report", "reports/source.json", "--out", "reports/adapted.json", "--model-id", "adapted",
        ]),
    );
    assert!(line.contains("tau_c"), "{line}");
    fs::read_to_string(dir.join("reports/adapted.json")).unwrap()
}
