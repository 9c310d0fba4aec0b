//! Helpers shared by the CLI tests and the acceptance suite.
#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pseudoref"))
}

pub fn run(args: &[&str], cwd: &Path) -> Output {
    bin().args(args).current_dir(cwd).output().expect("binary runs")
}

pub fn ok(args: &[&str], cwd: &Path) -> Output {
    let out = run(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} exited {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Smooth 64×64 RGB test card with slightly different channel gains.
pub fn write_png(path: &Path) {
    let img = image::RgbImage::from_fn(64, 64, |x, y| {
        let (u, v) = (x as f64 / 64.0, y as f64 / 64.0);
        let b = 0.5 + 0.3 * (3.0 * u).sin() * (2.0 * v).cos() + 0.1 * (-((u - 0.3).powi(2) + (v - 0.6).powi(2)) * 20.0).exp();
        let px = |g: f64| ((b * g).clamp(0.0, 1.0) * 255.0).round() as u8;
        image::Rgb([px(1.02), px(1.0), px(0.98)])
    });
    img.save(path).unwrap();
}

pub fn f32le(path: &Path) -> Vec<f64> {
    fs::read(path).unwrap().chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64).collect()
}

/// PSNR (peak 1) of every frame's first `n` values against the clean
/// payload, read straight from the bundle files.
pub fn raw_psnrs(bundle: &Path) -> (Vec<u64>, Vec<f64>) {
    let manifest: Value = serde_json::from_str(&fs::read_to_string(bundle.join("manifest.json")).unwrap()).unwrap();
    let clean = f32le(&bundle.join("clean.bin"));
    let frames = f32le(&bundle.join("frames.bin"));
    let per_frame = frames.len() / manifest["frame_count"].as_u64().unwrap() as usize;
    let psnrs = frames
        .chunks_exact(per_frame)
        .map(|f| {
            let mse = f[..clean.len()].iter().zip(&clean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / clean.len() as f64;
            10.0 * (1.0 / mse).log10()
        })
        .collect();
    let its = manifest["iterations"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
    (its, psnrs)
}

pub fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

pub struct Pipeline {
    pub dir: tempfile::TempDir,
}

impl Pipeline {
    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

/// corrupt → run (three modes) → stop, in a fresh directory.
pub fn pipeline() -> Pipeline {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_png(&d.join("x.png"));
    ok(&["corrupt", "--in", "x.png", "--family", "gaussian", "--level", "0.26", "--seed", "7", "--out", "in"], d);
    fs::write(d.join("cfg.json"), r#"{"input": "in", "surrogate": {"iterations": 3000, "stride": 10}}"#).unwrap();
    for mode in ["plain", "masked", "augmented"] {
        ok(&["run", "--mode", mode, "--config", "cfg.json", "--out", mode], d);
    }
    ok(&["stop", "--bundle", "plain", "--criteria", "csr,wmv,sure", "--out", "r_plain.json", "--curves-dir", "curves"], d);
    ok(&["stop", "--bundle", "masked", "--criteria", "mr,wmv", "--out", "r_masked.json"], d);
    ok(&["stop", "--bundle", "augmented", "--criteria", "acr,acr-mse,wmv", "--out", "r_aug.json"], d);
    Pipeline { dir }
}

