//! Bundles exported by the Python trainer (see `fixtures/make_golden.py`)
//! must read identically and re-serialize to the same payload bytes.

use std::fs;
use std::path::{Path, PathBuf};

use pseudoref::bundle::{read_bundle, read_manifest, write_bundle, AuxRecord};
use pseudoref::corruption::NoiseFamily;
use pseudoref::stoppers::{acr_curve, mr_curve};
use pseudoref::Provenance;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

// Same formulas as the generator.
fn frame_value(k: usize, c: usize, r: usize, w: usize) -> f64 {
    ((k * 7 + c * 3 + r * 5 + w * 11) % 32) as f64 / 32.0 - 0.25
}

fn y_value(c: usize, r: usize, w: usize) -> f64 {
    ((c * 5 + r * 3 + w) % 16) as f64 / 16.0
}

fn clean_value(c: usize, r: usize, w: usize) -> f64 {
    ((c + r + w) % 8) as f64 / 8.0
}

fn check_common(b: &pseudoref::bundle::Bundle, channels: usize, height: usize, width: usize) {
    assert_eq!((b.noise.family, b.noise.level, b.noise.seed), (NoiseFamily::Gaussian, 0.1, 42));
    let traj = b.require_trajectory().unwrap();
    for (k, frame) in traj.frames().iter().enumerate() {
        let s = frame.shape();
        for c in 0..s.channels {
            for r in 0..height {
                for w in 0..width {
                    assert_eq!(frame.get(c, r, w), frame_value(k, c, r, w), "frame {k} ({c},{r},{w})");
                }
            }
        }
    }
    let clean = b.clean.as_ref().unwrap();
    assert_eq!(b.y.shape(), clean.shape());
    assert_eq!(b.y.channels(), channels);
    for c in 0..channels {
        for r in 0..height {
            for w in 0..width {
                assert_eq!(b.y.get(c, r, w), y_value(c, r, w));
                assert_eq!(clean.get(c, r, w), clean_value(c, r, w));
            }
        }
    }
}

fn assert_rewrite_is_byte_identical(name: &str) {
    let src = fixture(name);
    let bundle = read_bundle(&src).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_bundle(dir.path(), &bundle).unwrap();
    assert_eq!(manifest, read_manifest(&src).unwrap());
    for file in manifest.checksums.keys() {
        assert_eq!(fs::read(src.join(file)).unwrap(), fs::read(dir.path().join(file)).unwrap(), "{name}/{file}");
    }
    assert_eq!(read_bundle(dir.path()).unwrap(), bundle);
}

#[test]
fn golden_augmented_bundle() {
    let b = read_bundle(&fixture("golden_augmented")).unwrap();
    assert_eq!(b.mode(), "augmented");
    assert_eq!(b.aux, Some(AuxRecord { tau1: 0.125, tau2: 0.125, seeds: [11, 12] }));
    check_common(&b, 3, 4, 5);
    let traj = b.require_trajectory().unwrap();
    assert_eq!(traj.iterations(), &[10, 20, 30]);
    assert_eq!(traj.shape().channels, 6);
    assert_eq!(traj.divergence(), None);
    let (y1, y2) = (b.y1.as_ref().unwrap(), b.y2.as_ref().unwrap());
    for (i, (&a, &v)) in y1.as_slice().iter().zip(b.y.as_slice()).enumerate() {
        assert_eq!(a, v + 1.0 / 64.0, "y1[{i}]");
        assert_eq!(y2.as_slice()[i], v - 1.0 / 64.0, "y2[{i}]");
    }
    // Usable by the augmented criterion without conversion.
    assert_eq!(acr_curve(traj, y2, 0).unwrap().values.len(), 3);
    assert_rewrite_is_byte_identical("golden_augmented");
}

#[test]
fn golden_masked_bundle() {
    let b = read_bundle(&fixture("golden_masked")).unwrap();
    assert_eq!(b.mode(), "masked");
    assert_eq!(b.aux, None);
    check_common(&b, 3, 6, 7);
    let traj = b.require_trajectory().unwrap();
    assert_eq!(traj.iterations(), &[5, 10, 15, 20]);
    assert_eq!(traj.divergence(), Some(&[0.5, 0.25, 0.125, 0.0625][..]));
    let mask = b.mask().unwrap();
    for i in 0..42 {
        assert_eq!(mask.is_held_out(i), i % 5 == 0, "pixel {i}");
    }
    assert!(matches!(traj.provenance(), Provenance::Masked(_)));
    assert_eq!(mr_curve(traj, &b.y, mask).unwrap().values.len(), 4);
    assert_rewrite_is_byte_identical("golden_masked");
}
