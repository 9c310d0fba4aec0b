//! Trajectory bundles: a directory holding `manifest.json` and raw
//! little-endian `f32` payloads, each guarded by a CRC32 checksum.
//!
//! ```text
//! bundle/
//!   manifest.json
//!   frames.bin   frame-major, then channel-major, then row-major f32le
//!   y.bin        observation (C channels)
//!   y1.bin y2.bin  auxiliary copies (augmented runs)
//!   mask.bin     row-major u8 retention plane, 1 = kept (masked runs)
//!   clean.bin    ground truth, when known
//! ```
//!
//! Values are stored as `f32`, so writing quantizes; a trajectory whose
//! values are already `f32`-representable round-trips bit for bit.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corruption::{HoldoutMask, NoiseFamily};
use crate::error::{Error, Result};
use crate::tensor::{ImageTensor, Provenance, Shape, Trajectory};

pub const BUNDLE_VERSION: u64 = 1;
pub const MANIFEST: &str = "manifest.json";
const DTYPE: &str = "f32le";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseRecord {
    pub family: NoiseFamily,
    pub level: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuxRecord {
    pub tau1: f64,
    pub tau2: f64,
    pub seeds: [u64; 2],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Payloads {
    pub frames: String,
    pub y: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y1: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y2: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clean: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u64,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub frame_count: usize,
    pub iterations: Vec<u64>,
    pub dtype: String,
    pub mode: String,
    pub noise: NoiseRecord,
    pub aux: Option<AuxRecord>,
    pub divergence: Option<Vec<f64>>,
    pub payloads: Payloads,
    pub checksums: BTreeMap<String, String>,
}

/// Everything a bundle holds. Input bundles (before any reconstruction)
/// have no trajectory; their mode is `plain` and `frame_count` is 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub noise: NoiseRecord,
    pub aux: Option<AuxRecord>,
    pub y: ImageTensor,
    pub y1: Option<ImageTensor>,
    pub y2: Option<ImageTensor>,
    pub clean: Option<ImageTensor>,
    pub trajectory: Option<Trajectory>,
}

impl Bundle {
    pub fn input(y: ImageTensor, noise: NoiseRecord) -> Self {
        Self { noise, aux: None, y, y1: None, y2: None, clean: None, trajectory: None }
    }

    pub fn mode(&self) -> &'static str {
        self.trajectory.as_ref().map_or("plain", |t| t.provenance().name())
    }

    pub fn mask(&self) -> Option<&HoldoutMask> {
        match self.trajectory.as_ref().map(Trajectory::provenance) {
            Some(Provenance::Masked(m)) => Some(m),
            _ => None,
        }
    }

    /// The trajectory, or a metadata error for input-only bundles.
    pub fn require_trajectory(&self) -> Result<&Trajectory> {
        self.trajectory
            .as_ref()
            .ok_or_else(|| Error::Metadata("bundle holds no reconstruction frames".into()))
    }

    fn validate(&self) -> Result<()> {
        let c = self.y.channels();
        let plane = (self.y.height(), self.y.width());
        for (name, t) in [("y1", &self.y1), ("y2", &self.y2), ("clean", &self.clean)] {
            if let Some(t) = t {
                if t.shape() != self.y.shape() {
                    return Err(Error::Shape(format!("{name} is {}, y is {}", t.shape(), self.y.shape())));
                }
            }
        }
        if let Some(traj) = &self.trajectory {
            let s = traj.shape();
            if (s.height, s.width) != plane || traj.primary_channels() != c {
                return Err(Error::Shape(format!("frames are {s}, y is {}", self.y.shape())));
            }
            if *traj.provenance() == Provenance::Augmented && (self.y1.is_none() || self.y2.is_none()) {
                return Err(Error::Metadata("augmented bundles need both auxiliary copies".into()));
            }
        }
        Ok(())
    }
}

fn f32_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect()
}

fn crc_hex(bytes: &[u8]) -> String {
    format!("{:08x}", crc32fast::hash(bytes))
}

/// Writes `bundle` into `dir` (created if missing), replacing any existing
/// payloads of the same names.
pub fn write_bundle(dir: &Path, bundle: &Bundle) -> Result<Manifest> {
    bundle.validate()?;
    fs::create_dir_all(dir)?;
    let mut checksums = BTreeMap::new();
    let mut put = |name: &str, bytes: Vec<u8>| -> Result<String> {
        fs::write(dir.join(name), &bytes)?;
        checksums.insert(name.to_string(), crc_hex(&bytes));
        Ok(name.to_string())
    };

    let traj = bundle.trajectory.as_ref();
    let frame_bytes: Vec<u8> = traj
        .map(|t| t.frames().iter().flat_map(|f| f32_bytes(f.as_slice())).collect())
        .unwrap_or_default();
    let payloads = Payloads {
        frames: put("frames.bin", frame_bytes)?,
        y: put("y.bin", f32_bytes(bundle.y.as_slice()))?,
        y1: bundle.y1.as_ref().map(|t| put("y1.bin", f32_bytes(t.as_slice()))).transpose()?,
        y2: bundle.y2.as_ref().map(|t| put("y2.bin", f32_bytes(t.as_slice()))).transpose()?,
        mask: bundle.mask().map(|m| put("mask.bin", m.keep().to_vec())).transpose()?,
        clean: bundle.clean.as_ref().map(|t| put("clean.bin", f32_bytes(t.as_slice()))).transpose()?,
    };
    let manifest = Manifest {
        version: BUNDLE_VERSION,
        height: bundle.y.height(),
        width: bundle.y.width(),
        channels: traj.map_or(bundle.y.channels(), |t| t.shape().channels),
        frame_count: traj.map_or(0, Trajectory::len),
        iterations: traj.map(|t| t.iterations().to_vec()).unwrap_or_default(),
        dtype: DTYPE.to_string(),
        mode: bundle.mode().to_string(),
        noise: bundle.noise,
        aux: bundle.aux,
        divergence: traj.and_then(|t| t.divergence().map(<[f64]>::to_vec)),
        payloads,
        checksums,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(dir.join(MANIFEST), text)?;
    Ok(manifest)
}

struct Reader<'a> {
    dir: &'a Path,
    manifest: &'a Manifest,
}

impl Reader<'_> {
    fn corrupt(&self, reason: impl Into<String>) -> Error {
        Error::CorruptBundle { path: self.dir.to_path_buf(), reason: reason.into() }
    }

    fn bytes(&self, name: &str, expected_len: usize) -> Result<Vec<u8>> {
        let relative = Path::new(name);
        if relative.components().any(|c| !matches!(c, Component::Normal(_))) {
            return Err(self.corrupt(format!("payload path '{name}' escapes the bundle")));
        }
        let path: PathBuf = self.dir.join(relative);
        let bytes = fs::read(&path).map_err(|e| self.corrupt(format!("cannot read {name}: {e}")))?;
        if bytes.len() != expected_len {
            return Err(self.corrupt(format!("{name} has {} bytes, expected {expected_len}", bytes.len())));
        }
        let expected = self
            .manifest
            .checksums
            .get(name)
            .ok_or_else(|| self.corrupt(format!("no checksum recorded for {name}")))?;
        let actual = crc_hex(&bytes);
        if !actual.eq_ignore_ascii_case(expected) {
            return Err(self.corrupt(format!("{name} checksum {actual} does not match {expected}")));
        }
        Ok(bytes)
    }

    fn floats(&self, name: &str, count: usize) -> Result<Vec<f64>> {
        let bytes = self.bytes(name, count * 4)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect())
    }

    fn tensor(&self, name: &str, shape: Shape) -> Result<ImageTensor> {
        ImageTensor::new(shape, self.floats(name, shape.len())?)
    }
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::CorruptBundle {
        path: dir.to_path_buf(),
        reason: format!("cannot read {MANIFEST}: {e}"),
    })?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::CorruptBundle {
        path: dir.to_path_buf(),
        reason: format!("{MANIFEST} is not JSON: {e}"),
    })?;
    // Check the version before the schema so future formats report cleanly.
    match value.get("version").and_then(serde_json::Value::as_u64) {
        Some(BUNDLE_VERSION) => {}
        Some(v) => return Err(Error::Version(v)),
        None => {
            return Err(Error::CorruptBundle { path: dir.to_path_buf(), reason: "manifest has no version".into() })
        }
    }
    serde_json::from_value(value).map_err(|e| Error::CorruptBundle {
        path: dir.to_path_buf(),
        reason: format!("manifest does not match the schema: {e}"),
    })
}

pub fn read_bundle(dir: &Path) -> Result<Bundle> {
    let manifest = read_manifest(dir)?;
    let r = Reader { dir, manifest: &manifest };
    let m = &manifest;
    if m.dtype != DTYPE {
        return Err(r.corrupt(format!("dtype '{}' is not {DTYPE}", m.dtype)));
    }
    if m.height == 0 || m.width == 0 || m.channels == 0 {
        return Err(r.corrupt("dimensions must be positive"));
    }
    if m.iterations.len() != m.frame_count {
        return Err(r.corrupt(format!("{} iterations for {} frames", m.iterations.len(), m.frame_count)));
    }
    let augmented = m.mode == "augmented";
    if augmented && m.channels % 2 != 0 {
        return Err(r.corrupt(format!("augmented bundle with odd channel count {}", m.channels)));
    }
    let y_channels = if augmented { m.channels / 2 } else { m.channels };
    let frame_shape = Shape::new(m.channels, m.height, m.width);
    let y_shape = Shape::new(y_channels, m.height, m.width);

    let frame_data = r.floats(&m.payloads.frames, m.frame_count * frame_shape.len())?;
    let y = r.tensor(&m.payloads.y, y_shape)?;
    let optional = |name: &Option<String>| name.as_deref().map(|n| r.tensor(n, y_shape)).transpose();
    let y1 = optional(&m.payloads.y1)?;
    let y2 = optional(&m.payloads.y2)?;
    let clean = optional(&m.payloads.clean)?;

    let provenance = match m.mode.as_str() {
        "plain" => Provenance::Plain,
        "masked" => {
            let name = m.payloads.mask.as_deref().ok_or_else(|| r.corrupt("masked bundle without mask payload"))?;
            let keep = r.bytes(name, m.height * m.width)?;
            let kept = keep.iter().filter(|&&b| b == 1).count() as f64 / keep.len() as f64;
            Provenance::Masked(
                HoldoutMask::from_plane(m.height, m.width, keep, kept).map_err(|e| r.corrupt(e.to_string()))?,
            )
        }
        "augmented" => {
            if y1.is_none() || y2.is_none() {
                return Err(r.corrupt("augmented bundle without y1/y2 payloads"));
            }
            Provenance::Augmented
        }
        other => return Err(r.corrupt(format!("unknown mode '{other}'"))),
    };

    let trajectory = if m.frame_count == 0 {
        if m.divergence.as_ref().is_some_and(|d| !d.is_empty()) {
            return Err(r.corrupt("divergence recorded for a bundle without frames"));
        }
        None
    } else {
        let frames = frame_data
            .chunks_exact(frame_shape.len())
            .map(|chunk| ImageTensor::new(frame_shape, chunk.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Some(
            Trajectory::new(frames, m.iterations.clone(), m.divergence.clone(), provenance)
                .map_err(|e| r.corrupt(e.to_string()))?,
        )
    };
    Ok(Bundle { noise: m.noise, aux: m.aux, y, y1, y2, clean, trajectory })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corruption::sample_mask;

    fn tensor(shape: Shape, offset: f64) -> ImageTensor {
        ImageTensor::from_fn(shape, |c, r, col| offset + (c * 16 + r * 4 + col) as f64 / 64.0).unwrap()
    }

    fn noise() -> NoiseRecord {
        NoiseRecord { family: NoiseFamily::Gaussian, level: 0.26, seed: 7 }
    }

    #[test]
    fn single_frame_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let shape = Shape::new(1, 2, 2);
        let traj = Trajectory::new(vec![tensor(shape, 0.5)], vec![10], Some(vec![0.125]), Provenance::Plain).unwrap();
        let b = Bundle { trajectory: Some(traj), ..Bundle::input(tensor(shape, 0.0), noise()) };
        write_bundle(dir.path(), &b).unwrap();
        assert_eq!(read_bundle(dir.path()).unwrap(), b);
    }

    #[test]
    fn masked_and_augmented_round_trip() {
        let shape = Shape::new(2, 4, 4);
        let mask = sample_mask(4, 4, 0.7, 1).unwrap();
        let masked = Trajectory::new(
            vec![tensor(shape, 0.0), tensor(shape, 0.25)],
            vec![5, 9],
            None,
            Provenance::Masked(mask),
        )
        .unwrap();
        let b = Bundle {
            clean: Some(tensor(shape, 0.125)),
            trajectory: Some(masked),
            ..Bundle::input(tensor(shape, 0.5), noise())
        };
        let dir = tempfile::tempdir().unwrap();
        write_bundle(dir.path(), &b).unwrap();
        assert_eq!(read_bundle(dir.path()).unwrap(), b);

        let aug = Trajectory::new(vec![tensor(Shape::new(4, 4, 4), 0.0)], vec![3], None, Provenance::Augmented).unwrap();
        let b = Bundle {
            aux: Some(AuxRecord { tau1: 0.325, tau2: 0.325, seeds: [1, 2] }),
            y1: Some(tensor(shape, 1.0)),
            y2: Some(tensor(shape, 2.0)),
            trajectory: Some(aug),
            ..Bundle::input(tensor(shape, 0.5), noise())
        };
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_bundle(dir.path(), &b).unwrap();
        assert_eq!((manifest.channels, manifest.mode.as_str()), (4, "augmented"));
        assert_eq!(read_bundle(dir.path()).unwrap(), b);
    }

    #[test]
    fn input_bundle_has_no_frames() {
        let dir = tempfile::tempdir().unwrap();
        let b = Bundle::input(tensor(Shape::new(3, 4, 4), 0.0), noise());
        let m = write_bundle(dir.path(), &b).unwrap();
        assert_eq!((m.frame_count, m.mode.as_str()), (0, "plain"));
        let back = read_bundle(dir.path()).unwrap();
        assert!(back.trajectory.is_none());
        assert!(matches!(back.require_trajectory(), Err(Error::Metadata(_))));
    }

    #[test]
    fn augmented_without_aux_copies_is_rejected() {
        let shape = Shape::new(1, 2, 2);
        let aug = Trajectory::new(vec![tensor(Shape::new(2, 2, 2), 0.0)], vec![1], None, Provenance::Augmented).unwrap();
        let b = Bundle { trajectory: Some(aug), ..Bundle::input(tensor(shape, 0.0), noise()) };
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(write_bundle(dir.path(), &b), Err(Error::Metadata(_))));
    }

    #[test]
    fn payload_paths_may_not_escape() {
        let dir = tempfile::tempdir().unwrap();
        let shape = Shape::new(1, 2, 2);
        write_bundle(dir.path(), &Bundle::input(tensor(shape, 0.0), noise())).unwrap();
        let path = dir.path().join(MANIFEST);
        let text = fs::read_to_string(&path).unwrap().replace("\"y.bin\"", "\"../y.bin\"");
        fs::write(&path, text).unwrap();
        assert!(matches!(read_bundle(dir.path()), Err(Error::CorruptBundle { .. })));
    }
}
