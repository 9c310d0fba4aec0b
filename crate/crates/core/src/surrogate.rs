//! Desk-scale stand-in for network reconstruction trajectories.
//!
//! The reconstructor is a preconditioned Landweber iteration started from
//! zero,
//!
//! ```text
//! x_{t+1} = x_t + η · G ⊛ (y − x_t)
//! ```
//!
//! where `G ⊛` multiplies each channel's spectrum by the Gaussian low-pass
//! gain `s(ω) = exp(−‖ω‖² / 2β²)`. Low frequencies are fitted first, which
//! gives the rise-then-fall PSNR behaviour of a network that eventually
//! overfits noise. Per frequency the iterate has the closed form
//! `x̂_t(ω) = g_t(ω)·ŷ(ω)` with `g_t(ω) = 1 − (1 − η s(ω))^t`, and the
//! normalized divergence of the map `y ↦ x̂_t` is the mean of `g_t`.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corruption::HoldoutMask;
use crate::error::{Error, Result};
use crate::fourier::{Fft2, FrequencyGrid};
use crate::tensor::{ImageTensor, Provenance, Shape, Trajectory};

/// Default bandwidth as a fraction of `min(H, W)`.
pub const DEFAULT_BANDWIDTH_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateConfig {
    /// Step size η; stability needs `η·s(ω) ≤ 1`, i.e. `η ≤ 1`.
    pub step: f64,
    pub iterations: u64,
    /// Low-pass width β in integer-frequency units. `None` picks
    /// `0.05·min(H, W)`; `f64::INFINITY` turns the smoother into the
    /// identity.
    pub bandwidth: Option<f64>,
    pub stride: u64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self { step: 0.01, iterations: 3000, bandwidth: None, stride: 10 }
    }
}

impl SurrogateConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) {
            return Err(Error::Config(format!("step must be positive, got {}", self.step)));
        }
        // s(0) = 1, so η·s(ω) ≤ 1 everywhere iff η ≤ 1.
        if self.step > 1.0 {
            return Err(Error::Config(format!(
                "unstable step: η·s(0) = {} > 1",
                self.step
            )));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if self.stride == 0 {
            return Err(Error::Config("checkpoint stride must be at least 1".into()));
        }
        if let Some(b) = self.bandwidth {
            if !(b > 0.0) {
                return Err(Error::Config(format!("bandwidth must be positive, got {b}")));
            }
        }
        Ok(())
    }

    pub fn bandwidth_for(&self, height: usize, width: usize) -> f64 {
        self.bandwidth
            .unwrap_or_else(|| DEFAULT_BANDWIDTH_FRACTION * height.min(width) as f64)
    }

    /// Checkpoint iterations: every `stride`, plus the final iteration.
    pub fn checkpoints(&self) -> Vec<u64> {
        let mut out: Vec<u64> = (1..)
            .map(|k| k * self.stride)
            .take_while(|&t| t <= self.iterations)
            .collect();
        if out.last() != Some(&self.iterations) {
            out.push(self.iterations);
        }
        out
    }
}

/// `s(ω)` on the H×W grid.
pub fn preconditioner_gains(height: usize, width: usize, bandwidth: f64) -> Vec<f64> {
    let grid = FrequencyGrid::new(height, width);
    grid.weights()
        .iter()
        .map(|&w2| if bandwidth.is_infinite() { 1.0 } else { (-w2 / (2.0 * bandwidth * bandwidth)).exp() })
        .collect()
}

/// Closed-form evaluator of the plain surrogate for one input.
#[derive(Debug, Clone)]
pub struct SpectralSurrogate {
    shape: Shape,
    fft: Fft2,
    /// `ln(1 − η s(ω))`, precomputed for `g_t`.
    log_decay: Vec<f64>,
    spectra: Vec<Vec<Complex64>>,
    peak: f64,
}

impl SpectralSurrogate {
    pub fn new(y: &ImageTensor, cfg: &SurrogateConfig) -> Result<Self> {
        cfg.validate()?;
        let (h, w) = (y.height(), y.width());
        let fft = Fft2::new(h, w);
        let gains = preconditioner_gains(h, w, cfg.bandwidth_for(h, w));
        let log_decay = gains.iter().map(|&s| (-cfg.step * s).ln_1p()).collect();
        let spectra = y.planes().map(|p| fft.forward_real(p)).collect::<Result<Vec<_>>>()?;
        Ok(Self { shape: y.shape(), fft, log_decay, spectra, peak: y.peak() })
    }

    /// `g_t(ω) = 1 − (1 − η s(ω))^t` for every bin.
    pub fn gains_at(&self, t: u64) -> Vec<f64> {
        if t == 0 {
            return vec![0.0; self.log_decay.len()];
        }
        let t = t as f64;
        self.log_decay.iter().map(|&l| -(t * l).exp_m1()).collect()
    }

    /// Normalized divergence `tr(∂x̂_t/∂y)/n = mean_ω g_t(ω)`.
    pub fn divergence_at(&self, t: u64) -> f64 {
        let g = self.gains_at(t);
        g.iter().sum::<f64>() / g.len() as f64
    }

    /// The iterate `x̂_t`.
    pub fn frame_at(&self, t: u64) -> ImageTensor {
        let gains = self.gains_at(t);
        self.frame_with_gains(&gains)
    }

    fn frame_with_gains(&self, gains: &[f64]) -> ImageTensor {
        let mut data = Vec::with_capacity(self.shape.len());
        let mut buf = vec![Complex64::new(0.0, 0.0); self.shape.plane_len()];
        for spectrum in &self.spectra {
            for ((b, z), g) in buf.iter_mut().zip(spectrum).zip(gains) {
                *b = z * g;
            }
            self.fft.inverse_in_place(&mut buf).expect("buffer sized to the plane");
            data.extend(buf.iter().map(|z| z.re));
        }
        ImageTensor::new(self.shape, data)
            .and_then(|t| t.with_peak(self.peak))
            .expect("frame matches input shape")
    }

    /// Frames and divergences at each checkpoint.
    pub fn trajectory(&self, checkpoints: &[u64], provenance: Provenance) -> Result<Trajectory> {
        let (frames, divergence): (Vec<_>, Vec<_>) = checkpoints
            .par_iter()
            .map(|&t| {
                let g = self.gains_at(t);
                let div = g.iter().sum::<f64>() / g.len() as f64;
                (self.frame_with_gains(&g), div)
            })
            .unzip();
        Trajectory::new(frames, checkpoints.to_vec(), Some(divergence), provenance)
    }
}

/// Plain fitting of `y`. Frames are emitted every `stride` iterations and
/// carry the analytic divergence.
pub fn run_plain(y: &ImageTensor, cfg: &SurrogateConfig) -> Result<Trajectory> {
    SpectralSurrogate::new(y, cfg)?.trajectory(&cfg.checkpoints(), Provenance::Plain)
}

/// Masked-loss fitting: `x_{t+1} = x_t + η·G ⊛ (M ⊙ (y − x_t))`.
///
/// The residual is masked before smoothing, so held-out pixels influence
/// nothing; they only receive signal smoothed in from retained neighbours.
/// The trajectory carries no divergence.
pub fn run_masked(y: &ImageTensor, mask: &HoldoutMask, cfg: &SurrogateConfig) -> Result<Trajectory> {
    cfg.validate()?;
    if (mask.height(), mask.width()) != (y.height(), y.width()) {
        return Err(Error::Shape(format!(
            "mask is {}x{}, observation is {}",
            mask.height(),
            mask.width(),
            y.shape()
        )));
    }
    if mask.kept_count() == 0 {
        return Err(Error::Config("mask retains no pixels; nothing to fit".into()));
    }
    let checkpoints = cfg.checkpoints();
    if mask.held_out_count() == 0 {
        // The masked loss is the plain loss.
        let plain = run_plain(y, cfg)?;
        return Trajectory::new(
            plain.frames().to_vec(),
            checkpoints,
            None,
            Provenance::Masked(mask.clone()),
        );
    }
    let frames = masked_frames(y, mask.keep(), cfg, &checkpoints)?;
    Trajectory::new(frames, checkpoints, None, Provenance::Masked(mask.clone()))
}

/// Iterates the masked update channel by channel (in parallel) and
/// assembles frames at `checkpoints`.
pub(crate) fn masked_frames(
    y: &ImageTensor,
    keep: &[u8],
    cfg: &SurrogateConfig,
    checkpoints: &[u64],
) -> Result<Vec<ImageTensor>> {
    let (h, w) = (y.height(), y.width());
    let fft = Fft2::new(h, w);
    let gains = preconditioner_gains(h, w, cfg.bandwidth_for(h, w));
    let step_gains: Vec<f64> = gains.iter().map(|s| cfg.step * s).collect();
    let per_channel: Vec<Vec<Vec<f64>>> = (0..y.channels())
        .into_par_iter()
        .map(|c| masked_landweber(y.plane(c), keep, &step_gains, &fft, checkpoints))
        .collect();
    let frames = (0..checkpoints.len())
        .map(|k| {
            let data: Vec<f64> = per_channel.iter().flat_map(|ch| ch[k].iter().copied()).collect();
            ImageTensor::new(y.shape(), data).and_then(|t| t.with_peak(y.peak()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(frames)
}

fn masked_landweber(
    y: &[f64],
    keep: &[u8],
    step_gains: &[f64],
    fft: &Fft2,
    checkpoints: &[u64],
) -> Vec<Vec<f64>> {
    let last = *checkpoints.last().expect("at least one checkpoint");
    let mut x = vec![0.0; y.len()];
    let mut buf = vec![Complex64::new(0.0, 0.0); y.len()];
    let mut out = Vec::with_capacity(checkpoints.len());
    let mut next = checkpoints.iter().peekable();
    for t in 1..=last {
        for i in 0..y.len() {
            let r = if keep[i] == 1 { y[i] - x[i] } else { 0.0 };
            buf[i] = Complex64::new(r, 0.0);
        }
        fft.forward_in_place(&mut buf).expect("plane-sized buffer");
        for (b, g) in buf.iter_mut().zip(step_gains) {
            *b *= g;
        }
        fft.inverse_in_place(&mut buf).expect("plane-sized buffer");
        for (xi, b) in x.iter_mut().zip(&buf) {
            *xi += b.re;
        }
        if next.peek() == Some(&&t) {
            out.push(x.clone());
            next.next();
        }
    }
    out
}

/// Augmented fitting of `concat(y, y1)` under shared dynamics. Frames
/// have `2C` channels; the primary reconstruction is channels `0..C`.
pub fn run_augmented(y: &ImageTensor, y1: &ImageTensor, cfg: &SurrogateConfig) -> Result<Trajectory> {
    y.ensure_same_shape(y1)?;
    let target = y.concat_channels(y1)?;
    SpectralSurrogate::new(&target, cfg)?.trajectory(&cfg.checkpoints(), Provenance::Augmented)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corruption::{corrupt, derive_seed, sample_mask, NoiseSpec};
    use crate::metrics::{mse, psnr_between};
    use crate::synthetic::smooth_scene;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: Shape, seed: u64) -> ImageTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageTensor::from_fn(shape, |_, _, _| rng.random::<f64>()).unwrap()
    }

    #[test]
    fn checkpoints_include_final_iteration() {
        let cfg = SurrogateConfig { iterations: 25, stride: 10, ..Default::default() };
        assert_eq!(cfg.checkpoints(), vec![10, 20, 25]);
        let cfg = SurrogateConfig { iterations: 30, stride: 10, ..Default::default() };
        assert_eq!(cfg.checkpoints(), vec![10, 20, 30]);
        let cfg = SurrogateConfig { iterations: 5, stride: 5, ..Default::default() };
        assert_eq!(cfg.checkpoints(), vec![5]);
    }

    #[test]
    fn rejects_unstable_step() {
        let y = random(Shape::new(1, 4, 4), 0);
        let cfg = SurrogateConfig { step: 1.5, ..Default::default() };
        assert!(matches!(run_plain(&y, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn zero_iterations_give_zero_frame() {
        let y = random(Shape::new(2, 6, 6), 1);
        let s = SpectralSurrogate::new(&y, &SurrogateConfig::default()).unwrap();
        assert!(s.frame_at(0).as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn long_run_converges_to_observation() {
        let y = random(Shape::new(1, 8, 8), 2);
        let cfg = SurrogateConfig { step: 1.0, bandwidth: Some(4.0), ..Default::default() };
        let s_min = preconditioner_gains(8, 8, 4.0).into_iter().fold(f64::INFINITY, f64::min);
        // (1 − η s_min)^T < 1e−4.
        let t = ((1e-4f64).ln() / (1.0 - s_min).ln()).ceil() as u64;
        let s = SpectralSurrogate::new(&y, &cfg).unwrap();
        assert!(mse(&s.frame_at(t), &y).unwrap() < 1e-6);
    }

    #[test]
    fn one_step_is_smoothed_observation() {
        let y = random(Shape::new(1, 5, 6), 3);
        let cfg = SurrogateConfig { step: 0.3, bandwidth: Some(1.5), ..Default::default() };
        let frame = SpectralSurrogate::new(&y, &cfg).unwrap().frame_at(1);
        // Direct evaluation of η·(G ⊛ y).
        let fft = Fft2::new(5, 6);
        let s = preconditioner_gains(5, 6, 1.5);
        let mut spec = fft.forward_real(y.plane(0)).unwrap();
        for (z, g) in spec.iter_mut().zip(&s) {
            *z *= 0.3 * g;
        }
        let direct = fft.inverse_real(&spec).unwrap();
        for (a, b) in frame.as_slice().iter().zip(&direct) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn closed_form_matches_iteration() {
        let y = random(Shape::new(1, 6, 6), 4);
        let cfg = SurrogateConfig { step: 0.5, bandwidth: Some(2.0), iterations: 40, stride: 8 };
        let all_kept = vec![1u8; 36];
        let iterative = masked_frames(&y, &all_kept, &cfg, &cfg.checkpoints()).unwrap();
        let closed = run_plain(&y, &cfg).unwrap();
        for (a, b) in iterative.iter().zip(closed.frames()) {
            assert!(mse(a, b).unwrap().sqrt() < 1e-12);
        }
    }

    #[test]
    fn gains_are_monotone_in_time_and_frequency() {
        let y = random(Shape::new(1, 16, 16), 5);
        let s = SpectralSurrogate::new(&y, &SurrogateConfig::default()).unwrap();
        let grid = FrequencyGrid::new(16, 16);
        let mut prev = s.gains_at(0);
        for t in [1u64, 5, 50, 500, 3000] {
            let g = s.gains_at(t);
            assert!(g.iter().zip(&prev).all(|(a, b)| a >= b));
            for (i, j) in [(0, 1), (1, 2), (2, 17), (17, 34)] {
                if grid.weights()[i] < grid.weights()[j] {
                    assert!(g[i] >= g[j]);
                }
            }
            prev = g;
        }
    }

    #[test]
    fn all_kept_mask_reduces_to_plain() {
        let y = random(Shape::new(2, 8, 8), 6);
        let cfg = SurrogateConfig { iterations: 50, stride: 10, ..Default::default() };
        let mask = HoldoutMask::from_plane(8, 8, vec![1; 64], 1.0).unwrap();
        let masked = run_masked(&y, &mask, &cfg).unwrap();
        let plain = run_plain(&y, &cfg).unwrap();
        assert_eq!(masked.frames(), plain.frames());
        assert_eq!(masked.provenance(), &Provenance::Masked(mask));
    }

    #[test]
    fn empty_retained_set_is_rejected() {
        let y = random(Shape::new(1, 3, 3), 7);
        let mask = HoldoutMask::from_plane(3, 3, vec![0; 9], 0.0).unwrap();
        assert!(matches!(run_masked(&y, &mask, &SurrogateConfig::default()), Err(Error::Config(_))));
    }

    #[test]
    fn held_out_pixel_without_coupling_stays_at_zero() {
        let y = random(Shape::new(1, 6, 6), 8);
        let mut keep = vec![1u8; 36];
        keep[14] = 0;
        let mask = HoldoutMask::from_plane(6, 6, keep, 0.97).unwrap();
        let cfg = SurrogateConfig { step: 0.5, bandwidth: Some(f64::INFINITY), iterations: 200, stride: 50 };
        let traj = run_masked(&y, &mask, &cfg).unwrap();
        for frame in traj.frames() {
            assert!(frame.as_slice()[14].abs() < 1e-12);
        }
        // Retained pixels still converge.
        assert!((traj.frames()[3].as_slice()[0] - y.as_slice()[0]).abs() < 1e-6);
    }

    #[test]
    fn held_out_sensitivity_is_zero() {
        let y = random(Shape::new(1, 12, 12), 9);
        let mask = sample_mask(12, 12, 0.9, 10).unwrap();
        let cfg = SurrogateConfig { step: 0.5, bandwidth: Some(3.0), iterations: 60, stride: 20 };
        let base = run_masked(&y, &mask, &cfg).unwrap();
        let h = 1e-3;
        for i in mask.held_out_indices() {
            let mut bumped = y.clone();
            bumped.as_mut_slice()[i] += h;
            let probe = run_masked(&bumped, &mask, &cfg).unwrap();
            for (a, b) in base.frames().iter().zip(probe.frames()) {
                assert!(((b.as_slice()[i] - a.as_slice()[i]) / h).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn augmented_channels_follow_their_targets() {
        let y = random(Shape::new(3, 8, 8), 11);
        let y1 = random(Shape::new(3, 8, 8), 12);
        let cfg = SurrogateConfig { iterations: 100, stride: 25, ..Default::default() };
        let aug = run_augmented(&y, &y1, &cfg).unwrap();
        assert_eq!(aug.shape().channels, 6);
        let aux_only = run_plain(&y1, &cfg).unwrap();
        let primary_only = run_plain(&y, &cfg).unwrap();
        for k in 0..aug.len() {
            let frame = &aug.frames()[k];
            assert_eq!(frame.select_channels(3..6).unwrap().as_slice(), aux_only.frames()[k].as_slice());
            assert_eq!(aug.primary(k).as_slice(), primary_only.frames()[k].as_slice());
        }
        let same = run_augmented(&y, &y, &cfg).unwrap();
        for frame in same.frames() {
            assert_eq!(frame.select_channels(0..3).unwrap(), frame.select_channels(3..6).unwrap());
        }
    }

    #[test]
    fn augmented_rejects_shape_mismatch() {
        let y = random(Shape::new(3, 8, 8), 1);
        let y1 = random(Shape::new(3, 8, 7), 2);
        assert!(matches!(run_augmented(&y, &y1, &SurrogateConfig::default()), Err(Error::Shape(_))));
    }

    #[test]
    fn divergence_matches_random_probe_estimate() {
        let shape = Shape::new(1, 64, 64);
        let cfg = SurrogateConfig::default();
        let t = 3000;
        let probes = 256;
        let mut estimate = 0.0;
        for k in 0..probes {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(99, k));
            let b = ImageTensor::from_fn(shape, |_, _, _| if rng.random::<bool>() { 1.0 } else { -1.0 })
                .unwrap();
            let fb = SpectralSurrogate::new(&b, &cfg).unwrap().frame_at(t);
            let dot: f64 = b.as_slice().iter().zip(fb.as_slice()).map(|(p, q)| p * q).sum();
            estimate += dot / b.len() as f64;
        }
        estimate /= probes as f64;
        let analytic = SpectralSurrogate::new(&ImageTensor::zeros(shape).unwrap(), &cfg)
            .unwrap()
            .divergence_at(t);
        assert!((estimate / analytic - 1.0).abs() < 0.02, "{estimate} vs {analytic}");
    }

    #[test]
    fn oracle_is_interior_on_noisy_scenes() {
        let cfg = SurrogateConfig::default();
        let spec = NoiseSpec::gaussian(0.26).unwrap();
        let mut interior = 0;
        for seed in 0..10u64 {
            let x = smooth_scene(Shape::new(3, 64, 64), derive_seed(seed, 0)).unwrap();
            let y = corrupt(&x, &spec, derive_seed(seed, 1)).unwrap();
            let traj = run_plain(&y, &cfg).unwrap();
            let psnrs: Vec<f64> = traj.frames().iter().map(|f| psnr_between(f, &x).unwrap()).collect();
            let best = psnrs
                .iter()
                .enumerate()
                .fold(0, |b, (i, &p)| if p > psnrs[b] { i } else { b });
            if best > 0 && best + 1 < psnrs.len() {
                interior += 1;
            }
        }
        assert!(interior >= 9, "interior oracle on {interior}/10 seeds");
    }
}
