//! Noise synthesis, auxiliary pseudo-copies, held-out masks and the
//! shared/non-shared noise decomposition.
//!
//! Every random draw is driven by a `ChaCha8Rng` seeded from an explicit
//! `u64`. Independent streams are derived with [`derive_seed`], so results
//! never depend on evaluation order or thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ImageTensor, Shape};

/// Default multiplier for the auxiliary noise level.
pub const DEFAULT_AUX_SCALE: f64 = 1.25;
/// Default retention probability of the held-out mask.
pub const DEFAULT_KEEP_PROBABILITY: f64 = 0.98;
/// Spike amplitude of zero-mean impulse noise.
pub const IMPULSE_AMPLITUDE: f64 = 1.0;

/// SplitMix64 finalizer; maps `(master, stream)` to a decorrelated seed.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Fills a tensor of `shape` with i.i.d. `N(0, sigma²)` draws.
pub fn gaussian_field(shape: Shape, sigma: f64, seed: u64) -> Result<ImageTensor> {
    let mut rng = rng(seed);
    ImageTensor::from_fn(shape, |_, _, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        sigma * z
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseFamily {
    Gaussian,
    Poisson,
    Impulse,
}

impl NoiseFamily {
    pub fn as_str(&self) -> &'static str {
        match self {
            NoiseFamily::Gaussian => "gaussian",
            NoiseFamily::Poisson => "poisson",
            NoiseFamily::Impulse => "impulse",
        }
    }
}

impl std::str::FromStr for NoiseFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" => Ok(NoiseFamily::Gaussian),
            "poisson" => Ok(NoiseFamily::Poisson),
            "impulse" => Ok(NoiseFamily::Impulse),
            other => Err(Error::Domain(format!("unknown noise family '{other}'"))),
        }
    }
}

/// Corruption family and level. `level` is σ (gaussian), the photon scale
/// λ (poisson) or the corruption probability p (impulse).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub family: NoiseFamily,
    pub level: f64,
    #[serde(default = "default_aux_scale")]
    pub aux_scale: f64,
    #[serde(default)]
    pub aux_offset: f64,
}

fn default_aux_scale() -> f64 {
    DEFAULT_AUX_SCALE
}

impl NoiseSpec {
    pub fn new(family: NoiseFamily, level: f64) -> Result<Self> {
        let spec = Self { family, level, aux_scale: DEFAULT_AUX_SCALE, aux_offset: 0.0 };
        spec.validate()?;
        Ok(spec)
    }

    pub fn gaussian(sigma: f64) -> Result<Self> {
        Self::new(NoiseFamily::Gaussian, sigma)
    }

    pub fn poisson(scale: f64) -> Result<Self> {
        Self::new(NoiseFamily::Poisson, scale)
    }

    pub fn impulse(probability: f64) -> Result<Self> {
        Self::new(NoiseFamily::Impulse, probability)
    }

    pub fn with_aux(mut self, scale: f64, offset: f64) -> Result<Self> {
        self.aux_scale = scale;
        self.aux_offset = offset;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        check_level(self.family, self.level)?;
        if !self.aux_scale.is_finite() || !self.aux_offset.is_finite() {
            return Err(Error::Domain("auxiliary scale and offset must be finite".into()));
        }
        Ok(())
    }

    /// Auxiliary level τ: `1.25σ + 0.1c` (gaussian), `1.25λ + c`
    /// (poisson), `1.25p + 0.1c` (impulse), with the configured scale in
    /// place of 1.25.
    pub fn aux_level(&self) -> f64 {
        let base = self.aux_scale * self.level;
        match self.family {
            NoiseFamily::Gaussian | NoiseFamily::Impulse => base + 0.1 * self.aux_offset,
            NoiseFamily::Poisson => base + self.aux_offset,
        }
    }

    /// The spec used to draw the auxiliary copies.
    pub fn aux_spec(&self) -> Result<Self> {
        let aux = Self { level: self.aux_level(), ..*self };
        check_level(aux.family, aux.level)?;
        Ok(aux)
    }
}

fn check_level(family: NoiseFamily, level: f64) -> Result<()> {
    let ok = match family {
        NoiseFamily::Gaussian => level >= 0.0 && level.is_finite(),
        NoiseFamily::Poisson => level > 0.0 && level.is_finite(),
        NoiseFamily::Impulse => (0.0..=1.0).contains(&level),
    };
    if ok {
        Ok(())
    } else {
        Err(Error::Domain(format!("{} level {level} out of range", family.as_str())))
    }
}

/// Draws one corrupted observation of `x`.
///
/// * gaussian: `y = x + N(0, σ²)` per entry.
/// * poisson: `y = Poisson(λ·max(x, 0)) / λ`, so `E[y | x] = x` for `x ≥ 0`.
///   Negative intensities get rate zero.
/// * impulse: each entry independently, with probability `p`, receives an
///   additive spike of `±1` with equal sign probability.
pub fn corrupt(x: &ImageTensor, spec: &NoiseSpec, seed: u64) -> Result<ImageTensor> {
    spec.validate()?;
    let mut rng = rng(seed);
    let level = spec.level;
    let out = match spec.family {
        NoiseFamily::Gaussian => {
            if level == 0.0 {
                return Ok(x.clone());
            }
            x.map(|v| {
                let z: f64 = StandardNormal.sample(&mut rng);
                v + level * z
            })
        }
        NoiseFamily::Poisson => {
            let mut data = Vec::with_capacity(x.len());
            for &v in x.as_slice() {
                let rate = level * v.max(0.0);
                let count = if rate > 0.0 {
                    Poisson::new(rate)
                        .map_err(|e| Error::Domain(format!("poisson rate {rate}: {e}")))?
                        .sample(&mut rng)
                } else {
                    0.0
                };
                data.push(count / level);
            }
            ImageTensor::new(x.shape(), data)?.with_peak(x.peak())?
        }
        NoiseFamily::Impulse => {
            if level == 0.0 {
                return Ok(x.clone());
            }
            x.map(|v| {
                let hit = rng.random::<f64>() < level;
                let positive = rng.random::<bool>();
                match (hit, positive) {
                    (false, _) => v,
                    (true, true) => v + IMPULSE_AMPLITUDE,
                    (true, false) => v - IMPULSE_AMPLITUDE,
                }
            })
        }
    };
    Ok(out)
}

/// Draws the two auxiliary copies `y⁽ⁱ⁾ = Corrupt(y; ζᵢ)` at the auxiliary
/// level. The seeds must differ so the perturbations are independent.
pub fn make_aux_pair(
    y: &ImageTensor,
    spec: &NoiseSpec,
    seeds: (u64, u64),
) -> Result<(ImageTensor, ImageTensor)> {
    if seeds.0 == seeds.1 {
        return Err(Error::SeedCollision(seeds.0));
    }
    let aux = spec.aux_spec()?;
    Ok((corrupt(y, &aux, seeds.0)?, corrupt(y, &aux, seeds.1)?))
}

/// Binary retention plane `M` (1 = used for fitting); the held-out plane
/// is its complement `H = 1 − M`. The same plane applies to every channel.
///
/// Equality compares the plane only; the retention probability is
/// informational and is not stored in bundles.
#[derive(Debug, Clone)]
pub struct HoldoutMask {
    height: usize,
    width: usize,
    keep: Vec<u8>,
    retention_bits: u64,
}

impl HoldoutMask {
    /// Wraps an explicit plane of 0/1 values. Degenerate planes (nothing
    /// held out, or nothing kept) are accepted here; [`sample_mask`] never
    /// produces the former.
    pub fn from_plane(height: usize, width: usize, keep: Vec<u8>, retention: f64) -> Result<Self> {
        if height == 0 || width == 0 || keep.len() != height * width {
            return Err(Error::Shape(format!(
                "mask plane has {} values for {height}x{width}",
                keep.len()
            )));
        }
        if keep.iter().any(|&b| b > 1) {
            return Err(Error::Domain("mask values must be 0 or 1".into()));
        }
        Ok(Self { height, width, keep, retention_bits: retention.to_bits() })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// The retention probability the mask was drawn with.
    pub fn retention(&self) -> f64 {
        f64::from_bits(self.retention_bits)
    }

    /// Row-major retention plane, 1 = kept.
    pub fn keep(&self) -> &[u8] {
        &self.keep
    }

    pub fn is_kept(&self, index: usize) -> bool {
        self.keep[index] == 1
    }

    pub fn is_held_out(&self, index: usize) -> bool {
        self.keep[index] == 0
    }

    pub fn held_out_count(&self) -> usize {
        self.keep.iter().filter(|&&b| b == 0).count()
    }

    pub fn kept_count(&self) -> usize {
        self.keep.len() - self.held_out_count()
    }

    /// `M` as reals.
    pub fn keep_plane(&self) -> Vec<f64> {
        self.keep.iter().map(|&b| b as f64).collect()
    }

    /// `H = 1 − M` as reals.
    pub fn held_out_plane(&self) -> Vec<f64> {
        self.keep.iter().map(|&b| 1.0 - b as f64).collect()
    }

    /// Row-major indices of held-out pixels.
    pub fn held_out_indices(&self) -> Vec<usize> {
        (0..self.keep.len()).filter(|&i| self.keep[i] == 0).collect()
    }
}

impl PartialEq for HoldoutMask {
    fn eq(&self, other: &Self) -> bool {
        self.height == other.height && self.width == other.width && self.keep == other.keep
    }
}

impl Eq for HoldoutMask {}

/// Samples an i.i.d. Bernoulli(`p_keep`) retention plane.
///
/// If the draw holds out no pixel, one pixel (chosen from the same stream)
/// is flipped to held-out so that held-out averages are always defined.
pub fn sample_mask(height: usize, width: usize, p_keep: f64, seed: u64) -> Result<HoldoutMask> {
    if !(p_keep > 0.0 && p_keep < 1.0) {
        return Err(Error::Domain(format!("retention probability must lie in (0, 1), got {p_keep}")));
    }
    if height == 0 || width == 0 {
        return Err(Error::Shape("mask dimensions must be positive".into()));
    }
    let mut rng = rng(seed);
    let mut keep: Vec<u8> = (0..height * width).map(|_| u8::from(rng.random::<f64>() < p_keep)).collect();
    if keep.iter().all(|&b| b == 1) {
        let idx = rng.random_range(0..keep.len());
        keep[idx] = 0;
    }
    HoldoutMask::from_plane(height, width, keep, p_keep)
}

/// Observation model `y = x + s + η`, pseudo-reference `ỹ = x + s + η̃`.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedNoiseScene {
    pub clean: ImageTensor,
    pub shared: ImageTensor,
    pub nonshared: ImageTensor,
    pub nonshared_tilde: ImageTensor,
    /// `S = ‖s‖²/n`.
    pub shared_energy: f64,
    /// Per-entry standard deviation of `η` and `η̃`.
    pub nonshared_sigma: f64,
}

impl SharedNoiseScene {
    pub fn observation(&self) -> ImageTensor {
        self.clean.add(&self.shared).and_then(|v| v.add(&self.nonshared)).expect("scene fields share a shape")
    }

    pub fn pseudo_reference(&self) -> ImageTensor {
        self.clean
            .add(&self.shared)
            .and_then(|v| v.add(&self.nonshared_tilde))
            .expect("scene fields share a shape")
    }

    /// The effective target `x + s`.
    pub fn effective_target(&self) -> ImageTensor {
        self.clean.add(&self.shared).expect("scene fields share a shape")
    }

    /// A fresh pseudo-reference with `η̃` redrawn from `seed`.
    pub fn redraw_reference(&self, seed: u64) -> Result<ImageTensor> {
        let fresh = gaussian_field(self.clean.shape(), self.nonshared_sigma, seed)?;
        self.effective_target().add(&fresh)
    }
}

/// Draws `s`, `η`, `η̃` as independent Gaussian fields. `s` is rescaled so
/// that `‖s‖²/n` equals `shared_energy` exactly (up to rounding).
pub fn build_shared_scene(
    x: &ImageTensor,
    shared_energy: f64,
    nonshared_sigma: f64,
    seed: u64,
) -> Result<SharedNoiseScene> {
    if !(shared_energy >= 0.0) || !(nonshared_sigma >= 0.0) {
        return Err(Error::Domain("shared energy and non-shared sigma must be non-negative".into()));
    }
    let shape = x.shape();
    let shared = if shared_energy == 0.0 {
        ImageTensor::zeros(shape)?
    } else {
        let raw = gaussian_field(shape, 1.0, derive_seed(seed, 0))?;
        let energy = raw.sum_squares() / raw.len() as f64;
        raw.scale((shared_energy / energy).sqrt())
    };
    let recorded = shared.sum_squares() / shared.len() as f64;
    Ok(SharedNoiseScene {
        clean: x.clone(),
        shared,
        nonshared: gaussian_field(shape, nonshared_sigma, derive_seed(seed, 1))?,
        nonshared_tilde: gaussian_field(shape, nonshared_sigma, derive_seed(seed, 2))?,
        shared_energy: recorded,
        nonshared_sigma,
    })
}
