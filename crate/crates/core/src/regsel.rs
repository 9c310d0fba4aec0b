//! Regularization-strength selection for quadratic (Tikhonov) denoising.
//!
//! `x̂_λ = argmin ½‖x − y‖² + (λ/2)‖∇x‖²` with forward differences under
//! periodic boundary has the exact spectral solution
//! `x̂_λ(ω) = ŷ(ω) / (1 + λ·ℓ(ω))`, `ℓ(u, v) = 4sin²(πu/H) + 4sin²(πv/W)`.
//! The strength is chosen by denoising one channel and scoring it against
//! a structurally similar neighbouring channel.

use std::f64::consts::PI;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fourier::Fft2;
use crate::metrics::mean_sq_diff;
use crate::stoppers::{closest_channel_pair, ChannelPair};
use crate::tensor::ImageTensor;

pub const DEFAULT_LAMBDA_MIN: f64 = 1e-3;
pub const DEFAULT_LAMBDA_MAX: f64 = 1e2;
pub const DEFAULT_LAMBDA_COUNT: usize = 40;

/// Strictly increasing regularization strengths; all positive except an
/// optional leading zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaGrid {
    values: Vec<f64>,
}

impl LambdaGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Config("lambda grid is empty".into()));
        }
        if values.iter().enumerate().any(|(k, &v)| !v.is_finite() || v < 0.0 || (v == 0.0 && k > 0)) {
            return Err(Error::Domain("lambda values must be finite and positive (a leading 0 is allowed)".into()));
        }
        if values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("lambda grid must be strictly increasing".into()));
        }
        Ok(Self { values })
    }

    /// `count` values evenly spaced in `log₁₀` over `[min, max]`.
    pub fn log_spaced(min: f64, max: f64, count: usize) -> Result<Self> {
        if !(min > 0.0) || !(max >= min) || !max.is_finite() || count == 0 {
            return Err(Error::Config(format!("invalid log grid {min}:{max}:{count}")));
        }
        if count == 1 {
            return Self::new(vec![min]);
        }
        let (lo, hi) = (min.log10(), max.log10());
        let mut values: Vec<f64> =
            (0..count).map(|k| 10f64.powf(lo + (hi - lo) * k as f64 / (count - 1) as f64)).collect();
        values[0] = min;
        values[count - 1] = max;
        Self::new(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn index_of(&self, lambda: f64) -> Option<usize> {
        self.values.iter().position(|&v| v == lambda)
    }
}

impl Default for LambdaGrid {
    fn default() -> Self {
        Self::log_spaced(DEFAULT_LAMBDA_MIN, DEFAULT_LAMBDA_MAX, DEFAULT_LAMBDA_COUNT)
            .expect("default grid is valid")
    }
}

/// Parses `min:max:count` into a log-spaced grid.
impl FromStr for LambdaGrid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::Config(format!("grid spec '{s}' is not min:max:count"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let min = parts[0].trim().parse::<f64>().map_err(|_| bad())?;
        let max = parts[1].trim().parse::<f64>().map_err(|_| bad())?;
        let count = parts[2].trim().parse::<usize>().map_err(|_| bad())?;
        Self::log_spaced(min, max, count)
    }
}

/// Spectral Tikhonov solver for one plane size; reusable across `λ`.
#[derive(Debug, Clone)]
pub struct TikhonovSolver {
    fft: Fft2,
    laplacian: Vec<f64>,
}

impl TikhonovSolver {
    pub fn new(height: usize, width: usize) -> Self {
        let mut laplacian = Vec::with_capacity(height * width);
        for u in 0..height {
            let a = (PI * u as f64 / height as f64).sin();
            for v in 0..width {
                let b = (PI * v as f64 / width as f64).sin();
                laplacian.push(4.0 * a * a + 4.0 * b * b);
            }
        }
        Self { fft: Fft2::new(height, width), laplacian }
    }

    /// Eigenvalues of `∇ᵀ∇`, row-major over DFT bins.
    pub fn laplacian(&self) -> &[f64] {
        &self.laplacian
    }

    pub fn solve(&self, plane: &[f64], lambda: f64) -> Result<Vec<f64>> {
        if !(lambda >= 0.0) {
            return Err(Error::Domain(format!("lambda must be non-negative, got {lambda}")));
        }
        if lambda == 0.0 {
            if plane.len() != self.laplacian.len() {
                return Err(Error::Shape(format!("plane has {} values, solver expects {}", plane.len(), self.laplacian.len())));
            }
            return Ok(plane.to_vec());
        }
        let mut spectrum = self.fft.forward_real(plane)?;
        for (s, l) in spectrum.iter_mut().zip(&self.laplacian) {
            *s /= 1.0 + lambda * l;
        }
        self.fft.inverse_real(&spectrum)
    }
}

pub fn tikhonov_denoise(plane: &[f64], height: usize, width: usize, lambda: f64) -> Result<Vec<f64>> {
    TikhonovSolver::new(height, width).solve(plane, lambda)
}

/// `(1/n)‖x̂_λ(source) − target‖²` for every `λ` in the grid.
pub fn score_path(
    source: &[f64],
    target: &[f64],
    height: usize,
    width: usize,
    grid: &LambdaGrid,
) -> Result<Vec<f64>> {
    if target.len() != source.len() {
        return Err(Error::Shape(format!("target has {} values, source {}", target.len(), source.len())));
    }
    let solver = TikhonovSolver::new(height, width);
    grid.values().par_iter().map(|&l| Ok(mean_sq_diff(&solver.solve(source, l)?, target))).collect()
}

/// First index of the minimum (ties go to the smaller `λ`).
fn argmin(values: &[f64]) -> usize {
    (0..values.len()).fold(0, |b, k| if values[k] < values[b] { k } else { b })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaSelection {
    pub pair: ChannelPair,
    pub lambda: f64,
    pub index: usize,
    /// Pseudo-reference score per grid value.
    pub curve: Vec<f64>,
}

/// Picks `λ̂ = argmin_λ ‖x̂_{λ,i} − y_j‖²` for the closest channel pair.
/// Both orientations of the pair are scored and the one whose curve
/// reaches the lower minimum is kept.
pub fn select_lambda(y: &ImageTensor, grid: &LambdaGrid) -> Result<LambdaSelection> {
    let (i, j, _) = closest_channel_pair(y)?;
    let (h, w) = (y.height(), y.width());
    let mut best: Option<(ChannelPair, Vec<f64>, usize)> = None;
    for pair in [ChannelPair { fit: i, reference: j }, ChannelPair { fit: j, reference: i }] {
        let curve = score_path(y.plane(pair.fit), y.plane(pair.reference), h, w, grid)?;
        let k = argmin(&curve);
        if best.as_ref().is_none_or(|b| curve[k] < b.1[b.2]) {
            best = Some((pair, curve, k));
        }
    }
    let (pair, curve, index) = best.expect("two orientations scored");
    Ok(LambdaSelection { pair, lambda: grid.values()[index], index, curve })
}

/// Clean-image score of the selected channel along the grid and its
/// minimizer: the oracle the pseudo-reference choice is compared against.
pub fn oracle_lambda(
    y: &ImageTensor,
    clean: &ImageTensor,
    channel: usize,
    grid: &LambdaGrid,
) -> Result<(usize, Vec<f64>)> {
    y.ensure_same_shape(clean)?;
    if channel >= y.channels() {
        return Err(Error::Channel(format!("channel {channel} out of range")));
    }
    let curve = score_path(y.plane(channel), clean.plane(channel), y.height(), y.width(), grid)?;
    Ok((argmin(&curve), curve))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_plane(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random::<f64>()).collect()
    }

    /// `½‖x − y‖² + (λ/2)‖∇x‖²` with periodic forward differences.
    fn objective(x: &[f64], y: &[f64], h: usize, w: usize, lambda: f64) -> f64 {
        let mut fit = 0.0;
        let mut grad = 0.0;
        for r in 0..h {
            for c in 0..w {
                let v = x[r * w + c];
                fit += (v - y[r * w + c]).powi(2);
                grad += (x[((r + 1) % h) * w + c] - v).powi(2) + (x[r * w + (c + 1) % w] - v).powi(2);
            }
        }
        0.5 * fit + 0.5 * lambda * grad
    }

    /// Plain gradient descent on the objective.
    fn gradient_descent(y: &[f64], h: usize, w: usize, lambda: f64) -> Vec<f64> {
        let mut x = y.to_vec();
        // Lipschitz constant 1 + 8λ.
        let step = 1.0 / (1.0 + 8.0 * lambda);
        for _ in 0..20_000 {
            let mut g = vec![0.0; h * w];
            for r in 0..h {
                for c in 0..w {
                    let i = r * w + c;
                    let lap = 4.0 * x[i]
                        - x[((r + 1) % h) * w + c]
                        - x[((r + h - 1) % h) * w + c]
                        - x[r * w + (c + 1) % w]
                        - x[r * w + (c + w - 1) % w];
                    g[i] = x[i] - y[i] + lambda * lap;
                }
            }
            for (xi, gi) in x.iter_mut().zip(&g) {
                *xi -= step * gi;
            }
        }
        x
    }

    #[test]
    fn zero_lambda_is_identity() {
        let y = random_plane(30, 1);
        assert_eq!(tikhonov_denoise(&y, 5, 6, 0.0).unwrap(), y);
    }

    #[test]
    fn huge_lambda_gives_mean_image() {
        let y = random_plane(64, 2);
        let mean = y.iter().sum::<f64>() / 64.0;
        let x = tikhonov_denoise(&y, 8, 8, 1e6).unwrap();
        assert!(x.iter().all(|v| (v - mean).abs() < 1e-3));
    }

    #[test]
    fn negative_lambda_rejected() {
        assert!(matches!(tikhonov_denoise(&[0.0; 4], 2, 2, -1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn closed_form_matches_gradient_descent() {
        let (h, w) = (6, 7);
        let y = random_plane(h * w, 3);
        let closed = tikhonov_denoise(&y, h, w, 0.5).unwrap();
        let iterative = gradient_descent(&y, h, w, 0.5);
        let err = closed.iter().zip(&iterative).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6, "max deviation {err}");
    }

    #[test]
    fn grid_construction_and_parsing() {
        let g = LambdaGrid::default();
        assert_eq!(g.len(), 40);
        assert_eq!((g.values()[0], g.values()[39]), (1e-3, 1e2));
        let parsed: LambdaGrid = "1e-3:1e2:40".parse().unwrap();
        assert_eq!(parsed, g);
        let ratios: Vec<f64> = g.values().windows(2).map(|w| (w[1] / w[0]).log10()).collect();
        assert!(ratios.iter().all(|r| (r - 5.0 / 39.0).abs() < 1e-12));
        assert!(LambdaGrid::new(vec![0.0, 1.0]).is_ok());
        assert!(LambdaGrid::new(vec![1.0, 0.0]).is_err());
        assert!(LambdaGrid::new(vec![1.0, 1.0]).is_err());
        assert!(LambdaGrid::new(vec![]).is_err());
        assert!("1:2".parse::<LambdaGrid>().is_err());
    }

    #[test]
    fn noiseless_identical_channels_select_smallest_lambda() {
        let plane = random_plane(64, 4);
        let y = ImageTensor::from_planes(8, 8, vec![plane.clone(), plane.clone(), plane]).unwrap();
        let grid = LambdaGrid::default();
        let sel = select_lambda(&y, &grid).unwrap();
        assert_eq!(sel.index, 0);
        assert_eq!(sel.lambda, grid.values()[0]);
    }

    #[test]
    fn select_lambda_needs_two_channels() {
        let y = ImageTensor::zeros(Shape::new(1, 4, 4)).unwrap();
        assert!(matches!(select_lambda(&y, &LambdaGrid::default()), Err(Error::Channel(_))));
    }

    #[test]
    fn curve_matches_per_lambda_loop() {
        let (h, w) = (8, 6);
        let y = ImageTensor::from_planes(h, w, (0..3).map(|c| random_plane(h * w, 10 + c)).collect()).unwrap();
        let grid = LambdaGrid::log_spaced(1e-2, 10.0, 7).unwrap();
        let sel = select_lambda(&y, &grid).unwrap();
        for (k, &l) in grid.values().iter().enumerate() {
            let x = tikhonov_denoise(y.plane(sel.pair.fit), h, w, l).unwrap();
            let mut acc = 0.0;
            for i in 0..h * w {
                acc += (x[i] - y.plane(sel.pair.reference)[i]).powi(2);
            }
            assert!((sel.curve[k] - acc / (h * w) as f64).abs() < 1e-14);
        }
        let shifted: Vec<f64> = sel.curve.iter().map(|v| v + 0.0625).collect();
        assert_eq!(argmin(&shifted), sel.index);
    }

    proptest! {
        #[test]
        fn shrinks_toward_mean_as_lambda_grows(seed in any::<u64>()) {
            let (h, w) = (5, 6);
            let y = random_plane(h * w, seed);
            let mean = y.iter().sum::<f64>() / (h * w) as f64;
            let solver = TikhonovSolver::new(h, w);
            let mut last = f64::INFINITY;
            for &l in LambdaGrid::log_spaced(1e-3, 1e3, 12).unwrap().values() {
                let x = solver.solve(&y, l).unwrap();
                let dist: f64 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>().sqrt();
                prop_assert!(dist <= last + 1e-12);
                last = dist;
            }
        }

        #[test]
        fn solution_is_locally_optimal(seed in any::<u64>(), lambda in 0.01f64..20.0, eps in 1e-4f64..1e-1) {
            let (h, w) = (5, 4);
            let y = random_plane(h * w, seed);
            let x = tikhonov_denoise(&y, h, w, lambda).unwrap();
            let delta = random_plane(h * w, seed.wrapping_add(7));
            let base = objective(&x, &y, h, w, lambda);
            for sign in [-1.0, 1.0] {
                let moved: Vec<f64> = x.iter().zip(&delta).map(|(a, d)| a + sign * eps * (d - 0.5)).collect();
                prop_assert!(base <= objective(&moved, &y, h, w, lambda) + 1e-12);
            }
        }
    }
}
