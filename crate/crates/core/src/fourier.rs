//! 2D discrete Fourier transform and frequency-weighted spectral scores.
//!
//! Convention: the forward transform is unnormalized,
//! `X(u,v) = Σ_{r,c} x(r,c)·exp(−2πi(ur/H + vc/W))`, and the inverse carries
//! the `1/(H·W)` factor, so `inverse(forward(x)) == x`. Under this
//! convention Parseval reads `Σ|x|² = (1/(H·W))·Σ|X|²`.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

/// Reusable row/column FFT plans for one plane size.
#[derive(Clone)]
pub struct Fft2 {
    height: usize,
    width: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2").field("height", &self.height).field("width", &self.width).finish()
    }
}

impl Fft2 {
    pub fn new(height: usize, width: usize) -> Self {
        assert!(height > 0 && width > 0, "plane dimensions must be positive");
        let mut planner = FftPlanner::new();
        Self {
            height,
            width,
            row_fwd: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.height * self.width {
            return Err(Error::Shape(format!(
                "plane has {len} values, transform expects {}x{}",
                self.height, self.width
            )));
        }
        Ok(())
    }

    fn transform(&self, data: &mut [Complex64], rows: &dyn Fft<f64>, cols: &dyn Fft<f64>) {
        let (h, w) = (self.height, self.width);
        rows.process(data);
        let mut transposed = vec![Complex64::new(0.0, 0.0); h * w];
        for r in 0..h {
            for c in 0..w {
                transposed[c * h + r] = data[r * w + c];
            }
        }
        cols.process(&mut transposed);
        for c in 0..w {
            for r in 0..h {
                data[r * w + c] = transposed[c * h + r];
            }
        }
    }

    /// Unnormalized forward transform, in place.
    pub fn forward_in_place(&self, data: &mut [Complex64]) -> Result<()> {
        self.check_len(data.len())?;
        self.transform(data, self.row_fwd.as_ref(), self.col_fwd.as_ref());
        Ok(())
    }

    /// Inverse transform including the `1/(H·W)` factor, in place.
    pub fn inverse_in_place(&self, data: &mut [Complex64]) -> Result<()> {
        self.check_len(data.len())?;
        self.transform(data, self.row_inv.as_ref(), self.col_inv.as_ref());
        let scale = 1.0 / (self.height * self.width) as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
        Ok(())
    }

    pub fn forward_real(&self, plane: &[f64]) -> Result<Vec<Complex64>> {
        let mut data: Vec<Complex64> = plane.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward_in_place(&mut data)?;
        Ok(data)
    }

    /// Inverse transform keeping only the real part.
    pub fn inverse_real(&self, spectrum: &[Complex64]) -> Result<Vec<f64>> {
        let mut data = spectrum.to_vec();
        self.inverse_in_place(&mut data)?;
        Ok(data.into_iter().map(|z| z.re).collect())
    }
}

/// Forward 2D DFT of a real `height × width` plane.
pub fn dft2(plane: &[f64], height: usize, width: usize) -> Result<Vec<Complex64>> {
    Fft2::new(height, width).forward_real(plane)
}

/// Inverse 2D DFT (with the `1/(H·W)` factor).
pub fn idft2(spectrum: &[Complex64], height: usize, width: usize) -> Result<Vec<Complex64>> {
    let mut data = spectrum.to_vec();
    Fft2::new(height, width).inverse_in_place(&mut data)?;
    Ok(data)
}

/// Maps an FFT bin index to its signed integer frequency in `[−n/2, n/2)`.
pub fn signed_frequency(k: usize, n: usize) -> f64 {
    if 2 * k >= n {
        k as f64 - n as f64
    } else {
        k as f64
    }
}

/// Squared radial frequency `‖ω‖² = u² + v²` for every bin of an H×W grid,
/// with `u, v` the centered signed frequencies. The DC bin has weight 0.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyGrid {
    height: usize,
    width: usize,
    weights: Vec<f64>,
}

impl FrequencyGrid {
    pub fn new(height: usize, width: usize) -> Self {
        let mut weights = Vec::with_capacity(height * width);
        for u in 0..height {
            let fu = signed_frequency(u, height);
            for v in 0..width {
                let fv = signed_frequency(v, width);
                weights.push(fu * fu + fv * fv);
            }
        }
        Self { height, width, weights }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn weight(&self, u: usize, v: usize) -> f64 {
        self.weights[u * self.width + v]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn max_weight(&self) -> f64 {
        self.weights.iter().copied().fold(0.0, f64::max)
    }
}

/// Computes the power-weighted mean of `‖ω‖²` for residual images of one
/// plane size, reusing FFT plans across calls.
#[derive(Debug, Clone)]
pub struct SpectralScorer {
    fft: Fft2,
    grid: FrequencyGrid,
}

impl SpectralScorer {
    pub fn new(height: usize, width: usize) -> Self {
        Self { fft: Fft2::new(height, width), grid: FrequencyGrid::new(height, width) }
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    /// `Σ_ω ‖ω‖²|R(ω)|² / Σ_ω |R(ω)|²`, numerator and denominator summed
    /// over channels before dividing.
    pub fn score(&self, residual: &ImageTensor) -> Result<f64> {
        if residual.height() != self.grid.height || residual.width() != self.grid.width {
            return Err(Error::Shape(format!(
                "residual is {}, scorer expects {}x{} planes",
                residual.shape(),
                self.grid.height,
                self.grid.width
            )));
        }
        let mut weighted = 0.0;
        let mut total = 0.0;
        for plane in residual.planes() {
            let spectrum = self.fft.forward_real(plane)?;
            for (z, w) in spectrum.iter().zip(&self.grid.weights) {
                let p = z.norm_sqr();
                weighted += w * p;
                total += p;
            }
        }
        if total == 0.0 {
            return Err(Error::ZeroResidual);
        }
        Ok(weighted / total)
    }
}

/// One-shot form of [`SpectralScorer::score`].
pub fn spectral_mean_frequency(residual: &ImageTensor) -> Result<f64> {
    SpectralScorer::new(residual.height(), residual.width()).score(residual)
}
