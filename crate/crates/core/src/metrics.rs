//! Fidelity metrics.

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

/// Mean of squared differences of two equal-length slices, summed left to
/// right. Every curve in the crate goes through this function so that
/// algebraically identical routes (e.g. the identity operator curve and the
/// channel-reference curve) agree bit for bit.
pub fn mean_sq_diff(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc / a.len() as f64
}

/// `(1/n)‖a − b‖²` over all `C·H·W` entries.
pub fn mse(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    a.ensure_same_shape(b)?;
    Ok(mean_sq_diff(a.as_slice(), b.as_slice()))
}

/// `10·log10(peak² / mse)`.
///
/// A zero MSE returns `f64::INFINITY`: oracle scans compare frames against
/// a clean image that may coincide with one of them.
pub fn psnr(mse: f64, peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(Error::Domain(format!("peak must be positive, got {peak}")));
    }
    if mse < 0.0 || mse.is_nan() {
        return Err(Error::Domain(format!("mse must be non-negative, got {mse}")));
    }
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// PSNR of `estimate` against `clean`, using the clean image's peak.
pub fn psnr_between(estimate: &ImageTensor, clean: &ImageTensor) -> Result<f64> {
    psnr(mse(estimate, clean)?, clean.peak())
}
