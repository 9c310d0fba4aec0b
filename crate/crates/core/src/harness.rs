//! Empirical checks of the pseudo-validation guarantees.
//!
//! Each check runs a seeded Monte Carlo experiment on surrogate
//! trajectories, measures the quantity a guarantee bounds, and reports
//! pass/fail together with the measured constants. Rates are checked, not
//! constants: a deviation that should shrink like `1/√n` must shrink by a
//! factor within `[√r/2, 2√r]` when `n` grows by `r`. Monte Carlo means are
//! compared with a `3·SE` radius.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corruption::{corrupt, derive_seed, sample_mask, NoiseSpec, SharedNoiseScene};
use crate::error::{Error, Result};
use crate::metrics::mean_sq_diff;
use crate::operators::{operator_curve, transfer_bound_check, LinearOperator};
use crate::pipeline::mean_std;
use crate::stoppers::{csr_curve, mr_curve, sure_curve};
use crate::surrogate::{run_masked, run_plain, SpectralSurrogate, SurrogateConfig};
use crate::synthetic::smooth_scene;
use crate::tensor::{ImageTensor, Provenance, Shape, Trajectory};

/// Monte Carlo confidence radius in standard errors.
pub const SE_RADIUS: f64 = 3.0;

/// Names accepted by [`run_check`], in suite order.
pub const CHECKS: [&str; 6] =
    ["single-reference", "alpha-star", "effective-target", "mask", "operator", "sure"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub report: serde_json::Value,
}

impl CheckOutcome {
    fn new<T: Serialize>(name: &str, passed: bool, report: &T) -> Result<Self> {
        Ok(Self { name: name.to_string(), passed, report: serde_json::to_value(report)? })
    }
}

/// Acceptable shrink factor of a `1/√n` deviation when `n` grows by `r`.
pub fn sqrt_window(r: f64) -> (f64, f64) {
    (r.sqrt() / 2.0, 2.0 * r.sqrt())
}

fn per_trial_seed(seed: u64, group: u64, trial: u64) -> u64 {
    derive_seed(derive_seed(seed, group), trial)
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleReferenceParams {
    /// Image sizes `(H, W)`, ascending in `H·W`; one channel each.
    pub sizes: Vec<(usize, usize)>,
    pub sigma: f64,
    pub trials: usize,
    pub surrogate: SurrogateConfig,
}

impl Default for SingleReferenceParams {
    fn default() -> Self {
        Self {
            sizes: vec![(25, 40), (250, 400)],
            sigma: 0.26,
            trials: 50,
            surrogate: SurrogateConfig { stride: 300, ..SurrogateConfig::default() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleReferenceReport {
    pub pixels: Vec<usize>,
    /// `D(n)`: trial mean of `max_t |V_t − R(t) − σ²|`.
    pub deviations: Vec<f64>,
    /// `D(n_k) / D(n_{k+1})`.
    pub ratios: Vec<f64>,
    pub windows: Vec<(f64, f64)>,
    pub decreasing: bool,
    pub passed: bool,
}

/// Fits `y = x + η` with the surrogate and validates against an independent
/// copy `ỹ = x + η̃`; measures how far `V_t` strays from `R(t) + σ²`.
pub fn check_single_reference(p: &SingleReferenceParams, seed: u64) -> Result<SingleReferenceReport> {
    if p.trials == 0 || p.sizes.is_empty() {
        return Err(Error::Config("need at least one size and one trial".into()));
    }
    let spec = NoiseSpec::gaussian(p.sigma)?;
    let checkpoints = p.surrogate.checkpoints();
    let var = p.sigma * p.sigma;
    let mut deviations = Vec::new();
    for (g, &(h, w)) in p.sizes.iter().enumerate() {
        let per_trial: Result<Vec<f64>> = (0..p.trials as u64)
            .into_par_iter()
            .map(|trial| {
                let s = per_trial_seed(seed, g as u64, trial);
                let x = smooth_scene(Shape::new(1, h, w), derive_seed(s, 0))?;
                let y = corrupt(&x, &spec, derive_seed(s, 1))?;
                let reference = corrupt(&x, &spec, derive_seed(s, 2))?;
                let surrogate = SpectralSurrogate::new(&y, &p.surrogate)?;
                Ok(checkpoints
                    .iter()
                    .map(|&t| {
                        let frame = surrogate.frame_at(t);
                        let v = mean_sq_diff(frame.as_slice(), reference.as_slice());
                        let r = mean_sq_diff(frame.as_slice(), x.as_slice());
                        (v - r - var).abs()
                    })
                    .fold(0.0, f64::max))
            })
            .collect();
        deviations.push(mean_std(&per_trial?).0);
    }
    let pixels: Vec<usize> = p.sizes.iter().map(|(h, w)| h * w).collect();
    let ratios: Vec<f64> = deviations.windows(2).map(|d| d[0] / d[1]).collect();
    let windows: Vec<(f64, f64)> = pixels.windows(2).map(|n| sqrt_window(n[1] as f64 / n[0] as f64)).collect();
    let decreasing = deviations.windows(2).all(|d| d[1] < d[0]);
    let passed = if p.sigma == 0.0 {
        deviations.iter().all(|&d| d == 0.0)
    } else {
        decreasing && ratios.iter().zip(&windows).all(|(r, (lo, hi))| (lo..=hi).contains(&r))
    };
    Ok(SingleReferenceReport { pixels, deviations, ratios, windows, decreasing, passed })
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaStarParams {
    pub pairs: usize,
    pub grid_points: usize,
    pub multiplicities: Vec<u32>,
    /// Relative tolerance on the improvement ratio.
    pub ratio_tolerance: f64,
}

impl Default for AlphaStarParams {
    fn default() -> Self {
        Self { pairs: 10, grid_points: 10_001, multiplicities: vec![1, 4, 16], ratio_tolerance: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaStarCase {
    pub shared_energy: f64,
    pub sigma_eta: f64,
    pub formula: f64,
    pub grid_argmin: f64,
    pub within_step: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImprovementCase {
    pub m: u32,
    /// Worst-case excess `σ_η²/m` over the model excess at the grid minimizer.
    pub ratio: f64,
    pub expected: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaStarReport {
    pub grid_step: f64,
    pub cases: Vec<AlphaStarCase>,
    pub improvement: Vec<ImprovementCase>,
    pub passed: bool,
}

/// Pseudo-validation objective of the stylized model
/// `x̂ = x + α(s + η)`: `(1 − α)²S + (α² + 1)σ_η²`.
pub fn stylized_objective(alpha: f64, shared_energy: f64, sigma_eta: f64) -> f64 {
    let v = sigma_eta * sigma_eta;
    (1.0 - alpha).powi(2) * shared_energy + (alpha * alpha + 1.0) * v
}

/// `S / (S + σ_η²)`.
pub fn alpha_star(shared_energy: f64, sigma_eta: f64) -> f64 {
    let v = sigma_eta * sigma_eta;
    if shared_energy + v == 0.0 {
        0.0
    } else {
        shared_energy / (shared_energy + v)
    }
}

fn grid_argmin(grid: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    grid.iter().copied().fold((grid[0], f(grid[0])), |best, a| {
        let v = f(a);
        if v < best.1 {
            (a, v)
        } else {
            best
        }
    })
    .0
}

/// Brute-force minimization of the stylized objective on a uniform grid
/// over `[0, 1]`, compared with the closed-form minimizer; and the
/// clean-image excess at the minimizer for `S = σ_η²/m`, whose ratio to
/// the worst case should be `m + 1`.
pub fn check_alpha_star(p: &AlphaStarParams, seed: u64) -> Result<AlphaStarReport> {
    use rand::Rng;
    if p.grid_points < 2 {
        return Err(Error::Config("grid needs at least two points".into()));
    }
    let step = 1.0 / (p.grid_points - 1) as f64;
    let grid: Vec<f64> = (0..p.grid_points).map(|k| k as f64 * step).collect();
    let mut rng = crate::corruption::rng(seed);
    let cases: Vec<AlphaStarCase> = (0..p.pairs)
        .map(|_| {
            let shared_energy: f64 = rng.random_range(0.0..1.0);
            let sigma_eta: f64 = rng.random_range(0.05..1.0);
            let formula = alpha_star(shared_energy, sigma_eta);
            let grid_argmin = grid_argmin(&grid, |a| stylized_objective(a, shared_energy, sigma_eta));
            AlphaStarCase {
                shared_energy,
                sigma_eta,
                formula,
                grid_argmin,
                within_step: (grid_argmin - formula).abs() <= step * (1.0 + 1e-9),
            }
        })
        .collect();
    let sigma_eta: f64 = 0.26;
    let v = sigma_eta * sigma_eta;
    let improvement: Vec<ImprovementCase> = p
        .multiplicities
        .iter()
        .map(|&m| {
            let shared_energy = v / m as f64;
            let alpha = grid_argmin(&grid, |a| stylized_objective(a, shared_energy, sigma_eta));
            // Clean-image error of x + α(s + η) is α²(S + σ_η²).
            let excess = alpha * alpha * (shared_energy + v);
            let ratio = shared_energy / excess;
            let expected = m as f64 + 1.0;
            ImprovementCase { m, ratio, expected, relative_error: (ratio / expected - 1.0).abs() }
        })
        .collect();
    let passed = cases.iter().all(|c| c.within_step)
        && improvement.iter().all(|c| c.relative_error <= p.ratio_tolerance);
    Ok(AlphaStarReport { grid_step: step, cases, improvement, passed })
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveTargetPoint {
    pub iteration: u64,
    pub mean: f64,
    pub expected: f64,
    pub standard_error: f64,
    pub within: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveTargetReport {
    pub draws: usize,
    pub points: Vec<EffectiveTargetPoint>,
    pub passed: bool,
}

/// Redraws the non-shared part of the pseudo-reference and checks that the
/// mean validation score tracks `(1/n)‖x̂_t − (x + s)‖² + σ_η²`.
pub fn check_effective_target(
    scene: &SharedNoiseScene,
    traj: &Trajectory,
    draws: usize,
    seed: u64,
) -> Result<EffectiveTargetReport> {
    if draws < 2 {
        return Err(Error::Config("need at least two redraws".into()));
    }
    let target = scene.effective_target();
    if traj.primary_channels() != target.channels()
        || traj.shape().height != target.height()
        || traj.shape().width != target.width()
    {
        return Err(Error::Shape(format!("trajectory is {}, scene is {}", traj.shape(), target.shape())));
    }
    let n = target.len();
    let references: Vec<ImageTensor> =
        (0..draws as u64).into_par_iter().map(|d| scene.redraw_reference(derive_seed(seed, d))).collect::<Result<_>>()?;
    let var = scene.nonshared_sigma * scene.nonshared_sigma;
    let points = (0..traj.len())
        .map(|k| {
            let frame = &traj.frames()[k].as_slice()[..n];
            let scores: Vec<f64> = references.iter().map(|r| mean_sq_diff(frame, r.as_slice())).collect();
            let (mean, sd) = mean_std(&scores);
            let standard_error = sd / (draws as f64).sqrt();
            let expected = mean_sq_diff(frame, target.as_slice()) + var;
            // Rounding slack so the noiseless case compares equal.
            let slack = SE_RADIUS * standard_error + 1e-12 * expected.abs();
            EffectiveTargetPoint {
                iteration: traj.iterations()[k],
                mean,
                expected,
                standard_error,
                within: (mean - expected).abs() <= slack,
            }
        })
        .collect::<Vec<_>>();
    let passed = points.iter().all(|p| p.within);
    Ok(EffectiveTargetReport { draws, points, passed })
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskParams {
    pub sizes: Vec<(usize, usize)>,
    pub sigma: f64,
    pub trials: usize,
    pub keep_probability: f64,
    pub surrogate: SurrogateConfig,
    /// Size and number of held-out pixels probed for sensitivity.
    pub probe_size: (usize, usize),
    pub probes: usize,
}

impl Default for MaskParams {
    fn default() -> Self {
        Self {
            sizes: vec![(25, 40), (250, 400)],
            sigma: 0.26,
            trials: 50,
            keep_probability: 0.5,
            surrogate: SurrogateConfig { step: 0.1, iterations: 100, stride: 10, bandwidth: None },
            probe_size: (32, 32),
            probes: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskReport {
    /// Mean held-out count per size.
    pub held_out: Vec<f64>,
    /// Trial mean of `max_t |V_t − R_H(t) − σ²|`.
    pub deviations: Vec<f64>,
    pub ratios: Vec<f64>,
    pub windows: Vec<(f64, f64)>,
    /// The same deviation with σ = 0 on the smallest size (must be 0).
    pub noiseless_deviation: f64,
    /// Largest `κ = max_t |R_H(t) − R(t)|` seen.
    pub max_kappa: f64,
    /// Whether `R(t̂) ≤ min_t R(t) + 2κ + 2ε` held in every trial.
    pub transfer_holds: bool,
    /// Largest `|∂x̂_t(i)/∂y(i)|` over probed held-out pixels, all frames.
    pub held_out_sensitivity: f64,
    pub passed: bool,
}

struct MaskTrial {
    held_out: usize,
    deviation: f64,
    kappa: f64,
    transfer_holds: bool,
}

fn mask_trial(h: usize, w: usize, sigma: f64, p: &MaskParams, s: u64) -> Result<MaskTrial> {
    let x = smooth_scene(Shape::new(1, h, w), derive_seed(s, 0))?;
    let y = corrupt(&x, &NoiseSpec::gaussian(sigma)?, derive_seed(s, 1))?;
    let mask = sample_mask(h, w, p.keep_probability, derive_seed(s, 2))?;
    let traj = run_masked(&y, &mask, &p.surrogate)?;
    let v = mr_curve(&traj, &y, &mask)?;
    let risk_held = mr_curve(&traj, &x, &mask)?;
    let risk: Vec<f64> = traj.frames().iter().map(|f| mean_sq_diff(f.as_slice(), x.as_slice())).collect();
    let var = sigma * sigma;
    let deviation = v.values.iter().zip(&risk_held.values).map(|(a, b)| (a - b - var).abs()).fold(0.0, f64::max);
    let kappa = risk_held.values.iter().zip(&risk).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let chosen = v.selected_index();
    let best = risk.iter().copied().fold(f64::INFINITY, f64::min);
    let bound = best + 2.0 * kappa + 2.0 * deviation;
    Ok(MaskTrial {
        held_out: mask.held_out_count(),
        deviation,
        kappa,
        transfer_holds: risk[chosen] <= bound * (1.0 + 1e-12),
    })
}

/// Largest finite-difference response of any frame to a perturbation of
/// the observation at a held-out pixel.
pub fn held_out_sensitivity(size: (usize, usize), probes: usize, cfg: &SurrogateConfig, seed: u64) -> Result<f64> {
    let (h, w) = size;
    let x = smooth_scene(Shape::new(1, h, w), derive_seed(seed, 0))?;
    let y = corrupt(&x, &NoiseSpec::gaussian(0.26)?, derive_seed(seed, 1))?;
    let mask = sample_mask(h, w, 0.9, derive_seed(seed, 2))?;
    let base = run_masked(&y, &mask, cfg)?;
    let delta = 1e-3;
    let indices = mask.held_out_indices();
    let stride = (indices.len() / probes.max(1)).max(1);
    let mut worst: f64 = 0.0;
    for &i in indices.iter().step_by(stride).take(probes) {
        let mut bumped = y.clone();
        bumped.as_mut_slice()[i] += delta;
        let moved = run_masked(&bumped, &mask, cfg)?;
        for (a, b) in base.frames().iter().zip(moved.frames()) {
            let d = a.as_slice().iter().zip(b.as_slice()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            worst = worst.max(d / delta);
        }
    }
    Ok(worst)
}

/// Masked-training validation: the held-out score tracks the held-out risk
/// plus `σ²` at a `1/√m` rate, is exact without noise, transfers to the
/// full-image risk within `2κ + 2ε`, and never sees held-out noise.
pub fn check_mask_theorem(p: &MaskParams, seed: u64) -> Result<MaskReport> {
    if p.trials == 0 || p.sizes.is_empty() {
        return Err(Error::Config("need at least one size and one trial".into()));
    }
    let mut held_out = Vec::new();
    let mut deviations = Vec::new();
    let mut max_kappa: f64 = 0.0;
    let mut transfer_holds = true;
    for (g, &(h, w)) in p.sizes.iter().enumerate() {
        let trials: Vec<MaskTrial> = (0..p.trials as u64)
            .into_par_iter()
            .map(|t| mask_trial(h, w, p.sigma, p, per_trial_seed(seed, g as u64, t)))
            .collect::<Result<_>>()?;
        held_out.push(mean_std(&trials.iter().map(|t| t.held_out as f64).collect::<Vec<_>>()).0);
        deviations.push(mean_std(&trials.iter().map(|t| t.deviation).collect::<Vec<_>>()).0);
        for t in &trials {
            max_kappa = max_kappa.max(t.kappa);
            transfer_holds &= t.transfer_holds;
        }
    }
    let (h0, w0) = p.sizes[0];
    let noiseless_deviation = mask_trial(h0, w0, 0.0, p, per_trial_seed(seed, 99, 0))?.deviation;
    let held_out_sensitivity = held_out_sensitivity(p.probe_size, p.probes, &p.surrogate, derive_seed(seed, 100))?;
    let ratios: Vec<f64> = deviations.windows(2).map(|d| d[0] / d[1]).collect();
    let windows: Vec<(f64, f64)> = held_out.windows(2).map(|m| sqrt_window(m[1] / m[0])).collect();
    let passed = noiseless_deviation == 0.0
        && transfer_holds
        && held_out_sensitivity <= 1e-8
        && ratios.iter().zip(&windows).all(|(r, (lo, hi))| (lo..=hi).contains(&r));
    Ok(MaskReport {
        held_out,
        deviations,
        ratios,
        windows,
        noiseless_deviation,
        max_kappa,
        transfer_holds,
        held_out_sensitivity,
        passed,
    })
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorParams {
    pub seeds: usize,
    pub shape: Shape,
    pub sigma: f64,
    pub factor: usize,
    pub surrogate: SurrogateConfig,
}

impl Default for OperatorParams {
    fn default() -> Self {
        Self { seeds: 10, shape: Shape::new(3, 64, 64), sigma: 0.26, factor: 2, surrogate: SurrogateConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorSeedResult {
    pub selected_risk: f64,
    pub oracle_risk: f64,
    pub epsilon: f64,
    pub oracle_inequality: bool,
    pub transfer_bound: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorReport {
    pub identity_matches_denoising: bool,
    pub pixel_mask_matches_held_out: bool,
    pub downsample: Vec<OperatorSeedResult>,
    pub passed: bool,
}

fn identity_reduction(p: &OperatorParams, seed: u64) -> Result<bool> {
    let x = smooth_scene(p.shape, derive_seed(seed, 0))?;
    let y = corrupt(&x, &NoiseSpec::gaussian(p.sigma)?, derive_seed(seed, 1))?;
    let traj = run_plain(&y, &p.surrogate)?;
    let (pair, csr) = csr_curve(&traj, &y)?;
    let via_pair = operator_curve(&traj, &LinearOperator::Identity, &y, Some(pair))?;
    let via_full = operator_curve(&traj, &LinearOperator::Identity, &y, None)?;
    let full_matches = traj
        .frames()
        .iter()
        .zip(&via_full.values)
        .all(|(f, v)| mean_sq_diff(f.as_slice(), y.as_slice()).to_bits() == v.to_bits());
    Ok(via_pair.values == csr.values && full_matches)
}

fn mask_reduction(p: &OperatorParams, seed: u64) -> Result<bool> {
    let shape = Shape::new(p.shape.channels, 32, 32);
    let x = smooth_scene(shape, derive_seed(seed, 0))?;
    let y = corrupt(&x, &NoiseSpec::gaussian(p.sigma)?, derive_seed(seed, 1))?;
    let mask = sample_mask(32, 32, 0.9, derive_seed(seed, 2))?;
    let cfg = SurrogateConfig { step: 0.1, iterations: 200, stride: 10, bandwidth: None };
    let traj = run_masked(&y, &mask, &cfg)?;
    let op = LinearOperator::held_out_restriction(&mask);
    let via_op = operator_curve(&traj, &op, &op.apply(&y)?, None)?;
    Ok(via_op.values == mr_curve(&traj, &y, &mask)?.values)
}

fn downsample_seed(p: &OperatorParams, s: u64) -> Result<OperatorSeedResult> {
    let op = LinearOperator::Downsample { factor: p.factor };
    let spec = NoiseSpec::gaussian(p.sigma)?;
    let x = smooth_scene(p.shape, derive_seed(s, 0))?;
    let y = corrupt(&x, &spec, derive_seed(s, 1))?;
    let ax = op.apply(&x)?;
    let reference = corrupt(&ax, &spec, derive_seed(s, 2))?;
    let traj = run_plain(&y, &p.surrogate)?;
    let v = operator_curve(&traj, &op, &reference, None)?;
    let risk: Vec<f64> = traj
        .frames()
        .iter()
        .map(|f| Ok(mean_sq_diff(op.apply(f)?.as_slice(), ax.as_slice())))
        .collect::<Result<_>>()?;
    let var = p.sigma * p.sigma;
    let epsilon = v.values.iter().zip(&risk).map(|(a, b)| (a - b - var).abs()).fold(0.0, f64::max);
    let selected_risk = risk[v.selected_index()];
    let oracle_risk = risk.iter().copied().fold(f64::INFINITY, f64::min);
    let transfer = transfer_bound_check(&traj, &x, &op, 1.0, f64::INFINITY)?;
    Ok(OperatorSeedResult {
        selected_risk,
        oracle_risk,
        epsilon,
        oracle_inequality: selected_risk <= (oracle_risk + 2.0 * epsilon) * (1.0 + 1e-12),
        transfer_bound: transfer.all_hold,
    })
}

/// Operator-domain validation: the identity and held-out-restriction
/// operators reproduce the denoising and mask curves bit for bit, and for
/// box downsampling the selected frame's measurement-domain risk is within
/// `2ε` of the best, `ε = max_t |V_t^A − R_A(t) − σ²|`.
pub fn check_operator_theorem(p: &OperatorParams, seed: u64) -> Result<OperatorReport> {
    let identity_matches_denoising = identity_reduction(p, derive_seed(seed, 0))?;
    let pixel_mask_matches_held_out = mask_reduction(p, derive_seed(seed, 1))?;
    let downsample: Vec<OperatorSeedResult> = (0..p.seeds as u64)
        .into_par_iter()
        .map(|k| downsample_seed(p, per_trial_seed(seed, 2, k)))
        .collect::<Result<_>>()?;
    let passed = identity_matches_denoising
        && pixel_mask_matches_held_out
        && downsample.iter().all(|d| d.oracle_inequality && d.transfer_bound);
    Ok(OperatorReport { identity_matches_denoising, pixel_mask_matches_held_out, downsample, passed })
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SureParams {
    pub draws: usize,
    pub checkpoints: Vec<u64>,
    pub sigma: f64,
    pub shape: Shape,
    pub surrogate: SurrogateConfig,
}

impl Default for SureParams {
    fn default() -> Self {
        Self {
            draws: 200,
            checkpoints: vec![10, 100, 300, 1000, 3000],
            sigma: 0.26,
            shape: Shape::new(3, 32, 32),
            surrogate: SurrogateConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurePoint {
    pub iteration: u64,
    /// Mean of `SURE_t − R(t)` over draws.
    pub mean_error: f64,
    pub standard_error: f64,
    pub within: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SureReport {
    pub draws: usize,
    pub points: Vec<SurePoint>,
    pub passed: bool,
}

/// Over fresh Gaussian draws on a fixed clean scene, `SURE_t − R(t)` has
/// mean zero at every checkpoint.
pub fn check_sure_unbiased(p: &SureParams, seed: u64) -> Result<SureReport> {
    if p.draws < 2 || p.checkpoints.is_empty() {
        return Err(Error::Config("need at least two draws and one checkpoint".into()));
    }
    let x = smooth_scene(p.shape, derive_seed(seed, 0))?;
    let spec = NoiseSpec::gaussian(p.sigma)?;
    let errors: Vec<Vec<f64>> = (0..p.draws as u64)
        .into_par_iter()
        .map(|d| {
            let y = corrupt(&x, &spec, per_trial_seed(seed, 1, d))?;
            let traj = SpectralSurrogate::new(&y, &p.surrogate)?.trajectory(&p.checkpoints, Provenance::Plain)?;
            let sure = sure_curve(&traj, &y, p.sigma)?;
            Ok(traj
                .frames()
                .iter()
                .zip(&sure.values)
                .map(|(f, s)| s - mean_sq_diff(f.as_slice(), x.as_slice()))
                .collect())
        })
        .collect::<Result<_>>()?;
    let points: Vec<SurePoint> = p
        .checkpoints
        .iter()
        .enumerate()
        .map(|(k, &iteration)| {
            let column: Vec<f64> = errors.iter().map(|e| e[k]).collect();
            let (mean_error, sd) = mean_std(&column);
            let standard_error = sd / (p.draws as f64).sqrt();
            SurePoint { iteration, mean_error, standard_error, within: mean_error.abs() <= SE_RADIUS * standard_error }
        })
        .collect();
    let passed = points.iter().all(|pt| pt.within);
    Ok(SureReport { draws: p.draws, points, passed })
}

// ---------------------------------------------------------------------------

/// Effective-target check on a default scene: `S = σ_η² = 0.26²/2`,
/// a short plain run on `y = x + s + η`, 400 redraws of `η̃`.
fn default_effective_target(seed: u64) -> Result<EffectiveTargetReport> {
    let x = smooth_scene(Shape::new(3, 32, 32), derive_seed(seed, 0))?;
    let sigma_eta = 0.26 / 2f64.sqrt();
    let scene = crate::corruption::build_shared_scene(&x, sigma_eta * sigma_eta, sigma_eta, derive_seed(seed, 1))?;
    let traj = run_plain(&scene.observation(), &SurrogateConfig { stride: 500, ..SurrogateConfig::default() })?;
    check_effective_target(&scene, &traj, 400, derive_seed(seed, 2))
}

/// Runs one named check with its default parameters.
pub fn run_check(name: &str, seed: u64) -> Result<CheckOutcome> {
    match name {
        "single-reference" => {
            let r = check_single_reference(&SingleReferenceParams::default(), seed)?;
            CheckOutcome::new(name, r.passed, &r)
        }
        "alpha-star" => {
            let r = check_alpha_star(&AlphaStarParams::default(), seed)?;
            CheckOutcome::new(name, r.passed, &r)
        }
        "effective-target" => {
            let r = default_effective_target(seed)?;
            CheckOutcome::new(name, r.passed, &r)
        }
        "mask" => {
            let r = check_mask_theorem(&MaskParams::default(), seed)?;
            CheckOutcome::new(name, r.passed, &r)
        }
        "operator" => {
            let r = check_operator_theorem(&OperatorParams::default(), seed)?;
            CheckOutcome::new(name, r.passed, &r)
        }
        "sure" => {
            let r = check_sure_unbiased(&SureParams::default(), seed)?;
            CheckOutcome::new(name, r.passed, &r)
        }
        other => Err(Error::Config(format!("unknown check '{other}'; expected one of {}", CHECKS.join(", ")))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub seed: u64,
    pub passed: bool,
    pub checks: Vec<CheckOutcome>,
}

/// Runs `all` or a comma-separated list of check names.
pub fn run_suite(suite: &str, seed: u64) -> Result<SuiteReport> {
    let names: Vec<&str> = if suite.trim() == "all" {
        CHECKS.to_vec()
    } else {
        suite.split(',').map(str::trim).filter(|s| !s.is_empty()).collect()
    };
    if names.is_empty() {
        return Err(Error::Config("empty check list".into()));
    }
    let checks = names.iter().map(|n| run_check(n, seed)).collect::<Result<Vec<_>>>()?;
    Ok(SuiteReport { seed, passed: checks.iter().all(|c| c.passed), checks })
}
