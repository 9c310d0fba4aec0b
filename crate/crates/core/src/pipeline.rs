//! Criterion dispatch and end-to-end evaluation on synthetic scenes.

use serde::{Deserialize, Serialize};

use crate::corruption::{corrupt, derive_seed, make_aux_pair, sample_mask, NoiseSpec, DEFAULT_KEEP_PROBABILITY};
use crate::error::{Error, Result};
use crate::stoppers::{
    acr_curve, acr_mse_curve, burn_in_for_fraction, csr_curve, frame_psnrs, mr_curve, oracle_index, oracle_report,
    sure_curve, wmv_curve, Criterion, StopReport, ValidationCurve, DEFAULT_BURN_IN_FRACTION,
};
use crate::surrogate::{run_augmented, run_masked, run_plain, SurrogateConfig};
use crate::synthetic::smooth_scene;
use crate::tensor::{ImageTensor, Provenance, Shape, Trajectory};

/// Default WMV window, in iterations.
pub const DEFAULT_WINDOW_ITERATIONS: u64 = 1000;

/// What a criterion may need besides the trajectory.
#[derive(Debug, Clone, Copy)]
pub struct CriterionInputs<'a> {
    pub trajectory: &'a Trajectory,
    pub y: &'a ImageTensor,
    pub y2: Option<&'a ImageTensor>,
    pub sigma: Option<f64>,
    /// WMV window in frames.
    pub window: usize,
    pub burn_in_fraction: f64,
}

/// Converts a window given in iterations into checkpoints, using the
/// spacing of the first two checkpoints. At least one frame.
pub fn window_in_frames(iterations: &[u64], window_iterations: u64) -> usize {
    let spacing = match iterations {
        [a, b, ..] => b - a,
        _ => return 1,
    };
    ((window_iterations as f64 / spacing as f64).round() as usize).max(1)
}

pub fn criterion_curve(criterion: Criterion, inputs: &CriterionInputs<'_>) -> Result<ValidationCurve> {
    let traj = inputs.trajectory;
    match criterion {
        Criterion::Csr => csr_curve(traj, inputs.y).map(|(_, c)| c),
        Criterion::Mr => match traj.provenance() {
            Provenance::Masked(mask) => mr_curve(traj, inputs.y, mask),
            other => Err(Error::Provenance(format!(
                "held-out validation needs a masked-training trajectory, got '{}'",
                other.name()
            ))),
        },
        Criterion::Acr | Criterion::AcrMse => {
            if *traj.provenance() != Provenance::Augmented {
                return Err(Error::Provenance(format!(
                    "augmented criteria need an augmented-channel trajectory, got '{}'",
                    traj.provenance().name()
                )));
            }
            let y2 = inputs.y2.ok_or_else(|| Error::Metadata("augmented criteria need the y2 copy".into()))?;
            if criterion == Criterion::Acr {
                let burn_in = burn_in_for_fraction(traj.iterations(), inputs.burn_in_fraction)?;
                acr_curve(traj, y2, burn_in)
            } else {
                acr_mse_curve(traj, y2)
            }
        }
        Criterion::Wmv => wmv_curve(traj, inputs.window),
        Criterion::Sure => {
            let sigma = inputs.sigma.ok_or_else(|| Error::Config("SURE needs the noise level".into()))?;
            sure_curve(traj, inputs.y, sigma)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub shape: Shape,
    pub sigma: f64,
    pub surrogate: SurrogateConfig,
    pub keep_probability: f64,
    pub window_iterations: u64,
    pub burn_in_fraction: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            shape: Shape::new(3, 64, 64),
            sigma: 0.26,
            surrogate: SurrogateConfig::default(),
            keep_probability: DEFAULT_KEEP_PROBABILITY,
            window_iterations: DEFAULT_WINDOW_ITERATIONS,
            burn_in_fraction: DEFAULT_BURN_IN_FRACTION,
        }
    }
}

/// Results of every criterion on one synthetic scene. Each criterion is
/// scored on the trajectory its training protocol produces; WMV is scored
/// on all three so every criterion has a same-trajectory baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneOutcome {
    pub seed: u64,
    /// Whether the plain run's best frame is neither the first nor the last.
    pub oracle_interior: bool,
    pub csr: StopReport,
    pub sure: StopReport,
    pub wmv: StopReport,
    pub mr: StopReport,
    pub wmv_masked: StopReport,
    pub acr: StopReport,
    pub acr_mse: StopReport,
    pub wmv_augmented: StopReport,
}

pub fn evaluate_scene(cfg: &SceneConfig, seed: u64) -> Result<SceneOutcome> {
    let clean = smooth_scene(cfg.shape, derive_seed(seed, 0))?;
    let spec = NoiseSpec::gaussian(cfg.sigma)?;
    let y = corrupt(&clean, &spec, derive_seed(seed, 1))?;
    let mask = sample_mask(cfg.shape.height, cfg.shape.width, cfg.keep_probability, derive_seed(seed, 2))?;
    let (y1, y2) = make_aux_pair(&y, &spec, (derive_seed(seed, 3), derive_seed(seed, 4)))?;

    let plain = run_plain(&y, &cfg.surrogate)?;
    let masked = run_masked(&y, &mask, &cfg.surrogate)?;
    let augmented = run_augmented(&y, &y1, &cfg.surrogate)?;

    let report = |traj: &Trajectory, criterion: Criterion| -> Result<StopReport> {
        let inputs = CriterionInputs {
            trajectory: traj,
            y: &y,
            y2: Some(&y2),
            sigma: Some(cfg.sigma),
            window: window_in_frames(traj.iterations(), cfg.window_iterations),
            burn_in_fraction: cfg.burn_in_fraction,
        };
        oracle_report(traj, &clean, &criterion_curve(criterion, &inputs)?, criterion.as_str())
    };

    let psnrs = frame_psnrs(&plain, &clean)?;
    let best = oracle_index(&psnrs);
    Ok(SceneOutcome {
        seed,
        oracle_interior: best > 0 && best + 1 < psnrs.len(),
        csr: report(&plain, Criterion::Csr)?,
        sure: report(&plain, Criterion::Sure)?,
        wmv: report(&plain, Criterion::Wmv)?,
        mr: report(&masked, Criterion::Mr)?,
        wmv_masked: report(&masked, Criterion::Wmv)?,
        acr: report(&augmented, Criterion::Acr)?,
        acr_mse: report(&augmented, Criterion::AcrMse)?,
        wmv_augmented: report(&augmented, Criterion::Wmv)?,
    })
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_conversion() {
        let its: Vec<u64> = (1..=300).map(|k| k * 10).collect();
        assert_eq!(window_in_frames(&its, 1000), 100);
        assert_eq!(window_in_frames(&its, 1), 1);
        assert_eq!(window_in_frames(&[5], 1000), 1);
    }

    #[test]
    fn mr_on_plain_run_is_a_provenance_error() {
        let y = smooth_scene(Shape::new(3, 8, 8), 1).unwrap();
        let traj = run_plain(&y, &SurrogateConfig { iterations: 20, ..Default::default() }).unwrap();
        let inputs =
            CriterionInputs { trajectory: &traj, y: &y, y2: None, sigma: None, window: 1, burn_in_fraction: 0.05 };
        assert!(matches!(criterion_curve(Criterion::Mr, &inputs), Err(Error::Provenance(_))));
        assert!(matches!(criterion_curve(Criterion::Acr, &inputs), Err(Error::Provenance(_))));
        assert!(matches!(criterion_curve(Criterion::Sure, &inputs), Err(Error::Config(_))));
        assert!(criterion_curve(Criterion::Csr, &inputs).is_ok());
    }

    #[test]
    fn small_scene_evaluates_every_criterion() {
        let cfg = SceneConfig {
            shape: Shape::new(3, 16, 16),
            surrogate: SurrogateConfig { iterations: 400, stride: 10, ..Default::default() },
            window_iterations: 100,
            ..Default::default()
        };
        let out = evaluate_scene(&cfg, 3).unwrap();
        for r in [&out.csr, &out.sure, &out.wmv, &out.mr, &out.acr, &out.acr_mse] {
            assert!(r.gap >= -1e-9, "{} gap {}", r.criterion, r.gap);
        }
        assert_eq!(out, evaluate_scene(&cfg, 3).unwrap());
    }

    #[test]
    fn mean_std_values() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }
}
