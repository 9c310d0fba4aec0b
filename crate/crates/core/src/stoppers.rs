//! Stopping criteria.
//!
//! Each criterion turns a trajectory into a [`ValidationCurve`]; [`select`]
//! reduces a curve to a stopping iteration and [`oracle_report`] scores that
//! choice against the best frame in hindsight.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corruption::HoldoutMask;
use crate::error::{Error, Result};
use crate::fourier::SpectralScorer;
use crate::metrics::{mean_sq_diff, psnr_between};
use crate::tensor::{ImageTensor, Provenance, Trajectory};

/// Default ACR burn-in as a fraction of the final iteration.
pub const DEFAULT_BURN_IN_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Criterion {
    #[serde(rename = "csr")]
    Csr,
    #[serde(rename = "mr")]
    Mr,
    #[serde(rename = "acr")]
    Acr,
    #[serde(rename = "acr-mse")]
    AcrMse,
    #[serde(rename = "wmv")]
    Wmv,
    #[serde(rename = "sure")]
    Sure,
}

impl Criterion {
    pub const ALL: [Criterion; 6] =
        [Criterion::Csr, Criterion::Mr, Criterion::Acr, Criterion::AcrMse, Criterion::Wmv, Criterion::Sure];

    pub fn as_str(&self) -> &'static str {
        match self {
            Criterion::Csr => "csr",
            Criterion::Mr => "mr",
            Criterion::Acr => "acr",
            Criterion::AcrMse => "acr-mse",
            Criterion::Wmv => "wmv",
            Criterion::Sure => "sure",
        }
    }
}

impl std::fmt::Display for Criterion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Criterion::ALL
            .into_iter()
            .find(|c| c.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown criterion '{s}'")))
    }
}

/// Per-checkpoint score with its orientation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationCurve {
    pub iterations: Vec<u64>,
    pub values: Vec<f64>,
    pub orientation: Orientation,
    /// Leading entries ignored by [`select`].
    pub burn_in: usize,
    /// When set (minimize only), selection stops at the running minimum
    /// once it has not improved for this many subsequent checkpoints.
    pub patience: Option<usize>,
    /// Entries whose value was carried forward from the previous frame
    /// because the score was undefined there.
    pub carried: Vec<usize>,
}

impl ValidationCurve {
    pub fn new(iterations: Vec<u64>, values: Vec<f64>, orientation: Orientation) -> Result<Self> {
        if iterations.is_empty() {
            return Err(Error::Shape("validation curve is empty".into()));
        }
        if iterations.len() != values.len() {
            return Err(Error::Shape(format!(
                "{} iterations for {} values",
                iterations.len(),
                values.len()
            )));
        }
        Ok(Self { iterations, values, orientation, burn_in: 0, patience: None, carried: Vec::new() })
    }

    pub fn with_burn_in(mut self, burn_in: usize) -> Result<Self> {
        if burn_in >= self.values.len() {
            return Err(Error::Config(format!(
                "burn-in {burn_in} leaves no entries of a {}-point curve",
                self.values.len()
            )));
        }
        self.burn_in = burn_in;
        Ok(self)
    }

    pub fn with_patience(mut self, patience: usize) -> Self {
        self.patience = Some(patience);
        self
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Index into `values` chosen by [`select`].
    pub fn selected_index(&self) -> usize {
        let v = &self.values;
        let start = self.burn_in;
        match (self.orientation, self.patience) {
            (Orientation::Minimize, Some(patience)) => {
                let mut best = start;
                for k in start..v.len() {
                    if v[k] < v[best] {
                        best = k;
                    }
                    if k - best >= patience.max(1) {
                        return best;
                    }
                }
                best
            }
            (Orientation::Minimize, None) => {
                (start..v.len()).fold(start, |b, k| if v[k] < v[b] { k } else { b })
            }
            (Orientation::Maximize, _) => {
                (start..v.len()).fold(start, |b, k| if v[k] > v[b] { k } else { b })
            }
        }
    }
}

/// Stopping iteration: argmin / argmax over entries at or after the
/// burn-in, earliest on ties.
pub fn select(curve: &ValidationCurve) -> u64 {
    curve.iterations[curve.selected_index()]
}

/// Number of leading frames whose iteration falls before
/// `fraction · final_iteration`, capped so at least one frame remains.
pub fn burn_in_for_fraction(iterations: &[u64], fraction: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::Config(format!("burn-in fraction must lie in [0, 1), got {fraction}")));
    }
    let last = *iterations.last().ok_or_else(|| Error::Shape("no iterations".into()))?;
    let cutoff = fraction * last as f64;
    let count = iterations.iter().take_while(|&&t| (t as f64) < cutoff).count();
    Ok(count.min(iterations.len() - 1))
}

/// Ordered channel pair: reconstruct `fit`, validate against `reference`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChannelPair {
    pub fit: usize,
    pub reference: usize,
}

fn check_primary_shape(traj: &Trajectory, y: &ImageTensor) -> Result<()> {
    let shape = traj.shape();
    if y.channels() != traj.primary_channels() || y.height() != shape.height || y.width() != shape.width {
        return Err(Error::Shape(format!(
            "observation is {}, trajectory primary output is {}x{}x{}",
            y.shape(),
            traj.primary_channels(),
            shape.height,
            shape.width
        )));
    }
    Ok(())
}

/// Primary-channel data of frame `k` without copying.
fn primary_slice(traj: &Trajectory, k: usize) -> &[f64] {
    let n = traj.primary_channels() * traj.shape().plane_len();
    &traj.frames()[k].as_slice()[..n]
}

/// Closest pair `argmin_{i<j} (1/n)‖y_i − y_j‖²`, earliest on ties.
pub fn closest_channel_pair(y: &ImageTensor) -> Result<(usize, usize, f64)> {
    if y.channels() < 2 {
        return Err(Error::Channel(format!(
            "channel-reference validation needs at least 2 channels, got {}",
            y.channels()
        )));
    }
    let mut best = (0, 1, f64::INFINITY);
    for i in 0..y.channels() {
        for j in i + 1..y.channels() {
            let d = mean_sq_diff(y.plane(i), y.plane(j));
            if d < best.2 {
                best = (i, j, d);
            }
        }
    }
    Ok(best)
}

fn channel_curve(traj: &Trajectory, y: &ImageTensor, pair: ChannelPair) -> Vec<f64> {
    let reference = y.plane(pair.reference);
    traj.frames()
        .par_iter()
        .map(|f| mean_sq_diff(f.plane(pair.fit), reference))
        .collect()
}

/// Channel-similarity reference curve
/// `V_t = (1/n)‖x̂_{t,i} − y_j‖²` for the closest channel pair.
///
/// Both orientations of the pair are evaluated; the one whose curve
/// reaches the lower minimum is returned.
pub fn csr_curve(traj: &Trajectory, y: &ImageTensor) -> Result<(ChannelPair, ValidationCurve)> {
    check_primary_shape(traj, y)?;
    let (i, j, _) = closest_channel_pair(y)?;
    let mut best: Option<(ChannelPair, Vec<f64>, f64)> = None;
    for pair in [ChannelPair { fit: i, reference: j }, ChannelPair { fit: j, reference: i }] {
        let values = channel_curve(traj, y, pair);
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        if best.as_ref().is_none_or(|b| min < b.2) {
            best = Some((pair, values, min));
        }
    }
    let (pair, values, _) = best.expect("two orientations evaluated");
    let curve = ValidationCurve::new(traj.iterations().to_vec(), values, Orientation::Minimize)?;
    Ok((pair, curve))
}

/// Copies `plane[i]` for each index, channel by channel.
pub(crate) fn gather(data: &[f64], plane_len: usize, indices: &[usize]) -> Vec<f64> {
    data.chunks_exact(plane_len)
        .flat_map(|plane| indices.iter().map(move |&i| plane[i]))
        .collect()
}

/// Held-out validation curve `V_t = ‖H ⊙ (x̂_t − y)‖² / ΣH` (sum over all
/// channels' held-out entries).
///
/// The trajectory must come from masked training with this very mask;
/// otherwise the held-out noise was fitted and the curve is meaningless.
pub fn mr_curve(traj: &Trajectory, y: &ImageTensor, mask: &HoldoutMask) -> Result<ValidationCurve> {
    match traj.provenance() {
        Provenance::Masked(trained) if trained == mask => {}
        Provenance::Masked(_) => {
            return Err(Error::Provenance(
                "trajectory was trained with a different mask".into(),
            ))
        }
        other => {
            return Err(Error::Provenance(format!(
                "held-out validation needs a masked-training trajectory, got '{}'",
                other.name()
            )))
        }
    }
    check_primary_shape(traj, y)?;
    let indices = mask.held_out_indices();
    if indices.is_empty() {
        return Err(Error::Config("mask holds out no pixels".into()));
    }
    let plane_len = traj.shape().plane_len();
    let reference = gather(y.as_slice(), plane_len, &indices);
    let values = (0..traj.len())
        .into_par_iter()
        .map(|k| mean_sq_diff(&gather(primary_slice(traj, k), plane_len, &indices), &reference))
        .collect();
    ValidationCurve::new(traj.iterations().to_vec(), values, Orientation::Minimize)
}

fn aux_parts(traj: &Trajectory, y2: &ImageTensor) -> Result<usize> {
    let shape = traj.shape();
    if !shape.channels.is_multiple_of(2) {
        return Err(Error::Channel(format!(
            "augmented criteria need 2C output channels, got {}",
            shape.channels
        )));
    }
    if *traj.provenance() != Provenance::Augmented {
        return Err(Error::Provenance(format!(
            "augmented criteria need an augmented-channel trajectory, got '{}'",
            traj.provenance().name()
        )));
    }
    let c = shape.channels / 2;
    if y2.channels() != c || y2.height() != shape.height || y2.width() != shape.width {
        return Err(Error::Shape(format!(
            "reference copy is {}, auxiliary output is {}x{}x{}",
            y2.shape(),
            c,
            shape.height,
            shape.width
        )));
    }
    Ok(c * shape.plane_len())
}

/// Augmented-channel spectral score: `B_t` is the power-weighted mean
/// `‖ω‖²` of the residual between the auxiliary outputs and `y⁽²⁾`.
/// Maximized after `burn_in` frames.
///
/// A frame whose residual is exactly zero has no defined score; it takes the
/// previous frame's value (0 for the first frame) and is listed in
/// `carried`.
pub fn acr_curve(traj: &Trajectory, y2: &ImageTensor, burn_in: usize) -> Result<ValidationCurve> {
    let offset = aux_parts(traj, y2)?;
    let scorer = SpectralScorer::new(y2.height(), y2.width());
    let scores: Vec<Result<f64>> = traj
        .frames()
        .par_iter()
        .map(|f| {
            let aux = ImageTensor::new(y2.shape(), f.as_slice()[offset..].to_vec())?;
            scorer.score(&aux.sub(y2)?)
        })
        .collect();
    let mut values = Vec::with_capacity(scores.len());
    let mut carried = Vec::new();
    for (k, s) in scores.into_iter().enumerate() {
        match s {
            Ok(v) => values.push(v),
            Err(Error::ZeroResidual) => {
                carried.push(k);
                values.push(values.last().copied().unwrap_or(0.0));
            }
            Err(e) => return Err(e),
        }
    }
    let mut curve = ValidationCurve::new(traj.iterations().to_vec(), values, Orientation::Maximize)?
        .with_burn_in(burn_in)?;
    curve.carried = carried;
    Ok(curve)
}

/// MSE variant of the augmented criterion: `(1/n)‖X̂_{t,aux} − y⁽²⁾‖²`,
/// minimized.
pub fn acr_mse_curve(traj: &Trajectory, y2: &ImageTensor) -> Result<ValidationCurve> {
    let offset = aux_parts(traj, y2)?;
    let reference = y2.as_slice();
    let values = traj.frames().par_iter().map(|f| mean_sq_diff(&f.as_slice()[offset..], reference)).collect();
    ValidationCurve::new(traj.iterations().to_vec(), values, Orientation::Minimize)
}

/// Windowed moving variance of the primary output,
/// `VAR_t = (1/W) Σ_{k=t−W+1..t} (1/n)‖x̂_k − x̄_t‖²` with `x̄_t` the
/// window's mean frame. Defined from the `W`-th frame on; selected with
/// patience `W` (first minimum not improved on within `W` checkpoints,
/// else the global minimum).
pub fn wmv_curve(traj: &Trajectory, window: usize) -> Result<ValidationCurve> {
    if window == 0 {
        return Err(Error::Config("window must be at least 1".into()));
    }
    if traj.len() < window {
        return Err(Error::Config(format!(
            "window of {window} frames exceeds trajectory length {}",
            traj.len()
        )));
    }
    let n = traj.primary_channels() * traj.shape().plane_len();
    let values: Vec<f64> = (window - 1..traj.len())
        .into_par_iter()
        .map(|end| {
            let frames: Vec<&[f64]> = (end + 1 - window..=end).map(|k| primary_slice(traj, k)).collect();
            // Mean taken as an offset from the first frame: exact for
            // constant windows and better conditioned for slowly moving ones.
            let first = frames[0];
            let mut offset = vec![0.0; n];
            for f in &frames[1..] {
                for ((o, v), v0) in offset.iter_mut().zip(f.iter()).zip(first) {
                    *o += v - v0;
                }
            }
            let mean: Vec<f64> = first.iter().zip(&offset).map(|(v0, o)| v0 + o / window as f64).collect();
            frames.iter().map(|f| mean_sq_diff(f, &mean)).sum::<f64>() / window as f64
        })
        .collect();
    let iterations = traj.iterations()[window - 1..].to_vec();
    Ok(ValidationCurve::new(iterations, values, Orientation::Minimize)?.with_patience(window))
}

/// Gaussian SURE of the primary output,
/// `SURE_t = (1/n)‖x̂_t − y‖² + 2σ²·div_t − σ²`, where `div_t` is the
/// trajectory's normalized divergence.
pub fn sure_curve(traj: &Trajectory, y: &ImageTensor, sigma: f64) -> Result<ValidationCurve> {
    let divergence = traj
        .divergence()
        .ok_or_else(|| Error::Metadata("SURE needs per-frame divergence; trajectory has none".into()))?;
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!("SURE needs a positive noise level, got {sigma}")));
    }
    check_primary_shape(traj, y)?;
    let var = sigma * sigma;
    let values = (0..traj.len())
        .into_par_iter()
        .map(|k| mean_sq_diff(primary_slice(traj, k), y.as_slice()) + 2.0 * var * divergence[k] - var)
        .collect();
    ValidationCurve::new(traj.iterations().to_vec(), values, Orientation::Minimize)
}

/// Outcome of one criterion on one trajectory, scored against the clean
/// image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopReport {
    pub criterion: String,
    pub selected_iteration: u64,
    pub selected_psnr: f64,
    pub oracle_iteration: u64,
    pub oracle_psnr: f64,
    /// `oracle_psnr − selected_psnr` in dB.
    pub gap: f64,
}

/// PSNR of each frame's primary output against `clean`.
pub fn frame_psnrs(traj: &Trajectory, clean: &ImageTensor) -> Result<Vec<f64>> {
    check_primary_shape(traj, clean)?;
    (0..traj.len()).into_par_iter().map(|k| psnr_between(&traj.primary(k), clean)).collect()
}

/// Index of the highest-PSNR frame, earliest on ties.
pub fn oracle_index(psnrs: &[f64]) -> usize {
    (0..psnrs.len()).fold(0, |b, k| if psnrs[k] > psnrs[b] { k } else { b })
}

pub fn oracle_report(
    traj: &Trajectory,
    clean: &ImageTensor,
    curve: &ValidationCurve,
    criterion: &str,
) -> Result<StopReport> {
    let psnrs = frame_psnrs(traj, clean)?;
    let selected_iteration = select(curve);
    let selected = traj.index_of(selected_iteration).ok_or_else(|| {
        Error::Shape(format!("selected iteration {selected_iteration} is not a trajectory checkpoint"))
    })?;
    let best = oracle_index(&psnrs);
    let gap = if selected == best { 0.0 } else { psnrs[best] - psnrs[selected] };
    Ok(StopReport {
        criterion: criterion.to_string(),
        selected_iteration,
        selected_psnr: psnrs[selected],
        oracle_iteration: traj.iterations()[best],
        oracle_psnr: psnrs[best],
        gap,
    })
}
