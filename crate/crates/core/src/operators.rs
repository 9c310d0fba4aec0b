//! Linear validation operators and measurement-domain curves.
//!
//! A measurement-domain curve scores `A(x̂_t)` against a reference that
//! lives in the operator's output space. With `A` the identity it is the
//! denoising curve; with `A` the restriction to held-out pixels it is the
//! held-out mask curve, computed by the same arithmetic so the two agree
//! bit for bit.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corruption::HoldoutMask;
use crate::error::{Error, Result};
use crate::metrics::mean_sq_diff;
use crate::stoppers::{gather, ChannelPair, Orientation, ValidationCurve};
use crate::tensor::{ImageTensor, Shape, Trajectory};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LinearOperator {
    Identity,
    /// Extracts the coordinates where `plane == 1` (row-major) into a
    /// `C × 1 × m` image.
    PixelMask { height: usize, width: usize, plane: Vec<u8> },
    /// Averages non-overlapping `factor × factor` blocks.
    Downsample { factor: usize },
}

impl LinearOperator {
    /// Restriction to the pixels a mask holds out.
    pub fn held_out_restriction(mask: &HoldoutMask) -> Self {
        LinearOperator::PixelMask {
            height: mask.height(),
            width: mask.width(),
            plane: mask.keep().iter().map(|&b| 1 - b).collect(),
        }
    }

    /// Restriction to the pixels a mask keeps.
    pub fn retained_restriction(mask: &HoldoutMask) -> Self {
        LinearOperator::PixelMask { height: mask.height(), width: mask.width(), plane: mask.keep().to_vec() }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LinearOperator::Identity => "identity",
            LinearOperator::PixelMask { .. } => "pixel_mask",
            LinearOperator::Downsample { .. } => "downsample",
        }
    }

    fn extracted(plane: &[u8]) -> Vec<usize> {
        (0..plane.len()).filter(|&i| plane[i] == 1).collect()
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        match self {
            LinearOperator::Identity => Ok(input),
            LinearOperator::PixelMask { height, width, plane } => {
                if (input.height, input.width) != (*height, *width) || plane.len() != height * width {
                    return Err(Error::Shape(format!(
                        "pixel mask is {height}x{width}, input is {input}"
                    )));
                }
                Ok(Shape::new(input.channels, 1, Self::extracted(plane).len()))
            }
            LinearOperator::Downsample { factor } => {
                let f = *factor;
                if f == 0 || !input.height.is_multiple_of(f) || !input.width.is_multiple_of(f) {
                    return Err(Error::Shape(format!("{input} is not divisible into {f}x{f} blocks")));
                }
                Ok(Shape::new(input.channels, input.height / f, input.width / f))
            }
        }
    }

    /// Applies the operator to channel-major data of the given shape.
    fn apply_data(&self, data: &[f64], shape: Shape) -> Result<Vec<f64>> {
        let out = self.output_shape(shape)?;
        match self {
            LinearOperator::Identity => Ok(data.to_vec()),
            LinearOperator::PixelMask { plane, .. } => Ok(gather(data, shape.plane_len(), &Self::extracted(plane))),
            LinearOperator::Downsample { factor } => {
                let f = *factor;
                let (h, w) = (shape.height, shape.width);
                let norm = (f * f) as f64;
                let mut result = Vec::with_capacity(out.len());
                for plane in data.chunks_exact(shape.plane_len()) {
                    for br in 0..h / f {
                        for bc in 0..w / f {
                            let mut acc = 0.0;
                            for r in br * f..(br + 1) * f {
                                for c in bc * f..(bc + 1) * f {
                                    acc += plane[r * w + c];
                                }
                            }
                            result.push(acc / norm);
                        }
                    }
                }
                Ok(result)
            }
        }
    }

    pub fn apply(&self, x: &ImageTensor) -> Result<ImageTensor> {
        let data = self.apply_data(x.as_slice(), x.shape())?;
        ImageTensor::new(self.output_shape(x.shape())?, data)?.with_peak(x.peak())
    }

    /// Smallest nonzero singular value, where known in closed form.
    ///
    /// Box downsampling has `A Aᵀ = I / f²`, so every singular value is
    /// `1/f`. A pixel mask that extracts nothing has none.
    pub fn sigma_min(&self) -> Option<f64> {
        match self {
            LinearOperator::Identity => Some(1.0),
            LinearOperator::PixelMask { plane, .. } => plane.contains(&1).then_some(1.0),
            LinearOperator::Downsample { factor } => (*factor > 0).then(|| 1.0 / *factor as f64),
        }
    }

    /// `‖u_N‖²`: energy of the component of `u` in the operator's null space.
    pub fn null_space_energy(&self, u: &ImageTensor) -> Result<f64> {
        self.output_shape(u.shape())?;
        let data = u.as_slice();
        Ok(match self {
            LinearOperator::Identity => 0.0,
            LinearOperator::PixelMask { plane, .. } => data
                .chunks_exact(u.shape().plane_len())
                .flat_map(|p| p.iter().zip(plane).filter(|(_, &m)| m == 0).map(|(v, _)| v * v))
                .sum(),
            LinearOperator::Downsample { factor } => {
                // The row space is the block-constant images; the null-space
                // component is the deviation from each block mean.
                let f = *factor;
                let w = u.width();
                let means = self.apply_data(data, u.shape())?;
                let (bh, bw) = (u.height() / f, w / f);
                let mut acc = 0.0;
                for (c, plane) in data.chunks_exact(u.shape().plane_len()).enumerate() {
                    for (i, v) in plane.iter().enumerate() {
                        let (r, col) = (i / w, i % w);
                        let d = v - means[c * bh * bw + (r / f) * bw + col / f];
                        acc += d * d;
                    }
                }
                acc
            }
        })
    }
}

/// Measurement-domain curve `V_t^A = (1/m)‖A(x̂_t) − y^A‖²`.
///
/// With `pair = Some(p)`, channel `p.fit` of each frame is mapped and scored
/// against channel `p.reference` of `reference` (the channel-reference
/// variant); otherwise the whole primary output is mapped and scored
/// against all of `reference`.
pub fn operator_curve(
    traj: &Trajectory,
    op: &LinearOperator,
    reference: &ImageTensor,
    pair: Option<ChannelPair>,
) -> Result<ValidationCurve> {
    let shape = traj.shape();
    let plane = Shape::new(1, shape.height, shape.width);
    let (input_shape, reference_data): (Shape, &[f64]) = match pair {
        Some(p) => {
            if p.fit >= traj.primary_channels() || p.reference >= reference.channels() {
                return Err(Error::Channel(format!(
                    "channel pair ({}, {}) out of range",
                    p.fit, p.reference
                )));
            }
            (plane, reference.plane(p.reference))
        }
        None => (Shape::new(traj.primary_channels(), shape.height, shape.width), reference.as_slice()),
    };
    let out = op.output_shape(input_shape)?;
    let expected_ref = match pair {
        Some(_) => Shape::new(reference.channels(), out.height, out.width),
        None => out,
    };
    if reference.shape() != expected_ref {
        return Err(Error::Shape(format!(
            "reference is {}, operator output is {}",
            reference.shape(),
            expected_ref
        )));
    }
    let values: Result<Vec<f64>> = traj
        .frames()
        .par_iter()
        .map(|f| {
            let input = match pair {
                Some(p) => f.plane(p.fit),
                None => &f.as_slice()[..input_shape.len()],
            };
            Ok(mean_sq_diff(&op.apply_data(input, input_shape)?, reference_data))
        })
        .collect();
    ValidationCurve::new(traj.iterations().to_vec(), values?, Orientation::Minimize)
}

/// Per-frame image- and measurement-domain risks and the linear transfer
/// bound `R(t) ≤ (m / (n σ_min²))·R_A(t) + ‖u_N(t)‖²/n`, with
/// `u = x̂_t − x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub operator: String,
    pub sigma_min: f64,
    pub risk: Vec<f64>,
    pub measurement_risk: Vec<f64>,
    pub null_energy: Vec<f64>,
    pub bound: Vec<f64>,
    pub bound_holds: Vec<bool>,
    /// Least-squares fit of `R ≈ c·R_A`.
    pub fitted_c: f64,
    /// `max_t |R(t) − fitted_c·R_A(t)|`.
    pub fitted_kappa: f64,
    pub c: f64,
    pub kappa: f64,
    /// Whether `|R(t) − c·R_A(t)| ≤ κ` at every frame for the supplied pair.
    pub within_kappa: bool,
    /// Whether the one-sided bound holds at every frame.
    pub all_hold: bool,
}

/// Relative slack for floating-point rounding in the bound comparison.
const BOUND_RTOL: f64 = 1e-12;

pub fn transfer_bound_check(
    traj: &Trajectory,
    clean: &ImageTensor,
    op: &LinearOperator,
    c: f64,
    kappa: f64,
) -> Result<TransferReport> {
    let sigma_min = op
        .sigma_min()
        .ok_or_else(|| Error::UnsupportedOperator(format!("no known smallest gain for {}", op.name())))?;
    let shape = traj.shape();
    let primary = Shape::new(traj.primary_channels(), shape.height, shape.width);
    if clean.shape() != primary {
        return Err(Error::Shape(format!("clean image is {}, trajectory output is {primary}", clean.shape())));
    }
    let out = op.output_shape(primary)?;
    let (n, m) = (primary.len() as f64, out.len() as f64);
    let clean_measured = op.apply_data(clean.as_slice(), primary)?;
    let rows: Result<Vec<(f64, f64, f64)>> = (0..traj.len())
        .into_par_iter()
        .map(|k| {
            let frame = &traj.frames()[k].as_slice()[..primary.len()];
            let risk = mean_sq_diff(frame, clean.as_slice());
            let measurement_risk = mean_sq_diff(&op.apply_data(frame, primary)?, &clean_measured);
            let u = ImageTensor::new(primary, frame.iter().zip(clean.as_slice()).map(|(a, b)| a - b).collect())?;
            Ok((risk, measurement_risk, op.null_space_energy(&u)?))
        })
        .collect();
    let rows = rows?;
    let risk: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let measurement_risk: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let null_energy: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let gain = m / (n * sigma_min * sigma_min);
    let bound: Vec<f64> = measurement_risk.iter().zip(&null_energy).map(|(ra, e)| gain * ra + e / n).collect();
    let bound_holds: Vec<bool> = risk.iter().zip(&bound).map(|(r, b)| *r <= b * (1.0 + BOUND_RTOL)).collect();

    let num: f64 = risk.iter().zip(&measurement_risk).map(|(r, ra)| r * ra).sum();
    let den: f64 = measurement_risk.iter().map(|ra| ra * ra).sum();
    let fitted_c = if den > 0.0 { num / den } else { 0.0 };
    let spread = |c: f64| {
        risk.iter().zip(&measurement_risk).map(|(r, ra)| (r - c * ra).abs()).fold(0.0, f64::max)
    };
    let fitted_kappa = spread(fitted_c);
    let within_kappa = spread(c) <= kappa;
    let all_hold = bound_holds.iter().all(|&b| b);
    Ok(TransferReport {
        operator: op.name().to_string(),
        sigma_min,
        risk,
        measurement_risk,
        null_energy,
        bound,
        bound_holds,
        fitted_c,
        fitted_kappa,
        c,
        kappa,
        within_kappa,
        all_hold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corruption::sample_mask;
    use crate::metrics::mse;
    use crate::stoppers::{csr_curve, mr_curve};
    use crate::tensor::Provenance;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: Shape, seed: u64) -> ImageTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageTensor::from_fn(shape, |_, _, _| rng.random::<f64>()).unwrap()
    }

    fn random_traj(shape: Shape, frames: usize, seed: u64, provenance: Provenance) -> Trajectory {
        let fr = (0..frames).map(|k| random(shape, seed * 100 + k as u64)).collect();
        Trajectory::new(fr, (1..=frames as u64).collect(), None, provenance).unwrap()
    }

    #[test]
    fn identity_returns_input() {
        let x = random(Shape::new(2, 3, 4), 1);
        assert_eq!(LinearOperator::Identity.apply(&x).unwrap(), x);
    }

    #[test]
    fn downsample_constant_and_block_means() {
        let c = ImageTensor::filled(Shape::new(1, 6, 8), 0.3).unwrap();
        let d = LinearOperator::Downsample { factor: 2 }.apply(&c).unwrap();
        assert_eq!(d.shape(), Shape::new(1, 3, 4));
        assert!(d.as_slice().iter().all(|&v| (v - 0.3).abs() < 1e-15));

        let x = random(Shape::new(1, 4, 4), 2);
        let d = LinearOperator::Downsample { factor: 2 }.apply(&x).unwrap();
        for br in 0..2 {
            for bc in 0..2 {
                let mean = (x.get(0, 2 * br, 2 * bc)
                    + x.get(0, 2 * br, 2 * bc + 1)
                    + x.get(0, 2 * br + 1, 2 * bc)
                    + x.get(0, 2 * br + 1, 2 * bc + 1))
                    / 4.0;
                assert!((d.get(0, br, bc) - mean).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn downsample_rejects_indivisible_shapes() {
        let x = random(Shape::new(1, 5, 4), 3);
        assert!(matches!(LinearOperator::Downsample { factor: 2 }.apply(&x), Err(Error::Shape(_))));
    }

    #[test]
    fn pixel_mask_extracts_marked_pixels() {
        let x = random(Shape::new(2, 2, 3), 4);
        let op = LinearOperator::PixelMask { height: 2, width: 3, plane: vec![1, 0, 0, 1, 1, 0] };
        let out = op.apply(&x).unwrap();
        assert_eq!(out.shape(), Shape::new(2, 1, 3));
        assert_eq!(out.plane(1), &[x.get(1, 0, 0), x.get(1, 1, 0), x.get(1, 1, 1)]);
    }

    #[test]
    fn identity_curve_is_the_denoising_curve_bitwise() {
        let y = random(Shape::new(3, 6, 6), 5);
        let traj = random_traj(y.shape(), 5, 5, Provenance::Plain);
        let (pair, csr) = csr_curve(&traj, &y).unwrap();
        let via_op = operator_curve(&traj, &LinearOperator::Identity, &y, Some(pair)).unwrap();
        assert_eq!(via_op.values, csr.values);
        let full = operator_curve(&traj, &LinearOperator::Identity, &y, None).unwrap();
        for (k, f) in traj.frames().iter().enumerate() {
            assert_eq!(full.values[k], mse(f, &y).unwrap());
        }
    }

    #[test]
    fn held_out_restriction_curve_is_the_mask_curve_bitwise() {
        let y = random(Shape::new(3, 8, 8), 6);
        let mask = sample_mask(8, 8, 0.8, 6).unwrap();
        let traj = random_traj(y.shape(), 4, 6, Provenance::Masked(mask.clone()));
        let op = LinearOperator::held_out_restriction(&mask);
        let reference = op.apply(&y).unwrap();
        let via_op = operator_curve(&traj, &op, &reference, None).unwrap();
        assert_eq!(via_op.values, mr_curve(&traj, &y, &mask).unwrap().values);
    }

    #[test]
    fn operator_curve_zero_when_measurement_matches() {
        let x = random(Shape::new(1, 4, 4), 7);
        let op = LinearOperator::Downsample { factor: 2 };
        let reference = op.apply(&x).unwrap();
        let traj = Trajectory::new(vec![random(x.shape(), 8), x.clone()], vec![1, 2], None, Provenance::Plain).unwrap();
        let c = operator_curve(&traj, &op, &reference, None).unwrap();
        assert_eq!(c.values[1], 0.0);
        assert!(c.values[0] > 0.0);
        let wrong = random(Shape::new(1, 4, 4), 9);
        assert!(matches!(operator_curve(&traj, &op, &wrong, None), Err(Error::Shape(_))));
    }

    #[test]
    fn identity_transfer_is_exact() {
        let clean = random(Shape::new(2, 4, 4), 10);
        let traj = random_traj(clean.shape(), 5, 10, Provenance::Plain);
        let r = transfer_bound_check(&traj, &clean, &LinearOperator::Identity, 1.0, 0.0).unwrap();
        assert_eq!(r.risk, r.measurement_risk);
        assert!(r.null_energy.iter().all(|&e| e == 0.0));
        assert_eq!(r.fitted_c, 1.0);
        assert_eq!(r.fitted_kappa, 0.0);
        assert!(r.within_kappa && r.all_hold);
    }

    #[test]
    fn retained_mask_null_energy_is_held_out_energy() {
        let mask = sample_mask(8, 8, 0.7, 11).unwrap();
        let op = LinearOperator::retained_restriction(&mask);
        let u = random(Shape::new(3, 8, 8), 11);
        let held: f64 = (0..3)
            .flat_map(|c| mask.held_out_indices().into_iter().map(move |i| (c, i)))
            .map(|(c, i)| u.plane(c)[i].powi(2))
            .sum();
        assert_eq!(op.null_space_energy(&u).unwrap(), held);
    }

    #[test]
    fn downsample_bound_holds_on_every_frame() {
        let clean = random(Shape::new(3, 8, 8), 12);
        let traj = random_traj(clean.shape(), 6, 12, Provenance::Plain);
        let r = transfer_bound_check(&traj, &clean, &LinearOperator::Downsample { factor: 2 }, 4.0, 1.0).unwrap();
        assert_eq!(r.sigma_min, 0.5);
        assert!(r.all_hold, "{:?} vs {:?}", r.risk, r.bound);
    }

    #[test]
    fn empty_pixel_mask_has_no_known_gain() {
        let clean = random(Shape::new(1, 2, 2), 13);
        let traj = random_traj(clean.shape(), 1, 13, Provenance::Plain);
        let op = LinearOperator::PixelMask { height: 2, width: 2, plane: vec![0; 4] };
        assert!(matches!(
            transfer_bound_check(&traj, &clean, &op, 1.0, 0.0),
            Err(Error::UnsupportedOperator(_))
        ));
    }

    #[test]
    fn operator_serializes_with_kind_tag() {
        let json = serde_json::to_string(&LinearOperator::Downsample { factor: 2 }).unwrap();
        assert_eq!(json, r#"{"kind":"downsample","factor":2}"#);
        assert_eq!(serde_json::from_str::<LinearOperator>(&json).unwrap(), LinearOperator::Downsample { factor: 2 });
    }

    fn operators() -> Vec<LinearOperator> {
        vec![
            LinearOperator::Identity,
            LinearOperator::Downsample { factor: 2 },
            LinearOperator::PixelMask { height: 4, width: 6, plane: (0..24).map(|i| (i % 3 != 0) as u8).collect() },
        ]
    }

    proptest! {
        #[test]
        fn operators_are_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let shape = Shape::new(2, 4, 6);
            let u = random(shape, seed);
            let v = random(shape, seed.wrapping_add(1));
            let combo = u.scale(a).add(&v.scale(b)).unwrap();
            for op in operators() {
                let lhs = op.apply(&combo).unwrap();
                let rhs = op.apply(&u).unwrap().scale(a).add(&op.apply(&v).unwrap().scale(b)).unwrap();
                let err = lhs.sub(&rhs).unwrap().sum_squares().sqrt();
                prop_assert!(err < 1e-12, "{} nonlinear by {err}", op.name());
            }
        }

        #[test]
        fn transfer_bound_holds_for_random_frames(seed in any::<u64>()) {
            let clean = random(Shape::new(1, 4, 6), seed);
            let traj = random_traj(clean.shape(), 3, seed % 1000, Provenance::Plain);
            for op in operators() {
                let r = transfer_bound_check(&traj, &clean, &op, 1.0, 1.0).unwrap();
                prop_assert!(r.all_hold);
            }
        }
    }
}
