//! Pseudo-reference early stopping for iterative image reconstruction.
//!
//! The crate builds validation targets from the noisy observation itself —
//! a neighbouring color channel, held-out pixels, or an extra corrupted
//! copy — and uses them to pick the stopping iteration of a reconstruction
//! trajectory without access to the clean image.
//!
//! * [`tensor`], [`metrics`], [`fourier`]: data model, MSE/PSNR, 2D DFT.
//! * [`corruption`]: noise synthesis, auxiliary copies, held-out masks.
//! * [`surrogate`]: a preconditioned Landweber reconstructor with a closed
//!   form, used as a cheap stand-in for network-based reconstructions.
//! * [`stoppers`]: validation curves, selection and oracle scoring.
//! * [`operators`]: measurement-domain validation for linear operators.
//! * [`regsel`]: Tikhonov regularization-strength selection.
//! * [`harness`]: Monte Carlo checks of the validation guarantees.
//! * [`bundle`]: on-disk trajectory bundles.
//! * [`pipeline`]: end-to-end evaluation on synthetic scenes.

// Negated comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bundle;
pub mod corruption;
pub mod error;
pub mod fourier;
pub mod harness;
pub mod metrics;
pub mod operators;
pub mod pipeline;
pub mod regsel;
pub mod stoppers;
pub mod surrogate;
pub mod synthetic;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{ImageTensor, Provenance, Shape, Trajectory};
