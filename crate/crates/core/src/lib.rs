//! Near-field XL-MIMO channel estimation workbench.
//!
//! This crate provides the algorithmic core:
//!
//! - [`channel`] — spherical-wavefront multipath channel model for uniform
//!   linear arrays, dataset sampling, and Rayleigh-distance bookkeeping.
//! - [`correlation`] — spatial antenna correlation in the angular domain
//!   (truncated-Laplacian power angle spectrum, closed form) and the distance
//!   domain (exponential offset profile, quadrature), with a Monte-Carlo
//!   estimator for cross-validation.
//! - [`pilot`] — pilot observation model and the classical estimators:
//!   LS, LMMSE, and orthogonal matching pursuit over polar (angle ×
//!   inverse-distance) steering dictionaries.
//! - [`tensor`] — a small reverse-mode autodiff engine carrying exactly the
//!   operator set the networks need, plus finite-difference checking.
//! - [`mssan`] — the multi-scale spatial attention network, its single-scale
//!   ablation, and a plain CNN baseline.
//! - [`metrics`] — NMSE, spectral efficiency, and the warmup + cosine
//!   learning-rate schedule.
//!
//! File formats, the CLI, and the training harness live in the companion
//! `nfmimo-cli` crate.

pub mod channel;
pub mod correlation;
pub mod metrics;
pub mod mssan;
pub mod pilot;
pub mod quadrature;
pub mod rng;
pub mod tensor;

/// Propagation speed used throughout, in m/s.
///
/// The conventional rounded value (not the exact SI constant): array spacing,
/// wavelengths, and the published Rayleigh-distance figures all assume
/// `c = 3e8`.
pub const SPEED_OF_LIGHT: f64 = 3.0e8;

/// Complex double-precision matrix used for channels, beams, and correlation.
pub type CMat = nalgebra::DMatrix<num_complex::Complex64>;
/// Complex double-precision column vector.
pub type CVec = nalgebra::DVector<num_complex::Complex64>;
