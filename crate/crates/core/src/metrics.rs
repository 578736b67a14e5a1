//! Estimation quality metrics and the training-rate schedule.

use thiserror::Error;

use crate::CMat;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("true channel has zero norm; NMSE undefined")]
    ZeroTrueChannel,
    #[error("estimate has zero norm; beamforming gain undefined")]
    DegenerateEstimate,
    #[error("noise power must be positive, got {0}")]
    NonPositiveNoise(f64),
    #[error("epoch {t} outside schedule range 1..={total}")]
    EpochOutOfRange { t: usize, total: usize },
    #[error("shape mismatch: true {0}x{1}, estimate {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),
}

/// Normalized squared error `||H - H_est||_F^2 / ||H||_F^2` for one channel.
///
/// Set-level figures average these per-sample ratios (the mean of ratios,
/// not the ratio of means).
pub fn nmse(h_true: &CMat, h_est: &CMat) -> Result<f64, MetricsError> {
    if h_true.shape() != h_est.shape() {
        let (a, b) = h_true.shape();
        let (c, d) = h_est.shape();
        return Err(MetricsError::ShapeMismatch(a, b, c, d));
    }
    let denom = h_true.norm_squared();
    if denom == 0.0 {
        return Err(MetricsError::ZeroTrueChannel);
    }
    Ok((h_true - h_est).norm_squared() / denom)
}

/// Decibel form of a linear NMSE ratio.
pub fn nmse_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

/// Downlink rate proxy under maximum-ratio transmission with the estimated
/// channel: `log2(1 + tr(H_est H^H H H_est^H) / (sigma^2 tr(H_est H_est^H)))`.
///
/// The numerator trace equals `||H H_est^H||_F^2`, so no four-factor product
/// is formed. A zero estimate leaves the beamforming direction undefined and
/// is rejected rather than scored.
pub fn spectral_efficiency(h_true: &CMat, h_est: &CMat, sigma2: f64) -> Result<f64, MetricsError> {
    if h_true.shape() != h_est.shape() {
        let (a, b) = h_true.shape();
        let (c, d) = h_est.shape();
        return Err(MetricsError::ShapeMismatch(a, b, c, d));
    }
    if !(sigma2 > 0.0) {
        return Err(MetricsError::NonPositiveNoise(sigma2));
    }
    let est_power = h_est.norm_squared();
    if est_power == 0.0 {
        return Err(MetricsError::DegenerateEstimate);
    }
    let gain = (h_true * h_est.adjoint()).norm_squared();
    Ok((1.0 + gain / (sigma2 * est_power)).log2())
}

/// Learning rate at epoch `t` (1-based) of a `total`-epoch run with peak
/// rate `gamma0`: linear warmup `gamma0 / (6 - t)` through epoch 5, then
/// cosine annealing `(gamma0 / 2)(1 + cos((t - 5) pi / (total - 4)))`.
///
/// The branch handoff carries a small jump of
/// `(gamma0 / 2)(1 - cos(pi / (total - 4)))` by construction.
pub fn lr_schedule(t: usize, gamma0: f64, total: usize) -> Result<f64, MetricsError> {
    if t < 1 || t > total {
        return Err(MetricsError::EpochOutOfRange { t, total });
    }
    if t <= 5 {
        Ok(gamma0 / (6 - t) as f64)
    } else {
        let x = (t - 5) as f64 * std::f64::consts::PI / (total - 4) as f64;
        Ok(gamma0 / 2.0 * (1.0 + x.cos()))
    }
}
