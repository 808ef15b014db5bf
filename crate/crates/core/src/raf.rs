//! Pearson residuals, residual adjustment functions (RAF) and the
//! weighted-likelihood weight function.
//!
//! The residual compares a Wrapped Normal kernel density estimate `f̂_n`
//! against the model smoothed by the same kernel, `m̂ = WN(μ, (1+h)Σ)`:
//!
//! ```text
//! δ(y) = f̂_n(y) / m̂(y) − 1,        w(δ) = [A(δ) + 1]⁺ / (δ + 1)
//! ```
//!
//! Because the kernel covariance is `hΣ`, the bandwidth `h` is scale free.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::wrapped::{AngleVector, LatticeGrid, WrappedKde, WrappedNormal, WrappedNormalParams};

/// Smallest value a Pearson residual is allowed to take.
pub const RESIDUAL_FLOOR: f64 = -1.0 + 1e-15;

/// Below this τ the GKL RAF is evaluated as its limit `A(δ) = δ`.
const GKL_LIMIT_TAU: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RafFamily {
    /// Generalized Kullback-Leibler, `A(δ) = log(τδ + 1) / τ`, `0 ≤ τ ≤ 1`.
    Gkl,
    /// Power divergence, `A(δ) = τ((δ + 1)^{1/τ} − 1)`, or `log(δ + 1)`
    /// when `τ = ∞`.
    Pdm,
}

/// A residual adjustment function together with its tuning constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RafSpec {
    family: RafFamily,
    tau: f64,
}

impl RafSpec {
    pub fn new(family: RafFamily, tau: f64) -> Result<Self> {
        match family {
            RafFamily::Gkl => Self::gkl(tau),
            RafFamily::Pdm => Self::pdm(tau),
        }
    }

    pub fn gkl(tau: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::InvalidTau(tau));
        }
        Ok(Self {
            family: RafFamily::Gkl,
            tau,
        })
    }

    /// `tau = f64::INFINITY` selects the logarithmic limit.
    pub fn pdm(tau: f64) -> Result<Self> {
        if tau.is_nan() || tau <= 0.0 {
            return Err(Error::InvalidTau(tau));
        }
        Ok(Self {
            family: RafFamily::Pdm,
            tau,
        })
    }

    pub fn family(&self) -> RafFamily {
        self.family
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }
}

/// `A(δ)`.
pub fn raf_value(delta: f64, spec: &RafSpec) -> Result<f64> {
    let tau = spec.tau;
    match spec.family {
        RafFamily::Gkl => {
            if tau < GKL_LIMIT_TAU {
                return Ok(delta);
            }
            let arg = tau * delta + 1.0;
            if arg.is_nan() || arg <= 0.0 {
                return Err(Error::DomainError { delta });
            }
            Ok(arg.ln() / tau)
        }
        RafFamily::Pdm => {
            let base = delta + 1.0;
            if base.is_nan() || base <= 0.0 {
                return Err(Error::DomainError { delta });
            }
            if tau.is_infinite() {
                Ok(base.ln())
            } else {
                Ok(tau * (base.powf(1.0 / tau) - 1.0))
            }
        }
    }
}

/// `w(δ) = [A(δ) + 1]⁺ / (δ + 1)`, clamped to `[0, 1]`.
pub fn weight(delta: f64, spec: &RafSpec) -> Result<f64> {
    if delta.is_nan() || delta < -1.0 {
        return Err(Error::DomainError { delta });
    }
    if delta.is_infinite() {
        return Ok(infinite_residual_weight(spec));
    }
    let delta = delta.max(RESIDUAL_FLOOR);
    let num = (raf_value(delta, spec)? + 1.0).max(0.0);
    let w = num / (delta + 1.0);
    Ok(if w.is_nan() { 1.0 } else { w.clamp(0.0, 1.0) })
}

// Residuals overflow to +∞ for points far outside the model's support.
fn infinite_residual_weight(spec: &RafSpec) -> f64 {
    let unbounded = match spec.family {
        RafFamily::Gkl => spec.tau < GKL_LIMIT_TAU,
        RafFamily::Pdm => spec.tau <= 1.0,
    };
    if unbounded {
        1.0
    } else {
        0.0
    }
}

/// Evaluates Pearson residuals of one parameter value against one sample.
///
/// Built once per W-step: the kernel density estimate and the smoothed
/// model share the lattice and the whitening by the current Σ.
#[derive(Debug, Clone)]
pub struct ResidualModel {
    kde: WrappedKde,
    smoothed: WrappedNormal,
}

impl ResidualModel {
    pub fn new(
        data: &[AngleVector],
        params: &WrappedNormalParams,
        h: f64,
        grid: &LatticeGrid,
    ) -> Result<Self> {
        let kde = WrappedKde::new(data, &params.sigma, h, grid)?;
        let smoothed = WrappedNormal::new(&params.smoothed(h)?, grid)?;
        Ok(Self { kde, smoothed })
    }

    pub fn residual(&self, y: &AngleVector) -> Result<f64> {
        let log_ratio = self.kde.log_density(y)? - self.smoothed.log_pdf(y)?;
        Ok((log_ratio.exp() - 1.0).max(RESIDUAL_FLOOR))
    }

    /// Residuals at many points, evaluated in parallel, order preserved.
    pub fn residuals(&self, ys: &[AngleVector]) -> Result<Vec<f64>> {
        ys.par_iter().map(|y| self.residual(y)).collect()
    }
}

/// `δ_n(y) = f̂_n(y) / m̂(y) − 1`, floored at `−1 + 1e−15`.
pub fn pearson_residual(
    y: &AngleVector,
    data: &[AngleVector],
    params: &WrappedNormalParams,
    h: f64,
    grid: &LatticeGrid,
) -> Result<f64> {
    ResidualModel::new(data, params, h, grid)?.residual(y)
}

/// The W-step: one weight per observation.
pub fn weights_for_sample(
    data: &[AngleVector],
    params: &WrappedNormalParams,
    h: f64,
    spec: &RafSpec,
    grid: &LatticeGrid,
) -> Result<Vec<f64>> {
    let model = ResidualModel::new(data, params, h, grid)?;
    model
        .residuals(data)?
        .into_iter()
        .map(|d| weight(d, spec))
        .collect()
}

/// Reference configuration for bandwidth calibration.
///
/// The surrogate model is the standard normal in `dim` dimensions with a
/// fraction `contamination` of point mass at `sd_distance` standard
/// deviations along every coordinate. Model and contaminated density are
/// both smoothed by the `N(0, hI)` kernel; the calibrated `h` is the largest
/// one for which the outlying mass still gets weight at most
/// `target_weight`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTarget {
    pub target_weight: f64,
    pub sd_distance: f64,
    pub contamination: f64,
    pub dim: usize,
}

impl Default for CalibrationTarget {
    fn default() -> Self {
        Self {
            target_weight: 0.12,
            sd_distance: 3.0,
            contamination: 0.20,
            dim: 1,
        }
    }
}

impl CalibrationTarget {
    pub fn with_dim(dim: usize) -> Self {
        Self {
            dim,
            ..Self::default()
        }
    }
}

pub const BANDWIDTH_MIN: f64 = 1e-6;
pub const BANDWIDTH_MAX: f64 = 1e3;

/// Pearson residual of the surrogate at the outlying point for bandwidth `h`.
pub fn surrogate_residual(h: f64, target: &CalibrationTarget) -> f64 {
    let d = target.dim as f64;
    let eps = target.contamination;
    let s2 = target.sd_distance * target.sd_distance;
    // log[φ_d(0; hI) / φ_d(s·1; (1+h)I)]
    let log_ratio = 0.5 * d * ((1.0 + h) / h).ln() + 0.5 * d * s2 / (1.0 + h);
    (1.0 - eps) + eps * log_ratio.exp() - 1.0
}

pub fn surrogate_weight(spec: &RafSpec, h: f64, target: &CalibrationTarget) -> Result<f64> {
    weight(surrogate_residual(h, target), spec)
}

/// Largest `h` in `[1e−6, 1e3]` whose surrogate outlier weight does not
/// exceed the target, located by bisection on `log h` to `1e−6` relative.
pub fn calibrate_bandwidth(spec: &RafSpec, target: &CalibrationTarget) -> Result<f64> {
    if !(target.target_weight > 0.0 && target.target_weight < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "target weight {} outside (0, 1)",
            target.target_weight
        )));
    }
    if !(target.sd_distance > 0.0) {
        return Err(Error::InvalidConfig("sd distance must be positive".into()));
    }
    if !(target.contamination > 0.0 && target.contamination < 1.0) {
        return Err(Error::InvalidConfig(
            "contamination must lie in (0, 1)".into(),
        ));
    }
    if target.dim == 0 {
        return Err(Error::InvalidConfig("dimension must be positive".into()));
    }
    let over = |h: f64| -> Result<bool> {
        Ok(surrogate_weight(spec, h, target)? > target.target_weight)
    };
    if over(BANDWIDTH_MIN)? {
        return Err(Error::NoSolution);
    }
    if !over(BANDWIDTH_MAX)? {
        return Ok(BANDWIDTH_MAX);
    }
    let (mut lo, mut hi) = (BANDWIDTH_MIN, BANDWIDTH_MAX);
    while hi / lo - 1.0 > 1e-6 {
        let mid = (lo * hi).sqrt();
        if over(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(lo)
}
