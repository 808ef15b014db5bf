//! Classification EM and weighted classification EM for the Wrapped Normal.
//!
//! One iteration of the weighted algorithm:
//!
//! 1. E-step: posterior wrapping probabilities under the current `(μ, Σ)`.
//! 2. C-step: each observation takes its most probable wrapping vector `ĵᵢ`,
//!    giving the reconstruction `x̂ᵢ = yᵢ + 2πĵᵢ`.
//! 3. W-step: Pearson residuals against the current parameters give weights
//!    `wᵢ` (skipped, all ones, for plain CEM).
//! 4. M-step: weighted mean and covariance of the `x̂ᵢ`; the mean is reduced
//!    back onto the torus.
//!
//! Starting values come from circular summary statistics of random
//! subsamples; every start is then iterated on the full data
//! ([`bootstrap_root_search`]), and distinct solutions are ranked by their
//! fitted probability of a Pearson residual below −0.95.

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mvn::{CovMatrix, EuclideanVector};
use crate::raf::{calibrate_bandwidth, weights_for_sample, CalibrationTarget, RafSpec, ResidualModel};
use crate::rng;
use crate::wrapped::{
    angle_diff, wn_sample, AngleVector, LatticeGrid, WrappedNormal, WrappedNormalParams,
    WrappingCoefficients,
};

/// Residuals below this value mark regions where the model expects mass the
/// data do not have.
pub const EMPTY_REGION_RESIDUAL: f64 = -0.95;

/// Roots closer than this, in mean angle and covariance entries, are merged.
pub const ROOT_DEDUP_TOL: f64 = 1e-3;

const MIN_WEIGHT_MASS: f64 = 1e-8;
const RIDGE_FACTOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    Fixed(f64),
    /// Calibrated with [`calibrate_bandwidth`] against the config's target.
    Auto,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    /// Lattice truncation radius `J`.
    pub lattice_radius: u32,
    /// `None` runs plain CEM.
    pub raf: Option<RafSpec>,
    pub bandwidth: Bandwidth,
    pub calibration: CalibrationTarget,
    pub max_iter: usize,
    pub tol: f64,
    pub n_starts: usize,
    pub subsample_size: usize,
    /// Model draws used for each fitted probability.
    pub n_sim: usize,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            lattice_radius: 3,
            raf: None,
            bandwidth: Bandwidth::Auto,
            calibration: CalibrationTarget::default(),
            max_iter: 500,
            tol: 1e-6,
            n_starts: 15,
            subsample_size: 10,
            n_sim: 5000,
            seed: 0,
        }
    }
}

/// RAF used to calibrate the bandwidth for root selection when the fit
/// itself is unweighted.
pub fn reference_raf() -> RafSpec {
    RafSpec::gkl(0.1).expect("valid tau")
}

impl FitConfig {
    pub fn with_raf(raf: RafSpec) -> Self {
        Self {
            raf: Some(raf),
            ..Self::default()
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidConfig(format!("tol must be positive, got {}", self.tol)));
        }
        if self.n_starts == 0 {
            return Err(Error::InvalidConfig("n_starts must be at least 1".into()));
        }
        if self.subsample_size < dim + 1 {
            return Err(Error::InvalidConfig(format!(
                "subsample size {} too small for dimension {dim}",
                self.subsample_size
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidConfig("max_iter must be at least 1".into()));
        }
        if let Bandwidth::Fixed(h) = self.bandwidth {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::InvalidBandwidth(h));
            }
        }
        Ok(())
    }

    pub fn grid(&self, dim: usize) -> Result<LatticeGrid> {
        LatticeGrid::new(i64::from(self.lattice_radius), dim)
    }

    /// The kernel bandwidth, calibrated on demand.
    pub fn resolve_bandwidth(&self) -> Result<f64> {
        match self.bandwidth {
            Bandwidth::Fixed(h) => Ok(h),
            Bandwidth::Auto => {
                calibrate_bandwidth(&self.raf.unwrap_or_else(reference_raf), &self.calibration)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: WrappedNormalParams,
    pub weights: Vec<f64>,
    pub wrapping: Vec<WrappingCoefficients>,
    pub reconstructed: Vec<EuclideanVector>,
    pub iterations: usize,
    pub converged: bool,
    /// `Σ wᵢ log φ(x̂ᵢ; μ̂, Σ̂)` at the final classification.
    pub final_obj: f64,
    /// Kernel bandwidth used by the W-step, if any.
    pub bandwidth: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RootSet {
    pub roots: Vec<FitResult>,
    pub fitted_probabilities: Vec<f64>,
    pub selected: usize,
    /// Bandwidth the fitted probabilities were computed with.
    pub bandwidth: f64,
    /// Starts that converged, before deduplication.
    pub converged_starts: usize,
}

impl RootSet {
    pub fn selected_root(&self) -> &FitResult {
        &self.roots[self.selected]
    }
}

fn check_data(data: &[AngleVector]) -> Result<usize> {
    let first = data.first().ok_or(Error::EmptyData)?;
    let p = first.dim();
    for y in data {
        if y.dim() != p {
            return Err(Error::DimMismatch {
                expected: p,
                found: y.dim(),
            });
        }
    }
    Ok(p)
}

/// Circular means, `−2 log ρ̂` variances and circular-correlation
/// covariances.
pub fn init_params(data: &[AngleVector]) -> Result<WrappedNormalParams> {
    let p = check_data(data)?;
    let n = data.len();
    if n < 2 {
        return Err(Error::DegenerateSample(
            "need at least two observations".into(),
        ));
    }
    let nf = n as f64;
    let mut mu = Vec::with_capacity(p);
    let mut var = Vec::with_capacity(p);
    for r in 0..p {
        let (c, s) = data.iter().fold((0.0, 0.0), |(c, s), y| {
            let a = y.as_slice()[r];
            (c + a.cos(), s + a.sin())
        });
        let (c, s) = (c / nf, s / nf);
        let rho = (c * c + s * s).sqrt();
        if rho >= 1.0 - 1e-12 {
            return Err(Error::DegenerateSample(format!(
                "coordinate {r} has zero circular variance"
            )));
        }
        if rho <= 1e-12 {
            return Err(Error::DegenerateSample(format!(
                "coordinate {r} has zero mean resultant length"
            )));
        }
        mu.push(s.atan2(c));
        var.push(-2.0 * rho.ln());
    }
    let mu = AngleVector::wrap(mu)?;

    let centered: Vec<Vec<f64>> = data
        .iter()
        .map(|y| {
            y.as_slice()
                .iter()
                .zip(mu.as_slice())
                .map(|(a, m)| (a - m).sin())
                .collect()
        })
        .collect();
    let mut cov = nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_vec(var.clone()));
    for r in 0..p {
        for s in 0..r {
            let (mut num, mut srr, mut sss) = (0.0, 0.0, 0.0);
            for row in &centered {
                num += row[r] * row[s];
                srr += row[r] * row[r];
                sss += row[s] * row[s];
            }
            let den = (srr * sss).sqrt();
            let rho_c = if den > 0.0 { num / den } else { 0.0 };
            let v = rho_c * (var[r] * var[s]).sqrt();
            cov[(r, s)] = v;
            cov[(s, r)] = v;
        }
    }
    let sigma = spd_or_repair(cov)?;
    WrappedNormalParams::new(mu, sigma)
}

// Pairwise correlations need not form an SPD matrix for p ≥ 3.
fn spd_or_repair(cov: nalgebra::DMatrix<f64>) -> Result<CovMatrix> {
    if let Ok(c) = ridged(cov.clone()) {
        return Ok(c);
    }
    let p = cov.nrows();
    let mut shrunk = cov;
    for _ in 0..20 {
        for r in 0..p {
            for s in 0..p {
                if r != s {
                    shrunk[(r, s)] *= 0.5;
                }
            }
        }
        if let Ok(c) = CovMatrix::new(shrunk.clone()) {
            return Ok(c);
        }
    }
    let diag = nalgebra::DMatrix::from_diagonal(&shrunk.diagonal());
    CovMatrix::new(diag).map_err(|_| Error::DegenerateSample("no SPD starting covariance".into()))
}

/// Tries the matrix as is, then once with `1e−8 · trace/p` on the diagonal.
fn ridged(cov: nalgebra::DMatrix<f64>) -> Result<CovMatrix> {
    match CovMatrix::new(cov.clone()) {
        Ok(c) => Ok(c),
        Err(Error::NotPositiveDefinite) => {
            let p = cov.nrows();
            let ridge = RIDGE_FACTOR * cov.trace() / p as f64;
            let mut cov = cov;
            for i in 0..p {
                cov[(i, i)] += ridge;
            }
            CovMatrix::new(cov).map_err(|_| Error::SingularCovariance)
        }
        Err(e) => Err(e),
    }
}

/// The M-step: weighted mean and covariance of the reconstructed points.
pub fn weighted_moments(
    points: &[EuclideanVector],
    weights: &[f64],
) -> Result<(EuclideanVector, CovMatrix)> {
    let first = points.first().ok_or(Error::EmptyData)?;
    if weights.len() != points.len() {
        return Err(Error::DimMismatch {
            expected: points.len(),
            found: weights.len(),
        });
    }
    let p = first.len();
    let total: f64 = weights.iter().sum();
    if !(total >= MIN_WEIGHT_MASS * points.len() as f64) {
        return Err(Error::AllWeightsZero);
    }
    let mut mean = EuclideanVector::zeros(p);
    for (x, w) in points.iter().zip(weights) {
        mean.axpy(*w, x, 1.0);
    }
    mean /= total;
    let mut cov = nalgebra::DMatrix::zeros(p, p);
    for (x, w) in points.iter().zip(weights) {
        let d = x - &mean;
        cov.ger(*w, &d, &d, 1.0);
    }
    cov /= total;
    let cov = (&cov + cov.transpose()) * 0.5;
    match ridged(cov) {
        Ok(c) => Ok((mean, c)),
        Err(Error::NotSymmetric) | Err(Error::NonFinite) => Err(Error::SingularCovariance),
        Err(e) => Err(e),
    }
}

/// `Σ wᵢ log φ(xᵢ; mean, cov)`.
pub fn weighted_gaussian_objective(
    points: &[EuclideanVector],
    weights: &[f64],
    mean: &EuclideanVector,
    cov: &CovMatrix,
) -> Result<f64> {
    let mut total = 0.0;
    for (x, w) in points.iter().zip(weights) {
        total += w * crate::mvn::mvn_logpdf(x, mean, cov)?;
    }
    Ok(total)
}

/// Stopping quantity: `max(max_r √(2(1 − cos Δμ_r)), max|ΔΣ|)`.
pub fn parameter_change(a: &WrappedNormalParams, b: &WrappedNormalParams) -> f64 {
    let dmu = a
        .mu
        .as_slice()
        .iter()
        .zip(b.mu.as_slice())
        .map(|(x, y)| (2.0 * (1.0 - (x - y).cos())).max(0.0).sqrt())
        .fold(0.0, f64::max);
    dmu.max(a.sigma.max_abs_diff(&b.sigma))
}

fn run(
    data: &[AngleVector],
    start: &WrappedNormalParams,
    config: &FitConfig,
    weighting: Option<(RafSpec, f64)>,
) -> Result<FitResult> {
    let p = check_data(data)?;
    if start.dim() != p {
        return Err(Error::DimMismatch {
            expected: p,
            found: start.dim(),
        });
    }
    if data.len() <= p {
        return Err(Error::DegenerateSample(format!(
            "need more than {p} observations"
        )));
    }
    config.validate(p)?;
    let grid = config.grid(p)?;
    let n = data.len();

    let mut params = start.clone();
    let mut converged = false;
    let mut iterations = 0;
    let mut last = None;
    while iterations < config.max_iter {
        iterations += 1;
        let model = WrappedNormal::new(&params, &grid)?;
        let wrapping: Vec<WrappingCoefficients> = data
            .par_iter()
            .map(|y| model.classify(y))
            .collect::<Result<_>>()?;
        let reconstructed: Vec<EuclideanVector> = data
            .iter()
            .zip(&wrapping)
            .map(|(y, j)| y.unwrap_with(j))
            .collect();
        let weights = match &weighting {
            Some((spec, h)) => weights_for_sample(data, &params, *h, spec, &grid)?,
            None => vec![1.0; n],
        };
        let (mean, sigma) = weighted_moments(&reconstructed, &weights)?;
        let next = WrappedNormalParams::new(AngleVector::from_euclidean(&mean)?, sigma)?;
        let change = parameter_change(&params, &next);
        params = next;
        last = Some((wrapping, reconstructed, weights, mean));
        if change < config.tol {
            converged = true;
            break;
        }
    }
    let (wrapping, reconstructed, weights, mean) = last.expect("at least one iteration");
    let final_obj = weighted_gaussian_objective(&reconstructed, &weights, &mean, &params.sigma)?;
    Ok(FitResult {
        params,
        weights,
        wrapping,
        reconstructed,
        iterations,
        converged,
        final_obj,
        bandwidth: weighting.map(|(_, h)| h),
    })
}

/// Plain CEM: the W-step is skipped and every weight is one.
pub fn cem_fit(
    data: &[AngleVector],
    start: &WrappedNormalParams,
    config: &FitConfig,
) -> Result<FitResult> {
    run(data, start, config, None)
}

/// Weighted CEM; `config.raf` must be set.
pub fn wcem_fit(
    data: &[AngleVector],
    start: &WrappedNormalParams,
    config: &FitConfig,
) -> Result<FitResult> {
    let spec = config
        .raf
        .ok_or_else(|| Error::InvalidConfig("weighted CEM needs a RAF".into()))?;
    let h = config.resolve_bandwidth()?;
    run(data, start, config, Some((spec, h)))
}

fn fit_from(
    data: &[AngleVector],
    start: &WrappedNormalParams,
    config: &FitConfig,
) -> Result<FitResult> {
    match config.raf {
        Some(_) => wcem_fit(data, start, config),
        None => cem_fit(data, start, config),
    }
}

fn same_root(a: &WrappedNormalParams, b: &WrappedNormalParams) -> bool {
    let dmu = a
        .mu
        .as_slice()
        .iter()
        .zip(b.mu.as_slice())
        .map(|(x, y)| angle_diff(*x, *y).abs())
        .fold(0.0, f64::max);
    dmu < ROOT_DEDUP_TOL && a.sigma.max_abs_diff(&b.sigma) < ROOT_DEDUP_TOL
}

/// Fits from `n_starts` random subsample starts and ranks distinct roots.
///
/// Each subsample only seeds [`init_params`]; the iterations always use the
/// full data. Starts that fail or do not converge are dropped.
pub fn bootstrap_root_search(data: &[AngleVector], config: &FitConfig) -> Result<RootSet> {
    let p = check_data(data)?;
    config.validate(p)?;
    let n = data.len();
    if n < config.subsample_size {
        return Err(Error::InvalidConfig(format!(
            "{n} observations but subsample size {}",
            config.subsample_size
        )));
    }
    let bandwidth = config.resolve_bandwidth()?;
    let resolved = FitConfig {
        bandwidth: Bandwidth::Fixed(bandwidth),
        ..config.clone()
    };

    let mut draw = rng::stream(config.seed, 0);
    let subsets: Vec<Vec<usize>> = (0..config.n_starts)
        .map(|_| index::sample(&mut draw, n, config.subsample_size).into_vec())
        .collect();
    let fits: Vec<Result<FitResult>> = subsets
        .par_iter()
        .map(|idx| {
            let sub: Vec<AngleVector> = idx.iter().map(|i| data[*i].clone()).collect();
            let start = init_params(&sub)?;
            fit_from(data, &start, &resolved)
        })
        .collect();

    let converged: Vec<FitResult> = fits
        .into_iter()
        .filter_map(|r| r.ok())
        .filter(|r| r.converged)
        .collect();
    let converged_starts = converged.len();
    let mut roots: Vec<FitResult> = Vec::new();
    for fit in converged {
        if !roots.iter().any(|r| same_root(&r.params, &fit.params)) {
            roots.push(fit);
        }
    }
    if roots.is_empty() {
        return Err(Error::NoConvergedRoot);
    }

    let fitted_probabilities: Vec<f64> = roots
        .par_iter()
        .enumerate()
        .map(|(k, root)| {
            let mut rng = rng::stream(config.seed, 1 + k as u64);
            fitted_probability(root, data, &resolved, config.n_sim, &mut rng)
        })
        .collect::<Result<_>>()?;
    let selected = fitted_probabilities
        .iter()
        .enumerate()
        .fold(0, |best, (k, v)| {
            if *v < fitted_probabilities[best] {
                k
            } else {
                best
            }
        });
    Ok(RootSet {
        roots,
        fitted_probabilities,
        selected,
        bandwidth,
        converged_starts,
    })
}

/// Fraction of `n_sim` draws from the fitted model whose Pearson residual,
/// against the observed data, falls below −0.95.
pub fn fitted_probability<R: Rng + ?Sized>(
    root: &FitResult,
    data: &[AngleVector],
    config: &FitConfig,
    n_sim: usize,
    rng: &mut R,
) -> Result<f64> {
    if !root.converged {
        return Err(Error::InvalidConfig(
            "fitted probability needs a converged root".into(),
        ));
    }
    let p = check_data(data)?;
    let h = match root.bandwidth {
        Some(h) => h,
        None => config.resolve_bandwidth()?,
    };
    let grid = config.grid(p)?;
    let (sims, _) = wn_sample(&root.params, n_sim, rng)?;
    let residuals = ResidualModel::new(data, &root.params, h, &grid)?.residuals(&sims)?;
    let hits = residuals
        .iter()
        .filter(|d| **d < EMPTY_REGION_RESIDUAL)
        .count();
    Ok(hits as f64 / n_sim as f64)
}

/// `Λ(θ₀) = 2 Σ wᵢ [ℓ(θ̂; yᵢ) − ℓ(θ₀; yᵢ)]` with the weights frozen at the
/// fit. Returns the statistic only; the reference distribution is left to
/// the caller.
pub fn weighted_lrt(
    theta0: &WrappedNormalParams,
    fit: &FitResult,
    data: &[AngleVector],
    config: &FitConfig,
) -> Result<f64> {
    let p = check_data(data)?;
    if fit.weights.len() != data.len() {
        return Err(Error::DimMismatch {
            expected: data.len(),
            found: fit.weights.len(),
        });
    }
    let grid = config.grid(p)?;
    let fitted = WrappedNormal::new(&fit.params, &grid)?;
    let null = WrappedNormal::new(theta0, &grid)?;
    let mut total = 0.0;
    for (y, w) in data.iter().zip(&fit.weights) {
        total += w * (fitted.log_pdf(y)? - null.log_pdf(y)?);
    }
    Ok((2.0 * total).max(0.0))
}
