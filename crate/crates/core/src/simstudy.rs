//! Contamination Monte Carlo harness comparing CEM and weighted CEM.
//!
//! A trial draws a random correlation matrix with a fixed condition number,
//! turns it into `Σ = D^{1/2} R D^{1/2}` with `D = σI`, samples the latent
//! normal around `μ = 0`, shifts a fraction `ε` of the points by `k_ε` along
//! the eigenvector of the smallest eigenvalue of `Σ`, wraps, and fits both
//! estimators with the bootstrap root search. Each trial owns the random
//! stream `(seed, trial)`, so tables do not depend on scheduling.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{bootstrap_root_search, reference_raf, Bandwidth, FitConfig};
use crate::mvn::{mvn_sample, CovMatrix, EuclideanVector};
use crate::rng;
use crate::wrapped::AngleVector;

pub const STUDY_N: [usize; 3] = [50, 100, 500];
pub const STUDY_P: [usize; 2] = [2, 5];
pub const STUDY_EPS: [f64; 4] = [0.0, 0.05, 0.10, 0.20];
pub const STUDY_K_EPS: [f64; 3] = [PI / 4.0, PI / 2.0, PI];
pub const STUDY_SIGMA: [f64; 3] = [PI / 8.0, PI / 4.0, PI / 2.0];
pub const STUDY_CN: f64 = 20.0;

/// One cell of the simulation design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub n: usize,
    pub p: usize,
    pub eps: f64,
    pub k_eps: f64,
    pub sigma: f64,
    pub cn: f64,
    pub trials: usize,
    pub seed: u64,
}

impl Scenario {
    pub fn new(n: usize, p: usize, eps: f64, k_eps: f64, sigma: f64) -> Self {
        Self {
            n,
            p,
            eps,
            k_eps,
            sigma,
            cn: STUDY_CN,
            trials: 500,
            seed: 0,
        }
    }

    pub fn id(&self) -> String {
        format!(
            "n{}_p{}_eps{}_k{:.4}_s{:.4}",
            self.n, self.p, self.eps, self.k_eps, self.sigma
        )
    }

    pub fn outlier_count(&self) -> usize {
        outlier_count(self.eps, self.n)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 {
            return Err(Error::InvalidConfig("n and p must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.eps) {
            return Err(Error::InvalidConfig(format!("eps {} outside [0, 1)", self.eps)));
        }
        if !(self.k_eps > 0.0 && self.sigma > 0.0) {
            return Err(Error::InvalidConfig("k_eps and sigma must be positive".into()));
        }
        if !(self.cn >= 1.0) {
            return Err(Error::InvalidConfig(format!("condition number {} below 1", self.cn)));
        }
        Ok(())
    }

    /// Whether every field is one of the studied design values.
    pub fn in_study_grid(&self) -> bool {
        let near = |v: f64, set: &[f64]| set.iter().any(|s| (v - s).abs() < 1e-9);
        STUDY_N.contains(&self.n)
            && STUDY_P.contains(&self.p)
            && near(self.eps, &STUDY_EPS)
            && near(self.k_eps, &STUDY_K_EPS)
            && near(self.sigma, &STUDY_SIGMA)
            && (self.cn - STUDY_CN).abs() < 1e-9
    }
}

/// `floor(ε n)`, guarded against representation error such as `0.29 · 100`.
pub fn outlier_count(eps: f64, n: usize) -> usize {
    (eps * n as f64 + 1e-9).floor() as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Cem,
    Wcem,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Cem => "cem",
            Method::Wcem => "wcem",
        })
    }
}

/// One row of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub scenario: String,
    pub n: usize,
    pub p: usize,
    pub eps: f64,
    pub k_eps: f64,
    pub sigma: f64,
    pub cn: f64,
    pub trial: usize,
    pub method: Method,
    pub as_mu: f64,
    pub div_sigma: f64,
    pub iterations: usize,
    pub converged: bool,
    pub roots: usize,
    /// Mean final weight of the planted outliers.
    pub outlier_weight: Option<f64>,
    pub error: Option<String>,
}

fn sign_fixed(mut v: DVector<f64>) -> DVector<f64> {
    if let Some(first) = v.iter().copied().find(|x| *x != 0.0) {
        if first < 0.0 {
            v.neg_mut();
        }
    }
    v
}

/// Random correlation matrix whose unnormalized eigenvalues are log-spaced
/// between 1 and `cn`, rotated by a Haar orthogonal matrix.
///
/// Rescaling to unit diagonal moves the condition number away from `cn`;
/// the drift is not corrected.
pub fn random_correlation<R: Rng + ?Sized>(p: usize, cn: f64, rng: &mut R) -> Result<CovMatrix> {
    if p == 0 {
        return Err(Error::InvalidConfig("dimension must be positive".into()));
    }
    if !(cn >= 1.0) {
        return Err(Error::InvalidConfig(format!("condition number {cn} below 1")));
    }
    if p == 1 {
        return Ok(CovMatrix::identity(1));
    }
    let g = DMatrix::from_fn(p, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..p {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let lambda = DVector::from_fn(p, |k, _| cn.powf(k as f64 / (p - 1) as f64));
    let a = &q * DMatrix::from_diagonal(&lambda) * q.transpose();
    let d: Vec<f64> = a.diagonal().iter().map(|v| v.sqrt()).collect();
    let mut corr = DMatrix::from_fn(p, p, |i, j| a[(i, j)] / (d[i] * d[j]));
    for i in 0..p {
        corr[(i, i)] = 1.0;
        for j in 0..i {
            let v = 0.5 * (corr[(i, j)] + corr[(j, i)]);
            corr[(i, j)] = v;
            corr[(j, i)] = v;
        }
    }
    CovMatrix::new(corr)
}

/// `Σ = D^{1/2} R D^{1/2}` with `D = diag(σ 1_p)`, so `diag(Σ) = σ`.
pub fn scenario_covariance(r: &CovMatrix, sigma: f64) -> Result<CovMatrix> {
    let p = r.dim();
    let half = DMatrix::from_diagonal_element(p, p, sigma.sqrt());
    CovMatrix::new(&half * r.matrix() * &half)
}

/// Unit eigenvector of the smallest eigenvalue, first nonzero entry positive.
pub fn smallest_eigenvector(s: &CovMatrix) -> DVector<f64> {
    let eig = SymmetricEigen::new(s.matrix().clone());
    let (k, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |(bk, bv), (k, v)| {
            if *v < bv {
                (k, *v)
            } else {
                (bk, bv)
            }
        });
    sign_fixed(eig.eigenvectors.column(k).into_owned())
}

/// Shifts `floor(ε n)` random latent points by `k_ε` along the smallest
/// eigendirection of `Σ`, then wraps everything.
///
/// Returns the torus sample and the sorted outlier indices.
pub fn contaminate<R: Rng + ?Sized>(
    latent: &[EuclideanVector],
    sigma: &CovMatrix,
    eps: f64,
    k_eps: f64,
    rng: &mut R,
) -> Result<(Vec<AngleVector>, Vec<usize>)> {
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::InvalidConfig(format!("eps {eps} outside [0, 1)")));
    }
    let n = latent.len();
    let m = outlier_count(eps, n);
    let mut outliers = index::sample(rng, n, m).into_vec();
    outliers.sort_unstable();
    let shift = smallest_eigenvector(sigma) * k_eps;
    let mut shifted: Vec<EuclideanVector> = latent.to_vec();
    for i in &outliers {
        shifted[*i] += &shift;
    }
    let ys = shifted
        .iter()
        .map(AngleVector::from_euclidean)
        .collect::<Result<_>>()?;
    Ok((ys, outliers))
}

/// `AS(μ̂) = (1/p) Σ (1 − cos(μ̂_r − μ_r))`, in `[0, 2]`.
pub fn angle_separation(mu_hat: &[f64], mu_true: &[f64]) -> Result<f64> {
    if mu_hat.len() != mu_true.len() {
        return Err(Error::DimMismatch {
            expected: mu_true.len(),
            found: mu_hat.len(),
        });
    }
    let p = mu_true.len() as f64;
    Ok(mu_hat
        .iter()
        .zip(mu_true)
        .map(|(a, b)| 1.0 - (a - b).cos())
        .sum::<f64>()
        / p)
}

/// `Δ(Σ̂) = tr(Σ̂Σ⁻¹) − log|Σ̂Σ⁻¹| − p`.
pub fn cov_divergence(s_hat: &CovMatrix, s_true: &CovMatrix) -> Result<f64> {
    let p = s_true.dim();
    if s_hat.dim() != p {
        return Err(Error::DimMismatch {
            expected: p,
            found: s_hat.dim(),
        });
    }
    let trace = s_true.factor().solve(s_hat.matrix()).trace();
    let log_det = s_hat.factor().log_det() - s_true.factor().log_det();
    Ok(trace - log_det - p as f64)
}

fn failed(sc: &Scenario, trial: usize, method: Method, err: &Error) -> TrialOutcome {
    TrialOutcome {
        scenario: sc.id(),
        n: sc.n,
        p: sc.p,
        eps: sc.eps,
        k_eps: sc.k_eps,
        sigma: sc.sigma,
        cn: sc.cn,
        trial,
        method,
        as_mu: f64::NAN,
        div_sigma: f64::NAN,
        iterations: 0,
        converged: false,
        roots: 0,
        outlier_weight: None,
        error: Some(err.to_string()),
    }
}

/// Runs one trial; both methods see the same contaminated sample.
///
/// `config` must carry a resolved bandwidth and the weighted method's RAF.
pub fn run_trial(sc: &Scenario, config: &FitConfig, trial: usize) -> Vec<TrialOutcome> {
    let mut rng = rng::stream(sc.seed, trial as u64);
    let setup = (|| -> Result<_> {
        let r = random_correlation(sc.p, sc.cn, &mut rng)?;
        let sigma = scenario_covariance(&r, sc.sigma)?;
        let zero = DVector::zeros(sc.p);
        let latent: Vec<EuclideanVector> = (0..sc.n)
            .map(|_| mvn_sample(&zero, &sigma, &mut rng))
            .collect::<Result<_>>()?;
        let (data, outliers) = contaminate(&latent, &sigma, sc.eps, sc.k_eps, &mut rng)?;
        Ok((sigma, data, outliers))
    })();
    let fit_seed: u64 = rng.random();
    let (sigma, data, outliers) = match setup {
        Ok(v) => v,
        Err(e) => {
            return vec![
                failed(sc, trial, Method::Cem, &e),
                failed(sc, trial, Method::Wcem, &e),
            ]
        }
    };
    let mu_true = vec![0.0; sc.p];

    [Method::Cem, Method::Wcem]
        .into_iter()
        .map(|method| {
            let cfg = FitConfig {
                raf: match method {
                    Method::Cem => None,
                    Method::Wcem => Some(config.raf.unwrap_or_else(reference_raf)),
                },
                seed: fit_seed,
                ..config.clone()
            };
            let outcome = bootstrap_root_search(&data, &cfg).and_then(|set| {
                let root = set.selected_root();
                let as_mu = angle_separation(root.params.mu.as_slice(), &mu_true)?;
                let div_sigma = cov_divergence(&root.params.sigma, &sigma)?;
                let outlier_weight = (method == Method::Wcem && !outliers.is_empty()).then(|| {
                    outliers.iter().map(|i| root.weights[*i]).sum::<f64>() / outliers.len() as f64
                });
                Ok(TrialOutcome {
                    scenario: sc.id(),
                    n: sc.n,
                    p: sc.p,
                    eps: sc.eps,
                    k_eps: sc.k_eps,
                    sigma: sc.sigma,
                    cn: sc.cn,
                    trial,
                    method,
                    as_mu,
                    div_sigma,
                    iterations: root.iterations,
                    converged: root.converged,
                    roots: set.roots.len(),
                    outlier_weight,
                    error: None,
                })
            });
            outcome.unwrap_or_else(|e| failed(sc, trial, method, &e))
        })
        .collect()
}

/// All trials of a scenario in trial order, two rows per trial.
///
/// The bandwidth is resolved once up front; per-trial failures are
/// recorded in the rows rather than aborting the run.
pub fn run_scenario(sc: &Scenario, config: &FitConfig) -> Result<Vec<TrialOutcome>> {
    sc.validate()?;
    let wcem_raf = config.raf.unwrap_or_else(reference_raf);
    let resolved = FitConfig {
        raf: Some(wcem_raf),
        bandwidth: Bandwidth::Fixed(
            FitConfig {
                raf: Some(wcem_raf),
                ..config.clone()
            }
            .resolve_bandwidth()?,
        ),
        ..config.clone()
    };
    let rows: Vec<Vec<TrialOutcome>> = (0..sc.trials)
        .into_par_iter()
        .map(|t| run_trial(sc, &resolved, t))
        .collect();
    Ok(rows.into_iter().flatten().collect())
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    }
}

/// Per-method medians of the finite metrics of a results table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: Method,
    pub trials: usize,
    pub failures: usize,
    pub median_as_mu: f64,
    pub median_div_sigma: f64,
    pub mean_outlier_weight: Option<f64>,
}

pub fn summarize(outcomes: &[TrialOutcome], method: Method) -> MethodSummary {
    let rows: Vec<&TrialOutcome> = outcomes.iter().filter(|o| o.method == method).collect();
    let ok: Vec<&&TrialOutcome> = rows.iter().filter(|o| o.error.is_none()).collect();
    let mut as_mu: Vec<f64> = ok.iter().map(|o| o.as_mu).collect();
    let mut div: Vec<f64> = ok.iter().map(|o| o.div_sigma).collect();
    let ws: Vec<f64> = ok.iter().filter_map(|o| o.outlier_weight).collect();
    MethodSummary {
        method,
        trials: rows.len(),
        failures: rows.len() - ok.len(),
        median_as_mu: median(&mut as_mu),
        median_div_sigma: median(&mut div),
        mean_outlier_weight: (!ws.is_empty()).then(|| ws.iter().sum::<f64>() / ws.len() as f64),
    }
}
