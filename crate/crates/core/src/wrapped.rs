//! The Wrapped Normal distribution on the p-torus.
//!
//! The density at `y ∈ (0, 2π]^p` is the lattice sum
//! `Σ_j φ_p(y + 2πj; μ, Σ)` over `j ∈ {−J, …, J}^p`. Every density is
//! evaluated in log space with a running log-sum-exp: individual lattice
//! terms underflow long before their sum does.
//!
//! [`LatticeKernel`] does the heavy lifting. It whitens the displacement
//! `y − μ` once with the Cholesky factor of `Σ` and reuses the whitened
//! lattice shifts `L⁻¹ 2πj`, precomputed per covariance, for every term.

use std::f64::consts::TAU;
use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;

use crate::error::{Error, Result};
use crate::mvn::{mvn_sample, CholeskyFactor, CovMatrix, EuclideanVector};

/// Reduces an angle into `(0, 2π]`; an exact multiple of 2π maps to 2π.
pub fn wrap_angle(x: f64) -> f64 {
    let r = x.rem_euclid(TAU);
    if r == 0.0 {
        TAU
    } else {
        r
    }
}

/// Signed difference `a − b` reduced into `(−π, π]`.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    if d > std::f64::consts::PI {
        d - TAU
    } else {
        d
    }
}

/// A point of the torus, every coordinate in `(0, 2π]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleVector(DVector<f64>);

impl AngleVector {
    /// Validates that every coordinate already lies in `(0, 2π]`.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::DimMismatch {
                expected: 1,
                found: 0,
            });
        }
        for v in &values {
            if !v.is_finite() {
                return Err(Error::NonFinite);
            }
            if *v <= 0.0 || *v > TAU {
                return Err(Error::AngleOutOfRange(*v));
            }
        }
        Ok(Self(DVector::from_vec(values)))
    }

    /// Wraps arbitrary finite reals onto the torus.
    pub fn wrap<I: IntoIterator<Item = f64>>(values: I) -> Result<Self> {
        let values: Vec<f64> = values.into_iter().collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Self::new(values.into_iter().map(wrap_angle).collect())
    }

    pub fn from_euclidean(x: &EuclideanVector) -> Result<Self> {
        Self::wrap(x.iter().copied())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    /// `y + 2πj`.
    pub fn unwrap_with(&self, j: &WrappingCoefficients) -> EuclideanVector {
        DVector::from_iterator(
            self.dim(),
            self.0
                .iter()
                .zip(j.as_slice())
                .map(|(y, k)| y + TAU * f64::from(*k)),
        )
    }
}

/// Integer wrapping vector `j` with `x = y + 2πj`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct WrappingCoefficients(Vec<i32>);

impl WrappingCoefficients {
    pub fn new(j: Vec<i32>) -> Self {
        Self(j)
    }

    pub fn zero(p: usize) -> Self {
        Self(vec![0; p])
    }

    pub fn as_slice(&self) -> &[i32] {
        &self.0
    }
}

/// The truncated index set `{−J, …, J}^p`.
///
/// Elements are enumerated in lexicographic order, first coordinate most
/// significant, so index 0 is `(−J, …, −J)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeGrid {
    radius: u32,
    dim: usize,
    coeffs: Arc<[i32]>,
}

impl LatticeGrid {
    pub fn new(radius: i64, dim: usize) -> Result<Self> {
        if radius < 0 {
            return Err(Error::EmptyGrid(radius));
        }
        if dim == 0 {
            return Err(Error::DimMismatch {
                expected: 1,
                found: 0,
            });
        }
        let radius = u32::try_from(radius).map_err(|_| Error::EmptyGrid(radius))?;
        let side = 2 * radius as usize + 1;
        let count = side
            .checked_pow(dim as u32)
            .ok_or_else(|| Error::InvalidConfig("lattice grid too large".into()))?;
        let mut coeffs = Vec::with_capacity(count * dim);
        let mut digits = vec![0usize; dim];
        for _ in 0..count {
            coeffs.extend(digits.iter().map(|d| *d as i32 - radius as i32));
            for r in (0..dim).rev() {
                digits[r] += 1;
                if digits[r] < side {
                    break;
                }
                digits[r] = 0;
            }
        }
        Ok(Self {
            radius,
            dim,
            coeffs: coeffs.into(),
        })
    }

    pub fn radius(&self) -> u32 {
        self.radius
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coeffs.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn coefficient(&self, k: usize) -> &[i32] {
        &self.coeffs[k * self.dim..(k + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[i32]> {
        self.coeffs.chunks_exact(self.dim)
    }
}

const MAX_PRUNED_DIM: usize = 16;

/// Streaming `log Σ exp(v)`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LogSumExp {
    max: f64,
    sum: f64,
}

impl LogSumExp {
    pub(crate) fn new() -> Self {
        Self {
            max: f64::NEG_INFINITY,
            sum: 0.0,
        }
    }

    #[inline]
    pub(crate) fn push(&mut self, v: f64) {
        if v == f64::NEG_INFINITY {
            return;
        }
        if v <= self.max {
            self.sum += (v - self.max).exp();
        } else {
            self.sum = self.sum * (self.max - v).exp() + 1.0;
            self.max = v;
        }
    }

    pub(crate) fn value(&self) -> f64 {
        if self.sum == 0.0 {
            f64::NEG_INFINITY
        } else {
            self.max + self.sum.ln()
        }
    }
}

/// Zero-mean Wrapped Normal log-density evaluated at a displacement.
#[derive(Debug, Clone)]
pub struct LatticeKernel {
    factor: CholeskyFactor,
    shifts: Vec<f64>,
    dim: usize,
    log_norm: f64,
    radius: i64,
    lambda_max: f64,
}

/// Terms more than `e^{-PRUNE_LOG_GAP}` below the dominant one are skipped.
const PRUNE_LOG_GAP: f64 = 40.0;

impl LatticeKernel {
    pub fn new(sigma: &CovMatrix, grid: &LatticeGrid) -> Result<Self> {
        check_dim(sigma.dim(), grid.dim())?;
        let factor = sigma.factor().clone();
        let dim = sigma.dim();
        let mut shifts = Vec::with_capacity(grid.len() * dim);
        let mut buf = vec![0.0; dim];
        for j in grid.iter() {
            for (b, k) in buf.iter_mut().zip(j) {
                *b = TAU * f64::from(*k);
            }
            factor.whiten_in_place(&mut buf);
            shifts.extend_from_slice(&buf);
        }
        let log_norm = -0.5 * (dim as f64 * TAU.ln() + factor.log_det());
        let lambda_max = sigma.matrix().clone().symmetric_eigenvalues().max();
        Ok(Self {
            factor,
            shifts,
            dim,
            log_norm,
            radius: i64::from(grid.radius()),
            lambda_max,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Writes `L⁻¹ (y − center)` into `buf`.
    #[inline]
    fn whiten(&self, y: &[f64], center: &[f64], buf: &mut [f64]) {
        for ((b, a), c) in buf.iter_mut().zip(y).zip(center) {
            *b = a - c;
        }
        self.factor.whiten_in_place(buf);
    }

    #[inline]
    fn for_each_term(&self, base: &[f64], mut f: impl FnMut(f64)) {
        for shift in self.shifts.chunks_exact(self.dim) {
            let q: f64 = base
                .iter()
                .zip(shift)
                .map(|(b, s)| {
                    let z = b + s;
                    z * z
                })
                .sum();
            f(self.log_norm - 0.5 * q);
        }
    }

    /// `log φ_p(y + 2πj; center, Σ)` for every lattice element, in grid order.
    pub fn log_terms(&self, y: &[f64], center: &[f64]) -> Vec<f64> {
        let mut buf = vec![0.0; self.dim];
        self.whiten(y, center, &mut buf);
        let mut out = Vec::with_capacity(self.shifts.len() / self.dim);
        self.for_each_term(&buf, |t| out.push(t));
        out
    }

    #[inline]
    fn term(&self, base: &[f64], k: usize) -> f64 {
        let shift = &self.shifts[k * self.dim..(k + 1) * self.dim];
        let q: f64 = base
            .iter()
            .zip(shift)
            .map(|(b, s)| {
                let z = b + s;
                z * z
            })
            .sum();
        self.log_norm - 0.5 * q
    }

    /// Adds the non-negligible lattice terms to `acc`.
    ///
    /// With `m(j)` the Mahalanobis norm of `y − center + 2πj`, every
    /// coordinate obeys `(d_r + 2πj_r)² ≤ λ_max m(j)`, so once the nearest
    /// image fixes a reference `m*`, only a box of `j` can come within the
    /// gap of it.
    fn accumulate(&self, y: &[f64], center: &[f64], buf: &mut [f64], acc: &mut LogSumExp) {
        let p = self.dim;
        let m = 2 * self.radius + 1;
        self.whiten(y, center, buf);
        let mut nearest = 0usize;
        for (a, c) in y.iter().zip(center) {
            let j = (-(a - c) / TAU).round().clamp(-(self.radius as f64), self.radius as f64) as i64;
            nearest = nearest * m as usize + (j + self.radius) as usize;
        }
        let best = self.term(buf, nearest);
        let bound = (self.lambda_max * (2.0 * (self.log_norm - best + PRUNE_LOG_GAP))).sqrt();
        let mut lo = [0i64; MAX_PRUNED_DIM];
        let mut hi = [0i64; MAX_PRUNED_DIM];
        if p > MAX_PRUNED_DIM || !bound.is_finite() {
            self.for_each_term(buf, |t| acc.push(t));
            return;
        }
        for r in 0..p {
            let d = y[r] - center[r];
            lo[r] = (((-bound - d) / TAU).ceil() as i64).max(-self.radius);
            hi[r] = (((bound - d) / TAU).floor() as i64).min(self.radius);
        }
        let mut j = lo;
        loop {
            let mut k = 0usize;
            for v in &j[..p] {
                k = k * m as usize + (v + self.radius) as usize;
            }
            acc.push(self.term(buf, k));
            let mut r = p;
            loop {
                if r == 0 {
                    return;
                }
                r -= 1;
                if j[r] < hi[r] {
                    j[r] += 1;
                    break;
                }
                j[r] = lo[r];
            }
        }
    }

    /// `log Σ_j φ_p(y + 2πj; center, Σ)`.
    pub fn log_density(&self, y: &[f64], center: &[f64]) -> f64 {
        let mut buf = vec![0.0; self.dim];
        let mut acc = LogSumExp::new();
        self.accumulate(y, center, &mut buf, &mut acc);
        acc.value()
    }
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimMismatch { expected, found })
    }
}

fn check_bandwidth(h: f64) -> Result<()> {
    if h > 0.0 && h.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidBandwidth(h))
    }
}

/// `Ω = (μ, Σ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WrappedNormalParams {
    pub mu: AngleVector,
    pub sigma: CovMatrix,
}

impl WrappedNormalParams {
    pub fn new(mu: AngleVector, sigma: CovMatrix) -> Result<Self> {
        check_dim(sigma.dim(), mu.dim())?;
        Ok(Self { mu, sigma })
    }

    pub fn dim(&self) -> usize {
        self.mu.dim()
    }

    /// Same mean, covariance `(1 + h) Σ`: the model convolved with a
    /// Wrapped Normal kernel of covariance `hΣ`.
    pub fn smoothed(&self, h: f64) -> Result<Self> {
        check_bandwidth(h)?;
        Ok(Self {
            mu: self.mu.clone(),
            sigma: self.sigma.scaled(1.0 + h)?,
        })
    }
}

/// A Wrapped Normal bound to a lattice, ready for repeated evaluation.
#[derive(Debug, Clone)]
pub struct WrappedNormal {
    params: WrappedNormalParams,
    grid: LatticeGrid,
    kernel: LatticeKernel,
}

impl WrappedNormal {
    pub fn new(params: &WrappedNormalParams, grid: &LatticeGrid) -> Result<Self> {
        let kernel = LatticeKernel::new(&params.sigma, grid)?;
        Ok(Self {
            params: params.clone(),
            grid: grid.clone(),
            kernel,
        })
    }

    pub fn params(&self) -> &WrappedNormalParams {
        &self.params
    }

    pub fn grid(&self) -> &LatticeGrid {
        &self.grid
    }

    fn check(&self, y: &AngleVector) -> Result<()> {
        check_dim(self.params.dim(), y.dim())
    }

    pub fn log_pdf(&self, y: &AngleVector) -> Result<f64> {
        self.check(y)?;
        Ok(self
            .kernel
            .log_density(y.as_slice(), self.params.mu.as_slice()))
    }

    /// Posterior probability of each lattice element, in grid order.
    pub fn posterior(&self, y: &AngleVector) -> Result<Vec<f64>> {
        self.check(y)?;
        let terms = self.kernel.log_terms(y.as_slice(), self.params.mu.as_slice());
        let mut acc = LogSumExp::new();
        terms.iter().for_each(|t| acc.push(*t));
        let total = acc.value();
        Ok(terms.into_iter().map(|t| (t - total).exp()).collect())
    }

    /// Most probable wrapping vector; ties go to the lexicographically
    /// smallest `j`.
    pub fn classify(&self, y: &AngleVector) -> Result<WrappingCoefficients> {
        let post = self.posterior(y)?;
        let mut best = 0;
        for (k, v) in post.iter().enumerate() {
            if *v > post[best] {
                best = k;
            }
        }
        Ok(WrappingCoefficients(self.grid.coefficient(best).to_vec()))
    }

    /// Draws `n` torus points, returned with their latent pre-wrap values.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        n: usize,
        rng: &mut R,
    ) -> Result<(Vec<AngleVector>, Vec<EuclideanVector>)> {
        sample_params(&self.params, n, rng)
    }
}

fn sample_params<R: Rng + ?Sized>(
    params: &WrappedNormalParams,
    n: usize,
    rng: &mut R,
) -> Result<(Vec<AngleVector>, Vec<EuclideanVector>)> {
    if n == 0 {
        return Err(Error::EmptyData);
    }
    let mu = params.mu.as_vector();
    let mut ys = Vec::with_capacity(n);
    let mut xs = Vec::with_capacity(n);
    for _ in 0..n {
        let x = mvn_sample(mu, &params.sigma, rng)?;
        ys.push(AngleVector::from_euclidean(&x)?);
        xs.push(x);
    }
    Ok((ys, xs))
}

/// Wrapped Normal kernel density estimate with kernel covariance `hΣ`.
#[derive(Debug, Clone)]
pub struct WrappedKde {
    points: Vec<f64>,
    dim: usize,
    log_n: f64,
    kernel: LatticeKernel,
}

impl WrappedKde {
    pub fn new(
        data: &[AngleVector],
        sigma: &CovMatrix,
        h: f64,
        grid: &LatticeGrid,
    ) -> Result<Self> {
        check_bandwidth(h)?;
        if data.is_empty() {
            return Err(Error::EmptyData);
        }
        let dim = sigma.dim();
        let mut points = Vec::with_capacity(data.len() * dim);
        for y in data {
            check_dim(dim, y.dim())?;
            points.extend_from_slice(y.as_slice());
        }
        let kernel = LatticeKernel::new(&sigma.scaled(h)?, grid)?;
        Ok(Self {
            points,
            dim,
            log_n: (data.len() as f64).ln(),
            kernel,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `log f̂_n(y)`.
    pub fn log_density(&self, y: &AngleVector) -> Result<f64> {
        check_dim(self.dim, y.dim())?;
        let mut buf = vec![0.0; self.dim];
        let mut acc = LogSumExp::new();
        for center in self.points.chunks_exact(self.dim) {
            self.kernel
                .accumulate(y.as_slice(), center, &mut buf, &mut acc);
        }
        Ok(acc.value() - self.log_n)
    }
}

pub fn wn_logpdf(
    y: &AngleVector,
    params: &WrappedNormalParams,
    grid: &LatticeGrid,
) -> Result<f64> {
    WrappedNormal::new(params, grid)?.log_pdf(y)
}

pub fn wn_sample<R: Rng + ?Sized>(
    params: &WrappedNormalParams,
    n: usize,
    rng: &mut R,
) -> Result<(Vec<AngleVector>, Vec<EuclideanVector>)> {
    sample_params(params, n, rng)
}

/// Log-density of the model smoothed by the kernel, i.e. WN(μ, (1+h)Σ).
pub fn wn_smoothed_logpdf(
    y: &AngleVector,
    params: &WrappedNormalParams,
    h: f64,
    grid: &LatticeGrid,
) -> Result<f64> {
    wn_logpdf(y, &params.smoothed(h)?, grid)
}

pub fn wn_kde_logpdf(
    y: &AngleVector,
    data: &[AngleVector],
    params: &WrappedNormalParams,
    h: f64,
    grid: &LatticeGrid,
) -> Result<f64> {
    WrappedKde::new(data, &params.sigma, h, grid)?.log_density(y)
}

pub fn posterior_wrapping(
    y: &AngleVector,
    params: &WrappedNormalParams,
    grid: &LatticeGrid,
) -> Result<Vec<f64>> {
    WrappedNormal::new(params, grid)?.posterior(y)
}

pub fn classify_wrapping(
    y: &AngleVector,
    params: &WrappedNormalParams,
    grid: &LatticeGrid,
) -> Result<WrappingCoefficients> {
    WrappedNormal::new(params, grid)?.classify(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mvn::mvn_logpdf;
    use crate::rng::seeded;
    use std::f64::consts::PI;

    fn params1(mu: f64, var: f64) -> WrappedNormalParams {
        WrappedNormalParams::new(
            AngleVector::new(vec![mu]).unwrap(),
            CovMatrix::from_diagonal(&[var]).unwrap(),
        )
        .unwrap()
    }

    fn grid(j: i64, p: usize) -> LatticeGrid {
        LatticeGrid::new(j, p).unwrap()
    }

    /// Direct lattice sum through `mvn_logpdf`, no shared whitening.
    fn brute_density(y: &[f64], mu: &[f64], sigma: &CovMatrix, j: i64) -> f64 {
        let g = grid(j, y.len());
        let mu = DVector::from_column_slice(mu);
        g.iter()
            .map(|k| {
                let x = DVector::from_iterator(
                    y.len(),
                    y.iter().zip(k).map(|(a, b)| a + TAU * f64::from(*b)),
                );
                mvn_logpdf(&x, &mu, sigma).unwrap().exp()
            })
            .sum()
    }

    #[test]
    fn wrap_rule() {
        assert_eq!(wrap_angle(0.0), TAU);
        assert_eq!(wrap_angle(TAU), TAU);
        assert!((wrap_angle(7.0) - (7.0 - TAU)).abs() < 1e-15);
        assert!((wrap_angle(-0.5) - (TAU - 0.5)).abs() < 1e-15);
        assert!(AngleVector::new(vec![0.0]).is_err());
        assert!(AngleVector::new(vec![TAU]).is_ok());
        assert_eq!(AngleVector::wrap([f64::NAN]), Err(Error::NonFinite));
    }

    #[test]
    fn grid_enumeration() {
        let g = grid(2, 3);
        assert_eq!(g.len(), 125);
        assert!(g.iter().all(|j| j.iter().all(|k| (-2..=2).contains(k))));
        assert_eq!(g.coefficient(0), &[-2, -2, -2]);
        assert_eq!(g.coefficient(1), &[-2, -2, -1]);
        assert_eq!(g.coefficient(124), &[2, 2, 2]);
        let all: Vec<_> = g.iter().map(|j| j.to_vec()).collect();
        let mut sorted = all.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(all, sorted);
        assert_eq!(grid(0, 2).len(), 1);
        assert_eq!(LatticeGrid::new(-1, 2), Err(Error::EmptyGrid(-1)));
    }

    #[test]
    fn logpdf_matches_large_j_reference() {
        let p = params1(PI, (PI / 8.0).powi(2));
        let y = AngleVector::new(vec![PI]).unwrap();
        let v3 = wn_logpdf(&y, &p, &grid(3, 1)).unwrap();
        let v50 = wn_logpdf(&y, &p, &grid(50, 1)).unwrap();
        let brute = brute_density(&[PI], &[PI], &p.sigma, 50).ln();
        assert!((v3 - v50).abs() < 1e-12);
        assert!((v50 - brute).abs() < 1e-12);
    }

    #[test]
    fn large_variance_is_uniform() {
        let p = params1(1.0, 100.0);
        let g = grid(50, 1);
        for y in [0.1, 1.0, 3.0, 5.5, TAU] {
            let v = wn_logpdf(&AngleVector::new(vec![y]).unwrap(), &p, &g)
                .unwrap()
                .exp();
            assert!((v - 1.0 / TAU).abs() < 1e-6, "{y}: {v}");
        }
    }

    #[test]
    fn diagonal_covariance_factorizes() {
        let mu = AngleVector::new(vec![0.5, 5.0]).unwrap();
        let sigma = CovMatrix::from_diagonal(&[0.3, 1.1]).unwrap();
        let p = WrappedNormalParams::new(mu, sigma).unwrap();
        let g2 = grid(3, 2);
        let g1 = grid(3, 1);
        let mut rng = seeded(3);
        for _ in 0..20 {
            let y = AngleVector::wrap([rng.random_range(0.0..TAU), rng.random_range(0.0..TAU)])
                .unwrap();
            let joint = wn_logpdf(&y, &p, &g2).unwrap();
            let a = wn_logpdf(
                &AngleVector::new(vec![y.as_slice()[0]]).unwrap(),
                &params1(0.5, 0.3),
                &g1,
            )
            .unwrap();
            let b = wn_logpdf(
                &AngleVector::new(vec![y.as_slice()[1]]).unwrap(),
                &params1(5.0, 1.1),
                &g1,
            )
            .unwrap();
            assert!((joint - a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn logpdf_nondecreasing_in_j() {
        let p = WrappedNormalParams::new(
            AngleVector::new(vec![0.3, 6.0]).unwrap(),
            CovMatrix::from_row_slice(2, &[2.0, 0.8, 0.8, 1.5]).unwrap(),
        )
        .unwrap();
        let y = AngleVector::new(vec![3.5, 2.0]).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for j in 0..6 {
            let v = wn_logpdf(&y, &p, &grid(j, 2)).unwrap();
            assert!(v >= prev - 1e-14);
            prev = v;
        }
    }

    #[test]
    fn sample_trigonometric_moment() {
        let var = (PI / 4.0).powi(2);
        let p = WrappedNormalParams::new(
            AngleVector::wrap([0.0]).unwrap(),
            CovMatrix::from_diagonal(&[var]).unwrap(),
        )
        .unwrap();
        assert_eq!(p.mu.as_slice(), &[TAU]);
        let mut rng = seeded(9);
        let (ys, xs) = wn_sample(&p, 100_000, &mut rng).unwrap();
        let (c, s) = ys.iter().fold((0.0, 0.0), |(c, s), y| {
            (c + y.as_slice()[0].cos(), s + y.as_slice()[0].sin())
        });
        let rho = (c * c + s * s).sqrt() / ys.len() as f64;
        assert!((rho - (-var / 2.0).exp()).abs() < 0.01);
        for (y, x) in ys.iter().zip(&xs) {
            assert_eq!(y.as_slice()[0], wrap_angle(x[0]));
        }
    }

    #[test]
    fn sample_concentrated_and_reproducible() {
        let p = params1(2.0, 1e-8);
        let (ys, _) = wn_sample(&p, 500, &mut seeded(4)).unwrap();
        assert!(ys
            .iter()
            .all(|y| angle_diff(y.as_slice()[0], 2.0).abs() < 1e-3));
        let (again, _) = wn_sample(&p, 500, &mut seeded(4)).unwrap();
        assert_eq!(ys, again);
        assert_eq!(wn_sample(&p, 0, &mut seeded(4)), Err(Error::EmptyData));
    }

    #[test]
    fn smoothed_density_identities() {
        let g = grid(3, 1);
        let y = AngleVector::new(vec![2.5]).unwrap();
        let p = params1(1.0, 0.4);
        let a = wn_smoothed_logpdf(&y, &p, 1e-12, &g).unwrap();
        let b = wn_logpdf(&y, &p, &g).unwrap();
        assert!((a - b).abs() < 1e-9);
        let p = params1(1.0, 1.0);
        let a = wn_smoothed_logpdf(&y, &p, 1.0, &g).unwrap();
        let b = wn_logpdf(&y, &params1(1.0, 2.0), &g).unwrap();
        assert!((a - b).abs() < 1e-14);
        assert_eq!(
            wn_smoothed_logpdf(&y, &p, 0.0, &g),
            Err(Error::InvalidBandwidth(0.0))
        );
    }

    #[test]
    fn smoothed_density_matches_grid_convolution() {
        // ∫ WN(t; μ, Σ) WN(y − t; 0, hΣ) dt on a 512² periodic grid
        let sigma = CovMatrix::from_row_slice(2, &[0.5, 0.2, 0.2, 0.3]).unwrap();
        let p = WrappedNormalParams::new(AngleVector::new(vec![1.0, 5.0]).unwrap(), sigma)
            .unwrap();
        let h = 0.4;
        let g = grid(3, 2);
        let model = WrappedNormal::new(&p, &g).unwrap();
        let kern = LatticeKernel::new(&p.sigma.scaled(h).unwrap(), &g).unwrap();
        let m = 512;
        let step = TAU / m as f64;
        let model_vals: Vec<f64> = (0..m * m)
            .map(|k| {
                let t = AngleVector::new(vec![
                    (k / m + 1) as f64 * step,
                    (k % m + 1) as f64 * step,
                ])
                .unwrap();
                model.log_pdf(&t).unwrap().exp()
            })
            .collect();
        for y in [[1.2, 4.9], [3.0, 0.5], [6.0, 6.0]] {
            let mut total = 0.0;
            for (k, mv) in model_vals.iter().enumerate() {
                let t = [(k / m + 1) as f64 * step, (k % m + 1) as f64 * step];
                total += mv * kern.log_density(&y, &t).exp();
            }
            total *= step * step;
            let yv = AngleVector::new(y.to_vec()).unwrap();
            let smoothed = wn_smoothed_logpdf(&yv, &p, h, &g).unwrap().exp();
            assert!((total - smoothed).abs() < 1e-3, "{y:?}: {total} vs {smoothed}");
        }
    }

    #[test]
    fn kde_single_point_and_symmetry() {
        let g = grid(3, 1);
        let y1 = AngleVector::new(vec![2.0]).unwrap();
        let var = (PI / 8.0).powi(2);
        // hΣ = (π/8)² with h = 1
        let p = params1(1.0, var);
        let kde = wn_kde_logpdf(&y1, std::slice::from_ref(&y1), &p, 1.0, &g).unwrap();
        let own = wn_logpdf(&y1, &params1(2.0, var), &g).unwrap();
        assert!((kde - own).abs() < 1e-14);

        let p = params1(1.0, 1.0);
        let at = AngleVector::new(vec![3.0]).unwrap();
        let data = [
            AngleVector::new(vec![2.5]).unwrap(),
            AngleVector::new(vec![3.5]).unwrap(),
        ];
        let two = wn_kde_logpdf(&at, &data, &p, 1.0, &g).unwrap();
        let one = wn_kde_logpdf(&at, &data[..1], &p, 1.0, &g).unwrap();
        assert!((two - one).abs() < 1e-12);
        assert_eq!(
            wn_kde_logpdf(&at, &[], &p, 1.0, &g),
            Err(Error::EmptyData)
        );
    }

    #[test]
    fn posterior_properties() {
        let g = grid(3, 1);
        let p = params1(1.0, 1e-6);
        let post = posterior_wrapping(&AngleVector::new(vec![1.0001]).unwrap(), &p, &g).unwrap();
        assert!((post[3] - 1.0).abs() < 1e-12);

        let p = params1(PI, (PI / 2.0).powi(2));
        let y = AngleVector::new(vec![0.1]).unwrap();
        let post = posterior_wrapping(&y, &p, &g).unwrap();
        assert!((post.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let total = brute_density(&[0.1], &[PI], &p.sigma, 50);
        let g50 = grid(50, 1);
        for (k, j) in g.iter().enumerate() {
            let idx = (j[0] + 50) as usize;
            let x = DVector::from_vec(vec![0.1 + TAU * f64::from(g50.coefficient(idx)[0])]);
            let oracle = mvn_logpdf(&x, &DVector::from_vec(vec![PI]), &p.sigma)
                .unwrap()
                .exp()
                / total;
            assert!((post[k] - oracle).abs() < 1e-10);
        }
    }

    #[test]
    fn classify_cases() {
        let g = grid(6, 1);
        let p = params1(2.0, 0.7);
        let y = AngleVector::new(vec![2.0]).unwrap();
        assert_eq!(classify_wrapping(&y, &p, &g).unwrap().as_slice(), &[0]);

        // oracle: enumerate the posterior and take the argmax
        let p = params1(TAU - 0.01, (PI / 8.0).powi(2));
        let y = AngleVector::new(vec![0.01]).unwrap();
        let best = (-6..=6)
            .max_by(|a: &i32, b: &i32| {
                let da = 0.01 + TAU * f64::from(*a) - (TAU - 0.01);
                let db = 0.01 + TAU * f64::from(*b) - (TAU - 0.01);
                db.abs().partial_cmp(&da.abs()).unwrap()
            })
            .unwrap();
        assert_eq!(best, 1);
        assert_eq!(classify_wrapping(&y, &p, &g).unwrap().as_slice(), &[best]);

        // y − μ = π and y − 2π − μ = −π are exactly tied
        let p = params1(PI, 1.0);
        let y = AngleVector::new(vec![TAU]).unwrap();
        let post = posterior_wrapping(&y, &p, &grid(3, 1)).unwrap();
        assert_eq!(post[2], post[3]);
        assert_eq!(
            classify_wrapping(&y, &p, &grid(3, 1)).unwrap().as_slice(),
            &[-1]
        );
    }

    #[test]
    fn classification_recovers_latent_wrapping() {
        let sigma = CovMatrix::from_row_slice(2, &[1.0, 0.5, 0.5, 1.0])
            .unwrap()
            .scaled((PI / 8.0).powi(2))
            .unwrap();
        let p = WrappedNormalParams::new(AngleVector::new(vec![0.1, 6.2]).unwrap(), sigma)
            .unwrap();
        let model = WrappedNormal::new(&p, &grid(3, 2)).unwrap();
        let (ys, xs) = model.sample(10_000, &mut seeded(21)).unwrap();
        let mut hits = 0;
        let mut wrapped = 0;
        for (y, x) in ys.iter().zip(&xs) {
            let truth: Vec<i32> = x
                .iter()
                .zip(y.as_slice())
                .map(|(a, b)| ((a - b) / TAU).round() as i32)
                .collect();
            if truth.iter().any(|k| *k != 0) {
                wrapped += 1;
            }
            if model.classify(y).unwrap().as_slice() == truth.as_slice() {
                hits += 1;
            }
        }
        assert!(wrapped > 1000);
        assert!(hits as f64 / 10_000.0 > 0.99);
    }

    #[test]
    fn classify_is_argmax_of_posterior() {
        let mut rng = seeded(17);
        let g = grid(3, 2);
        for _ in 0..100 {
            let a: f64 = rng.random_range(0.05..1.5);
            let b: f64 = rng.random_range(0.05..1.5);
            let c: f64 = rng.random_range(-0.9..0.9) * (a * b).sqrt();
            let p = WrappedNormalParams::new(
                AngleVector::wrap([rng.random_range(0.0..TAU), rng.random_range(0.0..TAU)])
                    .unwrap(),
                CovMatrix::from_row_slice(2, &[a, c, c, b]).unwrap(),
            )
            .unwrap();
            let y = AngleVector::wrap([rng.random_range(0.0..TAU), rng.random_range(0.0..TAU)])
                .unwrap();
            let post = posterior_wrapping(&y, &p, &g).unwrap();
            let arg = post
                .iter()
                .enumerate()
                .fold(0, |best, (k, v)| if *v > post[best] { k } else { best });
            assert_eq!(
                classify_wrapping(&y, &p, &g).unwrap().as_slice(),
                g.coefficient(arg)
            );
        }
    }
}
