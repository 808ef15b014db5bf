//! Multivariate normal primitives shared by every lattice sum.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// A point of R^p. Unwrapped angles live here, in radians.
pub type EuclideanVector = DVector<f64>;

const SYMMETRY_TOL: f64 = 1e-12;
const MAX_CONDITION: f64 = 1e12;

/// Lower-triangular factor `L` with `S = L Lᵀ`, plus `log det S`.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor {
    lower: DMatrix<f64>,
    log_det: f64,
}

impl CholeskyFactor {
    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Overwrites `v` with `L⁻¹ v` by forward substitution.
    pub fn whiten_in_place(&self, v: &mut [f64]) {
        let p = self.dim();
        debug_assert_eq!(v.len(), p);
        for i in 0..p {
            let mut acc = v[i];
            for k in 0..i {
                acc -= self.lower[(i, k)] * v[k];
            }
            v[i] = acc / self.lower[(i, i)];
        }
    }

    /// `dᵀ S⁻¹ d`.
    pub fn mahalanobis_sq(&self, d: &[f64]) -> f64 {
        let mut z = d.to_vec();
        self.whiten_in_place(&mut z);
        z.iter().map(|v| v * v).sum()
    }

    /// `S⁻¹ B`.
    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let y = self
            .lower
            .solve_lower_triangular(b)
            .expect("factor has a nonzero diagonal");
        self.lower
            .transpose()
            .solve_upper_triangular(&y)
            .expect("factor has a nonzero diagonal")
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.lower * self.lower.transpose()
    }
}

/// Cholesky factorization of a symmetric matrix.
///
/// Fails with [`Error::NotPositiveDefinite`] when a pivot is nonpositive or
/// the condition number exceeds `1e12`; near-singular inputs are never
/// regularized here.
pub fn chol(s: &DMatrix<f64>) -> Result<CholeskyFactor> {
    if !s.is_square() {
        return Err(Error::DimMismatch {
            expected: s.nrows(),
            found: s.ncols(),
        });
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let factor = nalgebra::Cholesky::new(s.clone()).ok_or(Error::NotPositiveDefinite)?;
    let lower = factor.unpack();
    if lower.diagonal().iter().any(|d| *d <= 0.0 || !d.is_finite()) {
        return Err(Error::NotPositiveDefinite);
    }
    let eig = s.clone().symmetric_eigenvalues();
    let (lo, hi) = eig
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(*v), hi.max(*v))
        });
    if lo <= 0.0 || hi / lo > MAX_CONDITION {
        return Err(Error::NotPositiveDefinite);
    }
    let log_det = 2.0 * lower.diagonal().iter().map(|d| d.ln()).sum::<f64>();
    Ok(CholeskyFactor { lower, log_det })
}

/// Symmetric positive-definite covariance with its Cholesky factor cached.
#[derive(Debug, Clone)]
pub struct CovMatrix {
    matrix: DMatrix<f64>,
    factor: CholeskyFactor,
}

impl PartialEq for CovMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.matrix == other.matrix
    }
}

impl CovMatrix {
    /// Validates symmetry (relative tolerance `1e-12`) and positive
    /// definiteness. The stored matrix is the exact symmetrization.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::DimMismatch {
                expected: matrix.nrows(),
                found: matrix.ncols(),
            });
        }
        if matrix.nrows() == 0 {
            return Err(Error::DimMismatch {
                expected: 1,
                found: 0,
            });
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let scale = matrix.amax().max(f64::MIN_POSITIVE);
        let p = matrix.nrows();
        for i in 0..p {
            for j in 0..i {
                if (matrix[(i, j)] - matrix[(j, i)]).abs() > SYMMETRY_TOL * scale {
                    return Err(Error::NotSymmetric);
                }
            }
        }
        let matrix = (&matrix + matrix.transpose()) * 0.5;
        let factor = chol(&matrix)?;
        Ok(Self { matrix, factor })
    }

    pub fn from_row_slice(p: usize, entries: &[f64]) -> Result<Self> {
        if entries.len() != p * p {
            return Err(Error::DimMismatch {
                expected: p * p,
                found: entries.len(),
            });
        }
        Self::new(DMatrix::from_row_slice(p, p, entries))
    }

    pub fn identity(p: usize) -> Self {
        Self::new(DMatrix::identity(p, p)).expect("identity is SPD")
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn factor(&self) -> &CholeskyFactor {
        &self.factor
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[(i, j)]
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(&self.matrix * c)
    }

    pub fn max_abs_diff(&self, other: &CovMatrix) -> f64 {
        (&self.matrix - &other.matrix).amax()
    }

    pub fn correlation(&self, i: usize, j: usize) -> f64 {
        self.get(i, j) / (self.get(i, i) * self.get(j, j)).sqrt()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.matrix
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect()
    }
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimMismatch { expected, found })
    }
}

/// `log φ_p(x; μ, S)`.
pub fn mvn_logpdf(x: &EuclideanVector, mu: &EuclideanVector, s: &CovMatrix) -> Result<f64> {
    check_dim(s.dim(), x.len())?;
    check_dim(s.dim(), mu.len())?;
    let d: Vec<f64> = x.iter().zip(mu.iter()).map(|(a, b)| a - b).collect();
    let q = s.factor().mahalanobis_sq(&d);
    let p = s.dim() as f64;
    Ok(-0.5 * (p * TAU.ln() + s.factor().log_det() + q))
}

/// One draw `μ + L z` with `z` i.i.d. standard normal.
pub fn mvn_sample<R: Rng + ?Sized>(
    mu: &EuclideanVector,
    s: &CovMatrix,
    rng: &mut R,
) -> Result<EuclideanVector> {
    check_dim(s.dim(), mu.len())?;
    let z = DVector::from_fn(s.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
    Ok(mu + s.factor().lower() * z)
}
