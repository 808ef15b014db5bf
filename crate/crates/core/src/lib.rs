//! Robust estimation of the multivariate Wrapped Normal distribution on the
//! p-torus.
//!
//! Observations are angle vectors in `(0, 2π]^p`. The model is the
//! component-wise wrapping of a p-variate normal, fitted with a
//! classification EM algorithm whose M-step can use weighted-likelihood
//! weights built from Pearson residuals, so that observations the model
//! cannot explain are downweighted.
//!
//! Module map:
//! - [`mvn`]: multivariate normal density, sampling and Cholesky helpers.
//! - [`wrapped`]: the Wrapped Normal on the torus, lattice sums, kernel
//!   density estimate and posterior wrapping probabilities.
//! - [`raf`]: Pearson residuals, residual adjustment functions, weights and
//!   bandwidth calibration.
//! - [`estimator`]: CEM and weighted CEM, bootstrap root search, root
//!   selection and the weighted likelihood-ratio statistic.
//! - [`simstudy`]: the contamination Monte Carlo harness.

pub mod error;
pub mod estimator;
pub mod mvn;
pub mod raf;
pub mod rng;
pub mod simstudy;
pub mod wrapped;

pub use error::{Error, Result};
pub use estimator::{
    bootstrap_root_search, cem_fit, fitted_probability, init_params, wcem_fit, weighted_lrt,
    Bandwidth, FitConfig, FitResult, RootSet,
};
pub use mvn::{chol, mvn_logpdf, mvn_sample, CholeskyFactor, CovMatrix, EuclideanVector};
pub use raf::{
    calibrate_bandwidth, pearson_residual, raf_value, weight, weights_for_sample,
    CalibrationTarget, RafFamily, RafSpec,
};
pub use rng::RandomSource;
pub use wrapped::{
    classify_wrapping, posterior_wrapping, wn_kde_logpdf, wn_logpdf, wn_sample,
    wn_smoothed_logpdf, AngleVector, LatticeGrid, WrappedNormal, WrappedNormalParams,
    WrappingCoefficients,
};
