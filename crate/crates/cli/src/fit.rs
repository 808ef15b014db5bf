//! `torwrap fit`: bootstrap root search on a data file and a JSON report.

use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use torwrap::{
    bootstrap_root_search, AngleVector, Bandwidth, CovMatrix, FitConfig, FitResult, RafSpec,
    WrappedNormal, WrappedNormalParams,
};

use crate::data::load_data;
use crate::{manifest, write_output, CliError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RafChoice {
    Gkl,
    Pdm,
    None,
}

/// Builds the RAF from `--raf` and `--tau`; `inf` is accepted for PDM.
pub fn raf_from_flags(raf: RafChoice, tau: f64) -> Result<Option<RafSpec>, CliError> {
    let spec = match raf {
        RafChoice::None => return Ok(None),
        RafChoice::Gkl => RafSpec::gkl(tau),
        RafChoice::Pdm => RafSpec::pdm(tau),
    };
    spec.map(Some)
        .map_err(|e| CliError::Usage(format!("--tau {tau}: {e}")))
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    /// CSV of angles, one observation per row.
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = RafChoice::Gkl)]
    pub raf: RafChoice,
    #[arg(long, default_value_t = 0.25)]
    pub tau: f64,
    /// Fixed kernel bandwidth; calibrated when absent.
    #[arg(long, conflicts_with = "auto_h")]
    pub h: Option<f64>,
    /// Calibrate the bandwidth (the default when --h is absent).
    #[arg(long)]
    pub auto_h: bool,
    /// Lattice truncation radius.
    #[arg(long = "J", default_value_t = 6)]
    pub lattice_radius: u32,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 15)]
    pub starts: usize,
    #[arg(long, default_value_t = 10)]
    pub subsample: usize,
    /// Model draws per fitted probability.
    #[arg(long, default_value_t = 5000)]
    pub n_sim: usize,
    /// Input angles are in degrees.
    #[arg(long)]
    pub degrees: bool,
    #[arg(long, env = "TORWRAP_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Report path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl FitArgs {
    pub fn config(&self) -> Result<FitConfig, CliError> {
        let bandwidth = match self.h {
            Some(h) if !(h > 0.0 && h.is_finite()) => {
                return Err(CliError::Usage(format!("--h {h}: must be positive")))
            }
            Some(h) => Bandwidth::Fixed(h),
            None => Bandwidth::Auto,
        };
        Ok(FitConfig {
            lattice_radius: self.lattice_radius,
            raf: raf_from_flags(self.raf, self.tau)?,
            bandwidth,
            max_iter: self.max_iter,
            tol: self.tol,
            n_starts: self.starts,
            subsample_size: self.subsample,
            n_sim: self.n_sim,
            seed: self.seed,
            ..FitConfig::default()
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RootReport {
    pub mu: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
    pub correlation: Vec<Vec<f64>>,
    pub fitted_probability: f64,
    /// `Σ log f(yᵢ; μ̂, Σ̂)` with the report's lattice radius.
    pub log_likelihood: f64,
    pub weighted_objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Omitted for unweighted fits, where every weight is one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

impl RootReport {
    pub fn params(&self) -> Result<WrappedNormalParams, CliError> {
        let p = self.mu.len();
        let flat: Vec<f64> = self.sigma.iter().flatten().copied().collect();
        let sigma = CovMatrix::from_row_slice(p, &flat).map_err(CliError::Model)?;
        let mu = AngleVector::new(self.mu.clone()).map_err(CliError::Model)?;
        WrappedNormalParams::new(mu, sigma).map_err(CliError::Model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub n: usize,
    pub p: usize,
    pub raf: Option<String>,
    pub tau: Option<f64>,
    pub bandwidth: f64,
    pub lattice_radius: u32,
    pub seed: u64,
    pub converged_starts: usize,
    pub selected: usize,
    pub roots: Vec<RootReport>,
}

impl FitReport {
    pub fn selected_root(&self) -> &RootReport {
        &self.roots[self.selected]
    }
}

fn root_report(
    fit: &FitResult,
    prob: f64,
    data: &[AngleVector],
    config: &FitConfig,
) -> Result<RootReport, CliError> {
    let sigma = &fit.params.sigma;
    let p = sigma.dim();
    let model = WrappedNormal::new(&fit.params, &config.grid(p).map_err(CliError::Model)?)
        .map_err(CliError::Model)?;
    let mut log_likelihood = 0.0;
    for y in data {
        log_likelihood += model.log_pdf(y).map_err(CliError::Model)?;
    }
    Ok(RootReport {
        mu: fit.params.mu.as_slice().to_vec(),
        sigma: sigma.to_rows(),
        correlation: (0..p)
            .map(|i| (0..p).map(|j| sigma.correlation(i, j)).collect())
            .collect(),
        fitted_probability: prob,
        log_likelihood,
        weighted_objective: fit.final_obj,
        iterations: fit.iterations,
        converged: fit.converged,
        weights: config.raf.map(|_| fit.weights.clone()),
    })
}

pub fn fit_report(data: &[AngleVector], config: &FitConfig) -> Result<FitReport, CliError> {
    let set = bootstrap_root_search(data, config).map_err(|e| match e {
        torwrap::Error::NoConvergedRoot => CliError::NoRoot,
        other => CliError::Model(other),
    })?;
    let roots = set
        .roots
        .iter()
        .zip(&set.fitted_probabilities)
        .map(|(fit, prob)| root_report(fit, *prob, data, config))
        .collect::<Result<_, _>>()?;
    Ok(FitReport {
        n: data.len(),
        p: data[0].dim(),
        raf: config.raf.map(|r| format!("{:?}", r.family()).to_lowercase()),
        tau: config.raf.map(|r| r.tau()),
        bandwidth: set.bandwidth,
        lattice_radius: config.lattice_radius,
        seed: config.seed,
        converged_starts: set.converged_starts,
        selected: set.selected,
        roots,
    })
}

pub fn run(args: &FitArgs) -> Result<(), CliError> {
    let config = args.config()?;
    let table = load_data(&args.input, args.degrees)?;
    let report = fit_report(&table.rows, &config)?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    write_output(args.out.as_deref(), &json)?;
    if let Some(out) = &args.out {
        manifest::write_sidecar(
            out,
            "fit",
            serde_json::json!({
                "input": args.input,
                "raf": args.raf,
                "tau": report.tau,
                "h": report.bandwidth,
                "calibrated_h": args.h.is_none(),
                "J": args.lattice_radius,
                "tol": args.tol,
                "max_iter": args.max_iter,
                "starts": args.starts,
                "subsample": args.subsample,
                "n_sim": args.n_sim,
                "degrees": args.degrees,
            }),
            args.seed,
        )?;
    }
    Ok(())
}
