//! `torwrap simulate`: contamination sweeps over a grid of scenarios.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use clap::Args;
use torwrap::simstudy::{
    run_scenario, Scenario, TrialOutcome, STUDY_CN, STUDY_EPS, STUDY_K_EPS, STUDY_N, STUDY_P,
    STUDY_SIGMA,
};
use torwrap::{rng, Bandwidth, FitConfig};

use crate::fit::{raf_from_flags, RafChoice};
use crate::{manifest, CliError};

/// Parses `0.5`, `pi`, `pi/4`, `3pi/4` or `3*pi/4`.
pub fn parse_angle(s: &str) -> Result<f64, String> {
    let t = s.trim().to_ascii_lowercase();
    if let Ok(v) = t.parse::<f64>() {
        return Ok(v);
    }
    let bad = || format!("cannot parse {s:?} as a number or multiple of pi");
    let (num, den) = match t.split_once('/') {
        Some((a, b)) => (a.trim(), b.trim().parse::<f64>().map_err(|_| bad())?),
        None => (t.as_str(), 1.0),
    };
    let coef = num.strip_suffix("pi").ok_or_else(bad)?.trim_end_matches('*').trim();
    let coef = if coef.is_empty() {
        1.0
    } else {
        coef.parse::<f64>().map_err(|_| bad())?
    };
    Ok(coef * PI / den)
}


#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Sample sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub n: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    pub p: Vec<usize>,
    /// Contamination fractions.
    #[arg(long, value_delimiter = ',', value_parser = parse_angle)]
    pub eps: Vec<f64>,
    /// Outlier shifts; accepts forms like pi/2.
    #[arg(long, value_delimiter = ',', value_parser = parse_angle)]
    pub k_eps: Vec<f64>,
    /// Latent variances.
    #[arg(long, value_delimiter = ',', value_parser = parse_angle)]
    pub sigma: Vec<f64>,
    /// Expand every axis not given on the command line to the full study grid.
    #[arg(long)]
    pub full_grid: bool,
    #[arg(long, default_value_t = STUDY_CN)]
    pub cn: f64,
    #[arg(long, default_value_t = 500)]
    pub trials: usize,
    #[arg(long, value_enum, default_value_t = RafChoice::Gkl)]
    pub raf: RafChoice,
    #[arg(long, default_value_t = 0.1)]
    pub tau: f64,
    #[arg(long)]
    pub h: Option<f64>,
    #[arg(long = "J", default_value_t = 3)]
    pub lattice_radius: u32,
    #[arg(long, default_value_t = 15)]
    pub starts: usize,
    #[arg(long, default_value_t = 10)]
    pub subsample: usize,
    #[arg(long, default_value_t = 5000)]
    pub n_sim: usize,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Permit values outside the study grid.
    #[arg(long)]
    pub allow_offgrid: bool,
    #[arg(long, env = "TORWRAP_SEED", default_value_t = 0)]
    pub seed: u64,
    /// CSV results path; a JSON mirror and a manifest are written beside it.
    #[arg(long)]
    pub out: PathBuf,
}

impl SimulateArgs {
    fn axis<T: Copy>(&self, given: &[T], grid: &[T], single: T) -> Vec<T> {
        if !given.is_empty() {
            given.to_vec()
        } else if self.full_grid {
            grid.to_vec()
        } else {
            vec![single]
        }
    }

    /// Cells in `n, p, eps, k_eps, sigma` order, each with its own seed.
    pub fn scenarios(&self) -> Result<Vec<Scenario>, CliError> {
        let mut cells = Vec::new();
        for n in self.axis(&self.n, &STUDY_N, 100) {
            for p in self.axis(&self.p, &STUDY_P, 2) {
                for eps in self.axis(&self.eps, &STUDY_EPS, 0.10) {
                    for k_eps in self.axis(&self.k_eps, &STUDY_K_EPS, PI) {
                        for sigma in self.axis(&self.sigma, &STUDY_SIGMA, PI / 8.0) {
                            let sc = Scenario {
                                cn: self.cn,
                                trials: self.trials,
                                seed: rng::derive_seed(self.seed, cells.len() as u64),
                                ..Scenario::new(n, p, eps, k_eps, sigma)
                            };
                            sc.validate().map_err(|e| CliError::Usage(e.to_string()))?;
                            if !self.allow_offgrid && !sc.in_study_grid() {
                                return Err(CliError::Usage(format!(
                                    "scenario {} is outside the study grid; pass --allow-offgrid",
                                    sc.id()
                                )));
                            }
                            cells.push(sc);
                        }
                    }
                }
            }
        }
        Ok(cells)
    }

    pub fn config(&self) -> Result<FitConfig, CliError> {
        let raf = raf_from_flags(self.raf, self.tau)?;
        let mut config = FitConfig {
            lattice_radius: self.lattice_radius,
            raf,
            n_starts: self.starts,
            subsample_size: self.subsample,
            n_sim: self.n_sim,
            ..FitConfig::default()
        };
        if let Some(h) = self.h {
            if !(h > 0.0 && h.is_finite()) {
                return Err(CliError::Usage(format!("--h {h}: must be positive")));
            }
            config.bandwidth = Bandwidth::Fixed(h);
        }
        Ok(config)
    }
}

pub fn write_tables(rows: &[TrialOutcome], csv_path: &Path) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(csv_path)
        .map_err(|e| CliError::Io(std::io::Error::other(e)))?;
    for row in rows {
        w.serialize(row)
            .map_err(|e| CliError::Io(std::io::Error::other(e)))?;
    }
    w.flush()?;
    let json = serde_json::to_string_pretty(rows).expect("rows serialize") + "\n";
    std::fs::write(csv_path.with_extension("json"), json)?;
    Ok(())
}

pub fn run(args: &SimulateArgs) -> Result<(), CliError> {
    let cells = args.scenarios()?;
    let config = args.config()?;
    let h = FitConfig {
        raf: Some(config.raf.unwrap_or_else(torwrap::estimator::reference_raf)),
        ..config.clone()
    }
    .resolve_bandwidth()
    .map_err(CliError::Model)?;
    let config = FitConfig {
        bandwidth: Bandwidth::Fixed(h),
        ..config
    };
    let work = || -> Result<Vec<TrialOutcome>, CliError> {
        let mut rows = Vec::new();
        for sc in &cells {
            rows.extend(run_scenario(sc, &config).map_err(CliError::Model)?);
        }
        Ok(rows)
    };
    let rows = match args.jobs {
        Some(jobs) => rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| CliError::Usage(format!("--jobs {jobs}: {e}")))?
            .install(work)?,
        None => work()?,
    };
    write_tables(&rows, &args.out)?;
    manifest::write_sidecar(
        &args.out,
        "simulate",
        serde_json::json!({
            "scenarios": cells,
            "raf": args.raf,
            "tau": config.raf.map(|r| r.tau()),
            "h": h,
            "J": args.lattice_radius,
            "starts": args.starts,
            "subsample": args.subsample,
            "n_sim": args.n_sim,
            "tol": config.tol,
            "max_iter": config.max_iter,
            "jobs": args.jobs,
        }),
        args.seed,
    )?;
    Ok(())
}
