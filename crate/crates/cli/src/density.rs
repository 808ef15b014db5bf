//! `torwrap density`: Wrapped Normal densities at points or on a grid.

use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use torwrap::{AngleVector, CovMatrix, LatticeGrid, WrappedNormal, WrappedNormalParams};

use crate::data::{load_data, load_matrix};
use crate::fit::FitReport;
use crate::simulate::parse_angle;
use crate::{write_output, CliError};

/// A comma-separated coordinate list.
#[derive(Debug, Clone, PartialEq)]
pub struct Point(pub Vec<f64>);

fn point(s: &str) -> Result<Point, String> {
    s.split(',').map(parse_angle).collect::<Result<_, _>>().map(Point)
}

#[derive(Debug, Clone, Args)]
pub struct DensityArgs {
    /// Mean direction, comma separated.
    #[arg(long, value_parser = point, required_unless_present = "from_report")]
    pub mu: Option<Point>,
    /// CSV file holding Σ.
    #[arg(long, required_unless_present = "from_report")]
    pub sigma: Option<PathBuf>,
    /// Take μ and Σ from a fit report instead.
    #[arg(long, conflicts_with_all = ["mu", "sigma"])]
    pub from_report: Option<PathBuf>,
    /// Root of the report to use; the selected one by default.
    #[arg(long, requires = "from_report")]
    pub root: Option<usize>,
    #[arg(long = "J", default_value_t = 3)]
    pub lattice_radius: u32,
    /// Evaluation point; repeatable.
    #[arg(long, value_parser = point)]
    pub at: Vec<Point>,
    /// CSV of evaluation points.
    #[arg(long)]
    pub at_file: Option<PathBuf>,
    /// N points per axis on (0, 2π], for p ≤ 2.
    #[arg(long)]
    pub grid: Option<usize>,
    /// --mu, --at and --at-file are in degrees.
    #[arg(long)]
    pub degrees: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl DensityArgs {
    pub fn params(&self) -> Result<WrappedNormalParams, CliError> {
        if let Some(path) = &self.from_report {
            let text = std::fs::read_to_string(path)?;
            let report: FitReport = serde_json::from_str(&text)
                .map_err(|e| CliError::Usage(format!("--from-report {}: {e}", path.display())))?;
            let k = self.root.unwrap_or(report.selected);
            let root = report.roots.get(k).ok_or_else(|| {
                CliError::Usage(format!("--root {k}: report has {} roots", report.roots.len()))
            })?;
            return root.params();
        }
        let scale = if self.degrees { PI / 180.0 } else { 1.0 };
        let mu = &self.mu.as_ref().expect("required by clap").0;
        let path = self.sigma.as_ref().expect("required by clap");
        let rows = load_matrix(path)?;
        let p = mu.len();
        if rows.len() != p || rows.iter().any(|r| r.len() != p) {
            return Err(CliError::Usage(format!(
                "--sigma {}: expected a {p}×{p} matrix",
                path.display()
            )));
        }
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        let sigma = CovMatrix::from_row_slice(p, &flat)
            .map_err(|e| CliError::Usage(format!("--sigma {}: {e}", path.display())))?;
        let mu = AngleVector::wrap(mu.iter().map(|v| v * scale)).map_err(CliError::Model)?;
        WrappedNormalParams::new(mu, sigma).map_err(CliError::Model)
    }

    fn points(&self, p: usize) -> Result<Vec<AngleVector>, CliError> {
        let scale = if self.degrees { PI / 180.0 } else { 1.0 };
        let mut pts = Vec::new();
        for Point(at) in &self.at {
            if at.len() != p {
                return Err(CliError::Usage(format!(
                    "--at: point has {} coordinates, model has {p}",
                    at.len()
                )));
            }
            pts.push(AngleVector::wrap(at.iter().map(|v| v * scale)).map_err(CliError::Model)?);
        }
        if let Some(path) = &self.at_file {
            let table = load_data(path, self.degrees)?;
            if table.p() != p {
                return Err(CliError::Usage(format!(
                    "--at-file {}: {} columns, model has {p}",
                    path.display(),
                    table.p()
                )));
            }
            pts.extend(table.rows);
        }
        if let Some(m) = self.grid {
            if m == 0 || p > 2 {
                return Err(CliError::Usage("--grid needs N ≥ 1 and p ≤ 2".into()));
            }
            let axis: Vec<f64> = (1..=m).map(|k| TAU * k as f64 / m as f64).collect();
            if p == 1 {
                pts.extend(axis.iter().map(|a| AngleVector::new(vec![*a]).expect("in range")));
            } else {
                for a in &axis {
                    for b in &axis {
                        pts.push(AngleVector::new(vec![*a, *b]).expect("in range"));
                    }
                }
            }
        }
        if pts.is_empty() {
            return Err(CliError::Usage("give --at, --at-file or --grid".into()));
        }
        Ok(pts)
    }
}

/// CSV with columns `y1..yp,log_density,density`.
pub fn density_table(args: &DensityArgs) -> Result<String, CliError> {
    let params = args.params()?;
    let p = params.dim();
    let grid = LatticeGrid::new(i64::from(args.lattice_radius), p).map_err(CliError::Model)?;
    let model = WrappedNormal::new(&params, &grid).map_err(CliError::Model)?;
    let mut out = String::new();
    for r in 1..=p {
        write!(out, "y{r},").unwrap();
    }
    out.push_str("log_density,density\n");
    for y in args.points(p)? {
        let lp = model.log_pdf(&y).map_err(CliError::Model)?;
        for v in y.as_slice() {
            write!(out, "{v},").unwrap();
        }
        writeln!(out, "{lp},{}", lp.exp()).unwrap();
    }
    Ok(out)
}

pub fn run(args: &DensityArgs) -> Result<(), CliError> {
    let table = density_table(args)?;
    write_output(args.out.as_deref(), &table)?;
    Ok(())
}
