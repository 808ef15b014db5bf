use std::f64::consts::{PI, TAU};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use torwrap::{rng, wn_sample, AngleVector, CovMatrix, WrappedNormalParams};
use torwrap_cli::fit::FitReport;

fn torwrap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_torwrap"))
        .args(args)
        .env_remove("TORWRAP_SEED")
        .output()
        .expect("binary runs")
}

fn write_sample(path: &Path, params: &WrappedNormalParams, n: usize, seed: u64, degrees: bool) {
    let (ys, _) = wn_sample(params, n, &mut rng::seeded(seed)).unwrap();
    let scale = if degrees { 180.0 / PI } else { 1.0 };
    let mut text = String::from("phi,psi\n");
    for y in ys {
        let v = y.as_slice();
        text += &format!("{},{}\n", v[0] * scale, v[1] * scale);
    }
    std::fs::write(path, text).unwrap();
}

fn clean_params() -> WrappedNormalParams {
    WrappedNormalParams::new(
        AngleVector::wrap([2.0, 4.0]).unwrap(),
        CovMatrix::from_row_slice(2, &[0.3, 0.1, 0.1, 0.25]).unwrap(),
    )
    .unwrap()
}

fn read_report(path: &Path) -> FitReport {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn p(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

fn s(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn unweighted_fit_of_clean_data() {
    let dir = tempfile::tempdir().unwrap();
    let data = p(dir.path(), "clean.csv");
    let out = p(dir.path(), "report.json");
    write_sample(&data, &clean_params(), 150, 1, false);
    let o = torwrap(&["fit", s(&data), "--raf", "none", "--n-sim", "500", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = read_report(&out);
    assert_eq!(report.roots.len(), 1);
    assert!(report.roots[0].weights.is_none());
    assert!(report.raf.is_none());
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(!text.contains("\"weights\""));
    assert!(p(dir.path(), "report.json.manifest.json").exists());
}

#[test]
fn weighted_fit_reports_every_root() {
    let dir = tempfile::tempdir().unwrap();
    let data = p(dir.path(), "two.csv");
    let dense = WrappedNormalParams::new(
        AngleVector::wrap([1.0, 1.0]).unwrap(),
        CovMatrix::from_row_slice(2, &[0.05, 0.025, 0.025, 0.05]).unwrap(),
    )
    .unwrap();
    let diffuse = WrappedNormalParams::new(
        AngleVector::wrap([4.0, 4.0]).unwrap(),
        CovMatrix::from_diagonal(&[0.3, 0.3]).unwrap(),
    )
    .unwrap();
    let mut r = rng::seeded(7);
    let (mut ys, _) = wn_sample(&dense, 120, &mut r).unwrap();
    ys.extend(wn_sample(&diffuse, 80, &mut r).unwrap().0);
    let text: String = ys
        .iter()
        .map(|y| format!("{},{}\n", y.as_slice()[0], y.as_slice()[1]))
        .collect();
    std::fs::write(&data, text).unwrap();

    let out = p(dir.path(), "report.json");
    let o = torwrap(&[
        "fit", s(&data), "--raf", "gkl", "--tau", "0.25", "--J", "6", "--seed", "3", "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = read_report(&out);
    assert!(report.roots.len() >= 2, "{} roots", report.roots.len());
    let min = report
        .roots
        .iter()
        .map(|r| r.fitted_probability)
        .fold(f64::INFINITY, f64::min);
    assert_eq!(report.selected_root().fitted_probability, min);
    for root in &report.roots {
        let w = root.weights.as_ref().unwrap();
        assert_eq!(w.len(), 200);
        assert!(w.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!((root.correlation[0][0] - 1.0).abs() < 1e-12);
    }

    // the reported log-likelihood is reproduced by the density command
    let o = torwrap(&["density", "--from-report", s(&out), "--J", "6", "--at-file", s(&data)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = String::from_utf8(o.stdout).unwrap();
    let total: f64 = table
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().parse::<f64>().unwrap())
        .sum();
    let reported = report.selected_root().log_likelihood;
    assert!((total - reported).abs() < 1e-9, "{total} vs {reported}");
}

#[test]
fn degrees_match_radians() {
    let dir = tempfile::tempdir().unwrap();
    let rad = p(dir.path(), "rad.csv");
    let deg = p(dir.path(), "deg.csv");
    write_sample(&rad, &clean_params(), 100, 2, false);
    write_sample(&deg, &clean_params(), 100, 2, true);
    let run = |input: &Path, extra: &[&str], out: &Path| {
        let mut args = vec!["fit", s(input), "--n-sim", "500", "--starts", "4", "--out", s(out)];
        args.extend_from_slice(extra);
        assert!(torwrap(&args).status.success());
        read_report(out)
    };
    let a = run(&rad, &[], &p(dir.path(), "a.json"));
    let b = run(&deg, &["--degrees"], &p(dir.path(), "b.json"));
    assert_eq!(a.roots.len(), b.roots.len());
    for (x, y) in a.roots.iter().zip(&b.roots) {
        for (m, n) in x.mu.iter().zip(&y.mu) {
            assert!((m - n).abs() < 1e-9);
        }
        for (r, q) in x.sigma.iter().flatten().zip(y.sigma.iter().flatten()) {
            assert!((r - q).abs() < 1e-9);
        }
    }
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let data = p(dir.path(), "clean.csv");
    write_sample(&data, &clean_params(), 80, 3, false);
    let a = p(dir.path(), "a.json");
    let b = p(dir.path(), "b.json");
    assert!(torwrap(&["fit", s(&data), "--n-sim", "300", "--seed", "41", "--out", s(&a)])
        .status
        .success());
    let o = Command::new(env!("CARGO_BIN_EXE_torwrap"))
        .args(["fit", s(&data), "--n-sim", "300", "--out", s(&b)])
        .env("TORWRAP_SEED", "41")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(read_report(&a).seed, 41);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let ragged = p(dir.path(), "ragged.csv");
    std::fs::write(&ragged, "1,2\n3,4\n5\n").unwrap();
    let o = torwrap(&["fit", s(&ragged)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("row 3"));

    let bad = p(dir.path(), "bad.csv");
    std::fs::write(&bad, "1,2\n3,abc\n").unwrap();
    let o = torwrap(&["fit", s(&bad)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("column 2"));

    let data = p(dir.path(), "clean.csv");
    write_sample(&data, &clean_params(), 60, 4, false);
    let o = torwrap(&["fit", s(&data), "--raf", "gkl", "--tau", "3"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--tau"));

    let o = torwrap(&["fit", s(&data), "--max-iter", "1", "--n-sim", "100"]);
    assert_eq!(o.status.code(), Some(3));

    let o = torwrap(&["simulate", "--eps", "0.07", "--trials", "1", "--out", s(&p(dir.path(), "x.csv"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--allow-offgrid"));
}

#[test]
fn simulate_smoke_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = p(dir.path(), "sim.csv");
    let o = torwrap(&[
        "simulate", "--n", "50", "--p", "2", "--eps", "0", "--trials", "2", "--n-sim", "500",
        "--out", s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "scenario,n,p,eps,k_eps,sigma,cn,trial,method,as_mu,div_sigma,iterations,converged,roots,outlier_weight,error"
    );
    assert_eq!(lines.len(), 5);
    assert!(out.with_extension("json").exists());
    assert!(p(dir.path(), "sim.csv.manifest.json").exists());
    let rows: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.with_extension("json")).unwrap())
            .unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 4);
}

fn density_values(args: &[&str]) -> Vec<f64> {
    let o = torwrap(args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect()
}

#[test]
fn density_grid_properties() {
    let dir = tempfile::tempdir().unwrap();
    let sigma = p(dir.path(), "sigma.csv");
    std::fs::write(&sigma, format!("{}\n", PI / 8.0)).unwrap();
    let n = 2048;
    let v = density_values(&["density", "--mu", "pi", "--sigma", s(&sigma), "--grid", &n.to_string()]);
    let integral: f64 = v.iter().sum::<f64>() * TAU / n as f64;
    assert!((integral - 1.0).abs() < 1e-6, "{integral}");
    let (arg, _) = v
        .iter()
        .enumerate()
        .fold((0, f64::MIN), |b, (k, x)| if *x > b.1 { (k, *x) } else { b });
    assert_eq!(arg + 1, n / 2, "mode at pi");

    std::fs::write(&sigma, "50\n").unwrap();
    let v = density_values(&["density", "--mu", "1", "--sigma", s(&sigma), "--J", "8", "--at", "0.3", "--at", "4"]);
    for x in v {
        assert!((x - 1.0 / TAU).abs() < 1e-4);
    }

    let bad = p(dir.path(), "bad.csv");
    std::fs::write(&bad, "1,2\n3,1\n").unwrap();
    let o = torwrap(&["density", "--mu", "1,1", "--sigma", s(&bad), "--at", "1,1"]);
    assert_eq!(o.status.code(), Some(2));
    std::fs::write(&bad, "1,0.5\n").unwrap();
    let o = torwrap(&["density", "--mu", "1,1", "--sigma", s(&bad), "--at", "1,1"]);
    assert_eq!(o.status.code(), Some(2));
}
