//! Subcommand implementations. Each writes its human-readable output to the
//! given writer; files are written only where a path is configured.

use std::io::Write;
use std::path::Path;

use nalgebra::DVector;
use pflr_core::bspline::BSplineBasis;
use pflr_core::inference::{McConfig, Method, RegionAnalysis, RegionVerdict};
use pflr_core::numerics::{Grid, RngStream};
use pflr_core::pflr::{select_knots, Dataset, PflrFit};
use pflr_core::simgen::{gen_dataset, ModelSpec};
use serde::Serialize;

use crate::config::{KnotPolicy, RunConfig};
use crate::coverage::{run_coverage, CoverageReport};
use crate::csvio::{read_dataset_file, write_dataset, write_dataset_file};
use crate::error::{CliError, CliResult};

fn io_out(e: std::io::Error) -> CliError {
    CliError::io("<stdout>", e)
}

fn single<T: Copy>(values: &[T], what: &str) -> CliResult<T> {
    match values {
        [v] => Ok(*v),
        _ => Err(CliError::Usage(format!(
            "exactly one {what} is required here"
        ))),
    }
}

pub fn cmd_simulate(cfg: &RunConfig, out: &mut dyn Write) -> CliResult<()> {
    cfg.validate()?;
    let model = single(&cfg.model_ids()?, "model")?;
    let n = single(&cfg.n, "sample size")?;
    let error = single(&cfg.error_kinds()?, "error kind")?;
    let spec = ModelSpec {
        grid: Grid::uniform(cfg.grid_points)?,
        fourier_terms: cfg.fourier_terms,
        error_sd_override: cfg.error_sd,
        ..ModelSpec::new(model, n, error)
    };
    let (data, _) = gen_dataset(&spec, &mut RngStream::new(cfg.seed))?;
    match &cfg.out {
        Some(path) => write_dataset_file(&data, path),
        None => write_dataset(&data, out).map_err(io_out),
    }
}

/// Basis chosen by the configured knot policy.
fn choose_basis(data: &Dataset, cfg: &RunConfig) -> CliResult<BSplineBasis> {
    let knots = match cfg.knots {
        KnotPolicy::Fixed(k) => k,
        KnotPolicy::Auto => select_knots(data, cfg.degree, &cfg.knot_candidates(data.n()))?,
    };
    Ok(BSplineBasis::new(cfg.degree, knots))
}

#[derive(Debug, Serialize)]
pub struct FitSummary {
    pub n: usize,
    pub p: usize,
    pub degree: usize,
    pub interior_knots: usize,
    pub knot_policy: String,
    pub spline_dimension: usize,
    pub beta_hat: Vec<f64>,
    pub sigma2_hat: f64,
    pub grid: Vec<f64>,
    pub alpha_hat: Vec<f64>,
}

impl FitSummary {
    fn new(data: &Dataset, fit: &PflrFit, cfg: &RunConfig) -> CliResult<Self> {
        let grid = data.x().grid().points().to_vec();
        let alpha_hat = grid
            .iter()
            .map(|&t| fit.alpha_hat(t))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            n: data.n(),
            p: data.p(),
            degree: fit.basis.degree(),
            interior_knots: fit.basis.interior_knots(),
            knot_policy: cfg.knots.to_string(),
            spline_dimension: fit.basis.dimension(),
            beta_hat: fit.beta_hat.iter().copied().collect(),
            sigma2_hat: fit.sigma2_hat,
            grid,
            alpha_hat,
        })
    }
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.10}")).collect();
    format!("({})", parts.join(", "))
}

pub fn cmd_fit(
    cfg: &RunConfig,
    data_path: &Path,
    json: Option<&Path>,
    out: &mut dyn Write,
) -> CliResult<FitSummary> {
    let data = read_dataset_file(data_path)?;
    let basis = choose_basis(&data, cfg)?;
    let fit = pflr_core::pflr::fit(&data, &basis)?;
    let summary = FitSummary::new(&data, &fit, cfg)?;

    (|| -> std::io::Result<()> {
        writeln!(out, "n = {}, p = {}", summary.n, summary.p)?;
        writeln!(
            out,
            "degree = {}, interior knots = {} ({}), k_n = {}",
            summary.degree, summary.interior_knots, summary.knot_policy, summary.spline_dimension
        )?;
        writeln!(out, "beta_hat = {}", fmt_vec(&summary.beta_hat))?;
        writeln!(out, "sigma2_hat = {:.10}", summary.sigma2_hat)?;
        writeln!(out, "t,alpha_hat")?;
        for (t, a) in summary.grid.iter().zip(&summary.alpha_hat) {
            writeln!(out, "{t},{a}")?;
        }
        Ok(())
    })()
    .map_err(io_out)?;

    if let Some(path) = json {
        let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
        std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))?;
    }
    Ok(summary)
}

pub fn verdict_label(v: &RegionVerdict) -> &'static str {
    if v.hull_failure() {
        "not contained (hull failure)"
    } else if v.contained {
        "contained"
    } else {
        "not contained"
    }
}

pub fn cmd_region(
    cfg: &RunConfig,
    data_path: &Path,
    beta: &[f64],
    gamma: f64,
    method: Method,
    out: &mut dyn Write,
) -> CliResult<RegionVerdict> {
    cfg.validate()?;
    let data = read_dataset_file(data_path)?;
    if beta.len() != data.p() {
        return Err(CliError::Usage(format!(
            "beta has {} entries but the dataset has {} covariates",
            beta.len(),
            data.p()
        )));
    }
    let basis = choose_basis(&data, cfg)?;
    let beta = DVector::from_column_slice(beta);
    let analysis = RegionAnalysis::new(&data, &basis)?;
    let spec = analysis.region(
        method,
        gamma,
        McConfig {
            draws: cfg.mc_draws,
            seed: cfg.seed,
        },
    )?;
    let verdict = match method {
        Method::Na => {
            let statistic = analysis.na_statistic(&beta)?;
            RegionVerdict {
                method,
                contained: statistic <= spec.critical_value,
                statistic,
                critical_value: spec.critical_value,
                weights: None,
                el: None,
            }
        }
        Method::El => {
            let el = analysis.el_evaluation(&beta)?;
            RegionVerdict {
                method,
                contained: el.hull_ok && el.statistic <= spec.critical_value,
                statistic: el.statistic,
                critical_value: spec.critical_value,
                weights: Some(analysis.limit_weights()?),
                el: Some(el),
            }
        }
    };

    (|| -> std::io::Result<()> {
        writeln!(
            out,
            "method = {method}, gamma = {gamma}, interior knots = {}",
            basis.interior_knots()
        )?;
        writeln!(out, "statistic = {:.10}", verdict.statistic)?;
        writeln!(out, "critical value = {:.10}", verdict.critical_value)?;
        if let (Some(w), Some(el)) = (&verdict.weights, &verdict.el) {
            writeln!(out, "weights = {}", fmt_vec(w))?;
            writeln!(out, "hull = {}", if el.hull_ok { "ok" } else { "failure" })?;
        }
        writeln!(out, "verdict = {}", verdict_label(&verdict))
    })()
    .map_err(io_out)?;
    Ok(verdict)
}

pub fn cmd_coverage(cfg: &RunConfig, out: &mut dyn Write) -> CliResult<CoverageReport> {
    let report = run_coverage(cfg)?;
    match &cfg.out {
        Some(path) => {
            let file = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
            report
                .write_csv(std::io::BufWriter::new(file))
                .map_err(|e| CliError::io(path, e))?;
        }
        None => report.write_csv(&mut *out).map_err(io_out)?,
    }
    for note in &report.failure_notes {
        eprintln!("warning: {note}");
    }
    Ok(report)
}
