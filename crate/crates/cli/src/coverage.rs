//! Monte Carlo coverage study.
//!
//! A data cell is a (model, n, error) triple. Every replication of a data cell
//! draws one dataset, selects knots, fits once and then checks the true β
//! against the EL and NA regions at every γ, so all report rows of a data
//! cell share the same replications.

use std::io::Write;
use std::time::Instant;

use pflr_core::bspline::BSplineBasis;
use pflr_core::inference::{
    empirical_quantile, na_critical_value, simulate_weighted_chisq, Method, RegionAnalysis,
};
use pflr_core::numerics::{Grid, RngStream};
use pflr_core::pflr::select_knots;
use pflr_core::simgen::{gen_dataset, ErrorKind, ModelId, ModelSpec};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const REPORT_HEADER: &str =
    "model,n,gamma,error,method,coverage,reps,hull_failures,failures,elapsed_ms";

const METHODS: [Method; 2] = [Method::El, Method::Na];

fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Identifier of a data cell: 2 bits model, 1 bit error kind, 21 bits n.
pub fn cell_id(model: ModelId, n: usize, error: ErrorKind) -> u64 {
    let e = match error {
        ErrorKind::Normal => 0,
        ErrorKind::SkewNormal => 1,
    };
    (u64::from(model.number()) << 22) | (e << 21) | (n as u64 & ((1 << 21) - 1))
}

/// Replication seed. `(cell, rep)` is packed into one 64-bit key and passed
/// through a bijective mixer, so distinct pairs never share a seed.
pub fn replication_seed(master: u64, cell: u64, rep: u64) -> u64 {
    debug_assert!(cell < 1 << 24 && rep < 1 << 40);
    splitmix64(((cell << 40) | rep).wrapping_add(splitmix64(master)))
}

/// Seed of the calibration draws, derived from the replication seed.
fn calibration_seed(rep_seed: u64) -> u64 {
    splitmix64(rep_seed ^ 0x6a09_e667_f3bc_c909)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Check {
    contained: bool,
    hull_failure: bool,
}

/// Result of one replication: one check per (γ, method), or a failure.
type Outcome = Result<Vec<Check>, String>;

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageRow {
    pub model: ModelId,
    pub n: usize,
    pub gamma: f64,
    pub error: ErrorKind,
    pub method: Method,
    pub contained: usize,
    pub reps: usize,
    pub hull_failures: usize,
    pub failures: usize,
    pub elapsed_ms: u64,
}

impl CoverageRow {
    pub fn coverage(&self) -> f64 {
        self.contained as f64 / self.reps as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageReport {
    pub rows: Vec<CoverageRow>,
    /// First failure message of each data cell that had failures.
    pub failure_notes: Vec<String>,
}

impl CoverageReport {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{REPORT_HEADER}")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.model.number(),
                r.n,
                r.gamma,
                r.error.label(),
                r.method,
                r.coverage(),
                r.reps,
                r.hull_failures,
                r.failures,
                r.elapsed_ms
            )?;
        }
        out.flush()
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("report is ASCII")
    }

    pub fn find(
        &self,
        model: ModelId,
        n: usize,
        gamma: f64,
        error: ErrorKind,
        method: Method,
    ) -> Option<&CoverageRow> {
        self.rows.iter().find(|r| {
            r.model == model
                && r.n == n
                && r.gamma == gamma
                && r.error == error
                && r.method == method
        })
    }
}

struct DataCell {
    model: ModelId,
    n: usize,
    error: ErrorKind,
    id: u64,
}

fn run_replication(cfg: &RunConfig, cell: &DataCell, grid: &Grid, rep: usize) -> Outcome {
    let seed = replication_seed(cfg.seed, cell.id, rep as u64);
    let mut rng = RngStream::new(seed);
    let spec = ModelSpec {
        grid: grid.clone(),
        fourier_terms: cfg.fourier_terms,
        error_sd_override: cfg.error_sd,
        ..ModelSpec::new(cell.model, cell.n, cell.error)
    };
    let (data, truth) = gen_dataset(&spec, &mut rng).map_err(|e| e.to_string())?;
    let knots =
        select_knots(&data, cfg.degree, &cfg.knot_candidates(cell.n)).map_err(|e| e.to_string())?;
    let basis = BSplineBasis::new(cfg.degree, knots);
    let analysis = RegionAnalysis::new(&data, &basis).map_err(|e| e.to_string())?;

    let na = analysis
        .na_statistic(&truth.beta)
        .map_err(|e| e.to_string())?;
    let el = analysis
        .el_evaluation(&truth.beta)
        .map_err(|e| e.to_string())?;
    let weights = analysis.limit_weights().map_err(|e| e.to_string())?;
    let draws = simulate_weighted_chisq(&weights, cfg.mc_draws, calibration_seed(seed))
        .map_err(|e| e.to_string())?;

    let mut checks = Vec::with_capacity(cfg.gammas.len() * METHODS.len());
    for &gamma in &cfg.gammas {
        for method in METHODS {
            let check = match method {
                Method::El => {
                    let crit =
                        empirical_quantile(&draws, 1.0 - gamma).map_err(|e| e.to_string())?;
                    Check {
                        contained: el.hull_ok && el.statistic <= crit,
                        hull_failure: !el.hull_ok,
                    }
                }
                Method::Na => {
                    let crit = na_critical_value(data.p(), gamma).map_err(|e| e.to_string())?;
                    Check {
                        contained: na <= crit,
                        hull_failure: false,
                    }
                }
            };
            checks.push(check);
        }
    }
    Ok(checks)
}

/// Runs the study described by `cfg`. The report depends only on the
/// configuration (thread count and timing aside).
pub fn run_coverage(cfg: &RunConfig) -> CliResult<CoverageReport> {
    cfg.validate()?;
    let grid = Grid::uniform(cfg.grid_points)?;
    let mut cells = Vec::new();
    for model in cfg.model_ids()? {
        for &n in &cfg.n {
            for error in cfg.error_kinds()? {
                cells.push(DataCell {
                    model,
                    n,
                    error,
                    id: cell_id(model, n, error),
                });
            }
        }
    }

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cfg.threads {
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start worker pool: {e}")))?;

    let mut rows = Vec::new();
    let mut failure_notes = Vec::new();
    for cell in &cells {
        let timed: Vec<(Outcome, u128)> = pool.install(|| {
            (0..cfg.reps)
                .into_par_iter()
                .map(|rep| {
                    let start = Instant::now();
                    let out = run_replication(cfg, cell, &grid, rep);
                    (out, start.elapsed().as_micros())
                })
                .collect()
        });
        let elapsed_ms = if cfg.no_timing {
            0
        } else {
            (timed.iter().map(|(_, us)| us).sum::<u128>() / 1000) as u64
        };

        let failures = timed.iter().filter(|(o, _)| o.is_err()).count();
        if let Some((Err(msg), _)) = timed.iter().find(|(o, _)| o.is_err()) {
            failure_notes.push(format!(
                "model {} n {} {}: {failures} failed replications, first: {msg}",
                cell.model,
                cell.n,
                cell.error.label()
            ));
        }
        for (gi, &gamma) in cfg.gammas.iter().enumerate() {
            for (mi, method) in METHODS.into_iter().enumerate() {
                let k = gi * METHODS.len() + mi;
                let mut contained = 0;
                let mut hull_failures = 0;
                for (o, _) in &timed {
                    if let Ok(checks) = o {
                        contained += usize::from(checks[k].contained);
                        hull_failures += usize::from(checks[k].hull_failure);
                    }
                }
                rows.push(CoverageRow {
                    model: cell.model,
                    n: cell.n,
                    gamma,
                    error: cell.error,
                    method,
                    contained,
                    reps: cfg.reps,
                    hull_failures,
                    failures,
                    elapsed_ms,
                });
            }
        }
    }
    Ok(CoverageReport {
        rows,
        failure_notes,
    })
}
