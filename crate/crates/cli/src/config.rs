//! Run configuration shared by all subcommands. Values come from an optional
//! JSON file; command-line flags override individual fields.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use pflr_core::inference::{DEFAULT_MC_DRAWS, MIN_MC_DRAWS};
use pflr_core::simgen::{ErrorKind, ModelId, DEFAULT_FOURIER_TERMS, DEFAULT_GRID_POINTS};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Sample sizes are packed into 21 bits of the replication key.
pub const MAX_N: usize = (1 << 21) - 1;
/// Replication indices are packed into 40 bits of the replication key.
pub const MAX_REPS: usize = 1 << 40;

/// Knot-count policy: leave-one-out selection or a fixed interior count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KnotPolicy {
    Auto,
    Fixed(usize),
}

impl fmt::Display for KnotPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KnotPolicy::Auto => f.write_str("auto"),
            KnotPolicy::Fixed(n) => write!(f, "fixed:{n}"),
        }
    }
}

impl FromStr for KnotPolicy {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("auto") {
            return Ok(KnotPolicy::Auto);
        }
        s.strip_prefix("fixed:")
            .and_then(|v| v.trim().parse().ok())
            .map(KnotPolicy::Fixed)
            .ok_or_else(|| {
                CliError::Usage(format!("knot policy must be auto or fixed:N, got {s:?}"))
            })
    }
}

impl Serialize for KnotPolicy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for KnotPolicy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub models: Vec<u32>,
    pub n: Vec<usize>,
    pub reps: usize,
    pub gammas: Vec<f64>,
    pub errors: Vec<String>,
    pub degree: usize,
    pub knots: KnotPolicy,
    /// Largest interior-knot count tried by `auto`.
    pub max_knots: usize,
    pub mc_draws: usize,
    pub seed: u64,
    /// `None` uses every available core.
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub grid_points: usize,
    pub fourier_terms: usize,
    /// Replaces the model's error standard deviation.
    pub error_sd: Option<f64>,
    /// Write `elapsed_ms` as 0 so reports are byte-comparable.
    pub no_timing: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            models: vec![1, 2, 3],
            n: vec![30, 50, 80, 150],
            reps: 1000,
            gammas: vec![0.10, 0.05],
            errors: vec!["normal".into()],
            degree: 2,
            knots: KnotPolicy::Auto,
            max_knots: pflr_core::pflr::MAX_KNOT_CANDIDATE,
            mc_draws: DEFAULT_MC_DRAWS,
            seed: 20240101,
            threads: None,
            out: None,
            grid_points: DEFAULT_GRID_POINTS,
            fourier_terms: DEFAULT_FOURIER_TERMS,
            error_sd: None,
            no_timing: false,
        }
    }
}

impl RunConfig {
    pub fn from_json_file(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn model_ids(&self) -> CliResult<Vec<ModelId>> {
        self.models
            .iter()
            .map(|&m| {
                ModelId::from_number(m)
                    .map_err(|_| CliError::Usage(format!("unknown model {m}; expected 1, 2 or 3")))
            })
            .collect()
    }

    pub fn error_kinds(&self) -> CliResult<Vec<ErrorKind>> {
        self.errors
            .iter()
            .map(|e| {
                e.parse::<ErrorKind>().map_err(|_| {
                    CliError::Usage(format!("unknown error kind {e:?}; expected normal or skew"))
                })
            })
            .collect()
    }

    /// Knot candidates for a sample of size `n`.
    pub fn knot_candidates(&self, n: usize) -> Vec<usize> {
        match self.knots {
            KnotPolicy::Fixed(k) => vec![k],
            KnotPolicy::Auto => pflr_core::pflr::default_knot_candidates(n, self.degree)
                .into_iter()
                .filter(|&k| k <= self.max_knots)
                .collect(),
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        let usage = |m: String| Err(CliError::Usage(m));
        self.model_ids()?;
        self.error_kinds()?;
        if self.models.is_empty() {
            return usage("at least one model is required".into());
        }
        if self.errors.is_empty() {
            return usage("at least one error kind is required".into());
        }
        if self.n.is_empty() {
            return usage("the sample-size list is empty".into());
        }
        if let Some(&n) = self.n.iter().find(|&&n| !(10..=MAX_N).contains(&n)) {
            return usage(format!("sample size {n} outside 10..={MAX_N}"));
        }
        if self.reps == 0 || self.reps > MAX_REPS {
            return usage(format!("reps must be in 1..={MAX_REPS}"));
        }
        if self.gammas.is_empty() {
            return usage("the gamma list is empty".into());
        }
        if let Some(g) = self.gammas.iter().find(|g| !(**g > 0.0 && **g < 1.0)) {
            return usage(format!("gamma {g} not in (0, 1)"));
        }
        if self.degree > 5 {
            return usage(format!("degree {} too large", self.degree));
        }
        if self.mc_draws < MIN_MC_DRAWS {
            return usage(format!("mc-draws must be at least {MIN_MC_DRAWS}"));
        }
        if self.threads == Some(0) {
            return usage("threads must be positive".into());
        }
        if self.grid_points < 2 {
            return usage("grid needs at least 2 points".into());
        }
        if self.fourier_terms == 0 {
            return usage("fourier-terms must be positive".into());
        }
        if let Some(sd) = self.error_sd {
            if !(sd > 0.0 && sd.is_finite()) {
                return usage(format!("error sd {sd} must be positive"));
            }
        }
        Ok(())
    }
}

/// Parses a comma-separated list such as `30,50,80`.
pub fn parse_list<T: FromStr>(s: &str) -> CliResult<Vec<T>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse()
                .map_err(|_| CliError::Usage(format!("cannot parse {t:?} in list {s:?}")))
        })
        .collect()
}
