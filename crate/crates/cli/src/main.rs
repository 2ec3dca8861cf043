use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pflr_cli::commands::{cmd_coverage, cmd_fit, cmd_region, cmd_simulate};
use pflr_cli::config::{parse_list, KnotPolicy, RunConfig};
use pflr_cli::{CliError, CliResult};
use pflr_core::inference::Method;

#[derive(Parser)]
#[command(
    name = "pflr",
    version,
    about = "Partial functional linear regression: fits, confidence regions and coverage studies"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a dataset from one of the simulation models and write it as CSV.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Fit the model to a dataset CSV.
    Fit {
        #[arg(long)]
        data: PathBuf,
        /// Also write the summary as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Test whether a β lies in the EL or NA confidence region.
    Region {
        #[arg(long)]
        data: PathBuf,
        /// Hypothesised β, comma separated.
        #[arg(long, allow_hyphen_values = true)]
        beta: String,
        #[arg(long, default_value = "el")]
        method: String,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run the Monte Carlo coverage study and write the report CSV.
    Coverage {
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Args, Default)]
struct RunArgs {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model ids, comma separated.
    #[arg(long)]
    model: Option<String>,
    /// Sample sizes, comma separated.
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    reps: Option<usize>,
    /// Significance levels, comma separated.
    #[arg(long)]
    gamma: Option<String>,
    /// Error kinds (normal, skew), comma separated.
    #[arg(long)]
    error: Option<String>,
    #[arg(long)]
    degree: Option<usize>,
    /// auto or fixed:N.
    #[arg(long)]
    knots: Option<String>,
    /// Largest interior-knot count tried by --knots auto.
    #[arg(long)]
    max_knots: Option<usize>,
    #[arg(long)]
    mc_draws: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    grid_points: Option<usize>,
    #[arg(long)]
    fourier_terms: Option<usize>,
    /// Replaces the model's error standard deviation.
    #[arg(long)]
    error_sd: Option<f64>,
    /// Write elapsed_ms as 0.
    #[arg(long)]
    no_timing: bool,
}

impl RunArgs {
    fn resolve(&self) -> CliResult<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::from_json_file(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.model {
            c.models = parse_list(v)?;
        }
        if let Some(v) = &self.n {
            c.n = parse_list(v)?;
        }
        if let Some(v) = self.reps {
            c.reps = v;
        }
        if let Some(v) = &self.gamma {
            c.gammas = parse_list(v)?;
        }
        if let Some(v) = &self.error {
            c.errors = parse_list(v)?;
        }
        if let Some(v) = self.degree {
            c.degree = v;
        }
        if let Some(v) = &self.knots {
            c.knots = v.parse::<KnotPolicy>()?;
        }
        if let Some(v) = self.max_knots {
            c.max_knots = v;
        }
        if let Some(v) = self.mc_draws {
            c.mc_draws = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if self.threads.is_some() {
            c.threads = self.threads;
        }
        if self.out.is_some() {
            c.out = self.out.clone();
        }
        if let Some(v) = self.grid_points {
            c.grid_points = v;
        }
        if let Some(v) = self.fourier_terms {
            c.fourier_terms = v;
        }
        if self.error_sd.is_some() {
            c.error_sd = self.error_sd;
        }
        c.no_timing |= self.no_timing;
        Ok(c)
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Simulate { run } => {
            let mut cfg = run.resolve()?;
            if run.n.is_none() && run.config.is_none() {
                return Err(CliError::Usage("simulate needs --n".into()));
            }
            if run.model.is_none() && run.config.is_none() {
                return Err(CliError::Usage("simulate needs --model".into()));
            }
            cfg.reps = 1;
            cmd_simulate(&cfg, &mut out)
        }
        Command::Fit { data, json, run } => {
            let cfg = run.resolve()?;
            cmd_fit(&cfg, &data, json.as_deref(), &mut out).map(|_| ())
        }
        Command::Region {
            data,
            beta,
            method,
            run,
        } => {
            let mut cfg = run.resolve()?;
            if run.gamma.is_none() {
                cfg.gammas = vec![0.05];
            }
            let [gamma] = cfg.gammas[..] else {
                return Err(CliError::Usage("region takes a single --gamma".into()));
            };
            let method: Method = method.parse().map_err(|_| {
                CliError::Usage(format!("unknown method {method:?}; expected el or na"))
            })?;
            let beta: Vec<f64> = parse_list(&beta)?;
            cmd_region(&cfg, &data, &beta, gamma, method, &mut out).map(|_| ())
        }
        Command::Coverage { run } => {
            let cfg = run.resolve()?;
            cmd_coverage(&cfg, &mut out).map(|_| ())
        }
    }?;
    out.flush().map_err(|e| CliError::io("<stdout>", e))
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
