mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crate::error::CliError;
use crate::output::{sha256_hex, write_outputs, ManifestInfo};

#[derive(Debug, Parser)]
#[command(name = "chainbsde", version, about = "BSDEs on finite-state Markov chains")]
pub struct Cli {
    /// Scenario file (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = "CHAINBSDE_OUT", default_value = "chainbsde-out")]
    pub out: PathBuf,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Number of Monte Carlo paths.
    #[arg(long, global = true)]
    pub paths: Option<usize>,
    /// Time step of the ODE and forward integrators.
    #[arg(long, global = true)]
    pub step: Option<f64>,
    /// Working epsilon of the comparison checks.
    #[arg(long, global = true)]
    pub eps: Option<f64>,
    /// Suppress the summary on stdout.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Which {
    #[value(alias = "ex41")]
    TwoStateDominance,
    #[value(alias = "ex42")]
    JumpCounter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Scalar,
    Rowwise,
    Joint,
    ZFree,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the rate model and the blocks that are present.
    Validate,
    /// Sample chain paths.
    Simulate,
    /// Solve the Markovian BSDE backwards on [0, horizon].
    Solve,
    /// Solve up to the first entry into the absorbing set.
    SolveHitting,
    /// Check the linear-driver hypotheses and solve the linear BSDE.
    LinearSolve,
    /// Monte Carlo estimate of the linear closed form.
    LinearEstimate,
    /// Check comparison hypotheses and the conclusion u1 >= u2.
    CheckComparison {
        #[arg(long, value_enum)]
        kind: Option<KindArg>,
        /// Also test this many random Z pairs per piece and state.
        #[arg(long)]
        exhaustive: Option<usize>,
    },
    /// Check that a driver is balanced on random terminal pairs.
    BalancedCheck {
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Run one of the built-in counterexamples.
    Counterexample {
        #[arg(value_enum)]
        which: Which,
    },
    /// Essential range of g(X_T) and where the evaluation falls in it.
    EssentialRange,
    /// Nonlinear expectation E_{s,t}(g(X_t)) for every state.
    Evaluate,
    /// Risk measure rho_s = -E_{s,t} for every state.
    Rho,
    /// Check risk-measure properties on random instances.
    CheckRiskProperties {
        /// Property to check; repeatable. Defaults to all.
        #[arg(long = "property")]
        properties: Vec<String>,
    },
    /// Run every invariant suite.
    Verify,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Simulate => "simulate",
            Command::Solve => "solve",
            Command::SolveHitting => "solve-hitting",
            Command::LinearSolve => "linear-solve",
            Command::LinearEstimate => "linear-estimate",
            Command::CheckComparison { .. } => "check-comparison",
            Command::BalancedCheck { .. } => "balanced-check",
            Command::Counterexample { .. } => "counterexample",
            Command::EssentialRange => "essential-range",
            Command::Evaluate => "evaluate",
            Command::Rho => "rho",
            Command::CheckRiskProperties { .. } => "check-risk-properties",
            Command::Verify => "verify",
        }
    }
}

fn run(cli: &Cli) -> Result<i32, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config <path> is required".into()))?;
    let (scenario, bytes) = config::load(path)?;
    let ctx = commands::Context::new(cli, &scenario);
    let report = commands::dispatch(&cli.command, &ctx)?;
    if !cli.quiet {
        for line in &report.lines {
            println!("{line}");
        }
    }
    let info = ManifestInfo {
        subcommand: cli.command.name(),
        config_sha256: sha256_hex(&bytes),
        seed: ctx.seed_if_set(),
    };
    write_outputs(&cli.out, &report, &info)?;
    Ok(match &report.failure {
        Some(why) => {
            eprintln!("property check failed: {why}");
            4
        }
        None => 0,
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
