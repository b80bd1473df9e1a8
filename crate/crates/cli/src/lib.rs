//! Command-line front end for the `mixgame` solvers.
//!
//! Every subcommand writes its artifacts (CSV and/or JSON) plus a
//! `manifest.json` with content hashes to the output directory, and prints
//! its summary as JSON on stdout. Failures print a JSON error record on
//! stderr and exit with 2 (configuration), 3 (solver) or 4 (internal).

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use mixgame::ErrorKind;
use serde::Serialize;
use thiserror::Error;

/// Environment variable that replaces the configured output directory.
pub const OUTPUT_DIR_ENV: &str = "MIXGAME_OUTPUT_DIR";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] mixgame::Error),
    #[error("i/o: {0}")]
    Io(String),
    #[error("internal: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) => match e.kind() {
                ErrorKind::Usage | ErrorKind::Model => 2,
                ErrorKind::Solver => 3,
                ErrorKind::Internal => 4,
            },
            CliError::Io(_) | CliError::Internal(_) => 4,
        }
    }

    fn kind(&self) -> &'static str {
        match self.exit_code() {
            2 => "config",
            3 => "solver",
            _ => "internal",
        }
    }
}

#[derive(Serialize)]
pub struct ErrorRecord {
    pub kind: &'static str,
    pub exit_code: i32,
    pub message: String,
}

impl From<&CliError> for ErrorRecord {
    fn from(e: &CliError) -> Self {
        ErrorRecord {
            kind: e.kind(),
            exit_code: e.exit_code(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "mixgame", version, about = "Mixed-strategy values of zero-sum differential games")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Game metadata and an empirical audit of its declared constants.
    Describe(Common),
    /// Pure and mixed Hamiltonians on a sample set; flags Isaacs failures.
    IsaacsScan(Common),
    /// Backward dynamic programming in the requested modes.
    Solve(Common),
    /// Lax-Friedrichs solve of the Hamilton-Jacobi-Isaacs equation.
    Pde(Common),
    /// Mesh-refinement study of the mixed value.
    Converge(Common),
    /// Monte-Carlo play of the synthesized saddle strategies.
    Play(Common),
    /// Solve one matrix game read from a whitespace-separated file.
    GameDebug(GameDebugArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// TOML experiment configuration; flags override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Builtin game name (uv, separable, uv_shift).
    #[arg(long)]
    pub game: Option<String>,
    /// Number of partition intervals.
    #[arg(long)]
    pub n: Option<usize>,
    /// Grid spacing.
    #[arg(long)]
    pub h: Option<f64>,
    /// Comma-separated modes: mixed, pure_lower, pure_upper.
    #[arg(long)]
    pub mode: Option<String>,
    /// Comma-separated partition sizes for `converge`.
    #[arg(long)]
    pub meshes: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Monte-Carlo sample count for `play`.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Comma-separated initial state.
    #[arg(long, allow_hyphen_values = true)]
    pub x0: Option<String>,
    #[arg(long)]
    pub t0: Option<f64>,
    #[arg(long)]
    pub cfl: Option<f64>,
    /// Output directory (takes precedence over MIXGAME_OUTPUT_DIR).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct GameDebugArgs {
    /// Payoff matrix: one row per line, entries separated by whitespace;
    /// blank lines and lines starting with `#` are skipped.
    pub matrix: PathBuf,
    #[arg(long, default_value_t = 100_000)]
    pub iterations: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = mixgame::matrix_game::DEFAULT_TOL)]
    pub tol: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Runs a parsed command line; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match commands::dispatch(cli.command) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            let record = ErrorRecord::from(&e);
            let text = serde_json::to_string(&serde_json::json!({ "error": record }))
                .unwrap_or_else(|_| format!("{{\"error\":{{\"message\":{:?}}}}}", e.to_string()));
            eprintln!("{text}");
            record.exit_code
        }
    }
}
