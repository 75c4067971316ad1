//! Argument parsing and exit-code mapping.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands::{execute, Command};
use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "em2gauss", version, about = "EM for balanced two-component Gaussian mixtures")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Debug, Subcommand)]
enum Sub {
    /// Population EM trajectory (step, lambda, err, kappa).
    Converge(Common),
    /// Finite-sample pipeline: centering, bootstrap, stabilized EM.
    Pipeline(Common),
    /// Update vector field over a 2D grid.
    Field(Common),
    /// Median error versus sample size, with a log-log fit.
    Scaling(Common),
    /// Ten-step table from the infinite start.
    Tensteps(Common),
    /// Draw a sample batch (CSV plus `.meta` sidecar).
    Sample(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// Key-value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV path; the manifest goes to `<out>.manifest`.
    #[arg(long)]
    out: Option<String>,
    /// Worker threads.
    #[arg(long)]
    workers: Option<usize>,
    /// Override a config key, e.g. `--set model.mu=1,0`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run<'a, I, T>(args: I, stdout: &'a mut dyn Write, stderr: &'a mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let sink = if code == 0 { stdout } else { stderr };
            let _ = write!(sink, "{}", e.render());
            return code;
        }
    };
    let (command, common) = match cli.command {
        Sub::Converge(c) => (Command::Converge, c),
        Sub::Pipeline(c) => (Command::Pipeline, c),
        Sub::Field(c) => (Command::Field, c),
        Sub::Scaling(c) => (Command::Scaling, c),
        Sub::Tensteps(c) => (Command::Tensteps, c),
        Sub::Sample(c) => (Command::Sample, c),
    };
    let cfg = match resolve(command, common) {
        Ok(cfg) => cfg,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            return 1;
        }
    };
    match execute(command, &cfg) {
        Ok(outcome) => {
            let _ = writeln!(stdout, "{command}: {}", outcome.summary);
            for p in &outcome.outputs {
                let _ = writeln!(stdout, "wrote {}", p.display());
            }
            outcome.exit_code
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

fn resolve(command: Command, common: Common) -> Result<RunConfig, crate::config::ConfigError> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(name) = &cfg.command {
        if name != command.name() {
            return Err(crate::config::ConfigError::new(
                "command",
                format!("config is for `{name}`, invoked as `{command}`"),
            ));
        }
    }
    for s in &common.set {
        cfg.apply_override(s)?;
    }
    if common.seed.is_some() {
        cfg.seed = common.seed;
    }
    if common.out.is_some() {
        cfg.out = common.out;
    }
    if common.workers.is_some() {
        cfg.workers = common.workers;
    }
    cfg.command = Some(command.name().to_string());
    Ok(cfg)
}
