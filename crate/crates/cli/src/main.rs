mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};

use commands::{EXIT_CONFIG, EXIT_FAILED};
use config::{RunConfig, RunMode, Switch};

#[derive(Parser, Debug)]
#[command(name = "nonabelian", version, about = "Fluctuation relations for non-commuting charges")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Evaluate every grid point and write the sweep table.
    Sweep(Common),
    /// Run the invariant checks and write a JSON report.
    Verify(Common),
    /// Dump the full trajectory lattice at one angle.
    Trajectories {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        theta: f64,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Exchange,
    Work,
}

#[derive(Args, Debug)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, allow_negative_numbers = true)]
    theta_min: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    theta_max: Option<f64>,
    #[arg(long)]
    points: Option<usize>,
    #[arg(long)]
    slices: Option<usize>,
    /// Diagnostic switch; repeatable.
    #[arg(long = "flag", value_enum)]
    flags: Vec<Switch>,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(m) = self.mode {
            cfg.mode = match m {
                ModeArg::Exchange => RunMode::Exchange,
                ModeArg::Work => RunMode::Work,
            };
        }
        if let Some(x) = self.theta_min {
            cfg.grid.min = x;
        }
        if let Some(x) = self.theta_max {
            cfg.grid.max = x;
        }
        if let Some(n) = self.points {
            cfg.grid.points = n;
        }
        if let Some(n) = self.slices {
            cfg.set_slices(n);
        }
        for f in &self.flags {
            if !cfg.diagnostics.contains(f) {
                cfg.diagnostics.push(*f);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<u8> {
    let (common, theta) = match &cli.command {
        Command::Sweep(c) | Command::Verify(c) => (c, None),
        Command::Trajectories { common, theta } => (common, Some(*theta)),
    };
    let cfg = match common.load() {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e:#}");
            return Ok(EXIT_CONFIG);
        }
    };
    let out = common.out.as_deref();
    match cli.command {
        Command::Sweep(_) => commands::sweep(&cfg, out),
        Command::Verify(_) => commands::verify(&cfg, out),
        Command::Trajectories { .. } => commands::trajectories(&cfg, theta.unwrap_or_default(), out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_FAILED)
        }
    }
}
