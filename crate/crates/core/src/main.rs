use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use symabs::abstraction::BuildMode;
use symabs::cli::{self, RunConfig};
use symabs::{Error, Result};

/// Symbolic models and controller synthesis for disturbed nonlinear systems.
#[derive(Parser)]
#[command(name = "symabs", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Report |Q|, |A| and |B| without building transitions.
    Count(Common),
    /// Evaluate the bisimilarity inequalities and sample the certificate.
    Check(Common),
    /// Build the symbolic model and write it to the output directory.
    Abstract {
        #[command(flatten)]
        common: Common,
        /// Also export transitions, states and disturbance symbols as CSV.
        #[arg(long)]
        csv: bool,
    },
    /// Solve the specification game and write the controller.
    Synthesize {
        #[command(flatten)]
        common: Common,
        /// Reuse a model file instead of rebuilding.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Run the closed loop under the sinusoidal disturbance.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        controller: Option<PathBuf>,
        /// Number of sampling periods.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Check alternating approximate bisimilarity of two finite systems.
    BisimCheck {
        /// JSON file with `t1`, `t2`, `epsilon` and an optional `relation`.
        #[arg(long)]
        input: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in run: pendulum or pendulum-coarse.
    #[arg(long)]
    preset: Option<String>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "materialized")]
    mode: String,
    /// Override epsilon from the configuration.
    #[arg(long)]
    epsilon: Option<f64>,
}

impl Common {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(p), _) => RunConfig::load(p)?,
            (None, Some(name)) => RunConfig::preset(name)?,
            (None, None) => RunConfig::preset("pendulum")?,
        };
        if let Some(t) = self.threads {
            cfg.threads = Some(t);
        }
        if let Some(s) = self.seed {
            cfg.seed = Some(s);
        }
        if let Some(o) = &self.out {
            cfg.out = Some(o.clone());
        }
        if let Some(e) = self.epsilon {
            cfg.epsilon = e;
        }
        Ok(cfg)
    }

    fn mode(&self) -> Result<BuildMode> {
        self.mode.parse()
    }
}

fn run(cli: Cli) -> Result<i32> {
    let common = match &cli.command {
        Command::BisimCheck { input } => {
            print!("{}", cli::cmd_bisim_check(input)?);
            return Ok(0);
        }
        Command::Count(c) | Command::Check(c) => c,
        Command::Abstract { common, .. } | Command::Synthesize { common, .. } | Command::Simulate { common, .. } => {
            common
        }
    };
    let mut cfg = common.config()?;
    if let Command::Simulate { steps: Some(s), .. } = &cli.command {
        cfg.steps = Some(*s);
    }
    let threads = cfg.threads.unwrap_or(0);
    let resolved = cfg.resolve()?;
    let mode = common.mode()?;
    symabs::par::with_threads(threads, || -> Result<i32> {
        match &cli.command {
            Command::Count(_) => print!("{}", cli::cmd_count(&resolved)?),
            Command::Check(_) => {
                let (text, json, ok) = cli::cmd_check(&resolved)?;
                print!("{text}");
                if common.out.is_some() || cfg.out.is_some() {
                    std::fs::create_dir_all(&resolved.out)?;
                    std::fs::write(resolved.out.join("check.json"), json)?;
                }
                if !ok {
                    eprintln!("one or more conditions are violated");
                    return Ok(1);
                }
            }
            Command::Abstract { csv, .. } => print!("{}", cli::cmd_abstract(&resolved, mode, *csv)?),
            Command::Synthesize { model, .. } => {
                print!("{}", cli::cmd_synthesize(&resolved, model.as_deref(), mode)?)
            }
            Command::Simulate { model, controller, .. } => print!(
                "{}",
                cli::cmd_simulate(&resolved, model.as_deref(), controller.as_deref(), mode)?
            ),
            Command::BisimCheck { .. } => unreachable!(),
        }
        Ok(0)
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::CapExceeded { .. } = e {
                eprintln!("hint: use --mode onthefly or coarser quantization");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
