use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use freehorizon_cli::{parse_config, run_scenario, CliError, Command};

#[derive(Parser)]
#[command(
    name = "freehorizon",
    version,
    about = "Free-final-time trajectory optimization experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(clap::Args)]
struct Common {
    /// Scenario file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's output_dir.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve the fixed-horizon problem once.
    Solve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        horizon: usize,
    },
    /// Sweep horizons and report the first hitting time.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Repeat the sweep for several terminal set levels.
    Msweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', required = true)]
        m_values: Vec<f64>,
    },
    /// Discounted variant with a horizon budget.
    Discounted {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        beta: f64,
        #[arg(long)]
        budget: usize,
    },
    /// Run the Bellman, Lyapunov, Jacobian and first-hit checks.
    Check {
        #[command(flatten)]
        common: Common,
    },
}

fn run(cli: Cli) -> Result<PathBuf, CliError> {
    let (common, command) = match cli.command {
        Cmd::Solve { common, horizon } => (common, Command::Solve { horizon }),
        Cmd::Sweep { common } => (common, Command::Sweep),
        Cmd::Msweep { common, m_values } => (common, Command::Msweep { levels: m_values }),
        Cmd::Discounted {
            common,
            beta,
            budget,
        } => (common, Command::Discounted { beta, budget }),
        Cmd::Check { common } => (common, Command::Check),
    };
    let text = std::fs::read_to_string(&common.config).map_err(|e| CliError::Io {
        path: common.config.clone(),
        source: e,
    })?;
    let config = parse_config(&text)?;
    let out = run_scenario(&config, &command, common.output_dir.as_deref())?;
    Ok(out.dir)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(dir) => {
            println!("{}", serde_json::json!({ "output_dir": dir }));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
