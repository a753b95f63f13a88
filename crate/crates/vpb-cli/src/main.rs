mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use vpb_lab::Error;

/// Numerical laboratory for the diffusively scaled Vlasov-Poisson-Boltzmann system.
#[derive(Debug, Parser)]
#[command(name = "vpblab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one kinetic simulation and record invariants and energies.
    Simulate(Common),
    /// Trace the five low-frequency eigenvalue branches of B_ε(ξ).
    Spectrum {
        #[command(flatten)]
        common: Common,
        /// Largest |ξ| of the branch grid.
        #[arg(long, default_value_t = 1.0)]
        smax: f64,
        /// Number of log-spaced |ξ| samples.
        #[arg(long, default_value_t = 24)]
        points: usize,
    },
    /// ε-sweep of kinetic runs against the NSFP limit.
    LimitSweep(Common),
    /// Collocation ensemble over the random kernel coordinate z.
    Uq(Common),
    /// Structural constants, λ-selection and energy decay across ε.
    EnergyReport {
        #[command(flatten)]
        common: Common,
        /// Regularity index of the energy functional.
        #[arg(long, default_value_t = 1)]
        s: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Profile {
    Smoke,
    Full,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// key = value configuration file, or `default`.
    #[arg(long)]
    pub config: Option<String>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Comma-separated ε values.
    #[arg(long = "eps-list")]
    pub eps_list: Option<String>,
    #[arg(long)]
    pub modes: Option<usize>,
    #[arg(long)]
    pub degree: Option<usize>,
    #[arg(long)]
    pub dt: Option<f64>,
    /// Final time.
    #[arg(long = "T")]
    pub t_final: Option<f64>,
    /// Collocation nodes in z.
    #[arg(long)]
    pub nodes: Option<usize>,
    #[arg(long = "out-dir", default_value = "vpblab-out")]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = Profile::Smoke)]
    pub profile: Profile,
}

fn init_workers() -> Result<(), Error> {
    if let Ok(v) = std::env::var("VPB_WORKERS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| Error::validation("VPB_WORKERS", format!("expected a positive integer, got `{v}`")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Numerical(format!("worker pool: {e}")))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = init_workers().and_then(|_| match cli.command {
        Command::Simulate(c) => commands::simulate(&c),
        Command::Spectrum { common, smax, points } => commands::spectrum(&common, smax, points),
        Command::LimitSweep(c) => commands::limit_sweep(&c),
        Command::Uq(c) => commands::uq(&c),
        Command::EnergyReport { common, s } => commands::energy_report(&common, s),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
