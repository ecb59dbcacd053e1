use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};

mod commands;

#[derive(Debug, Parser)]
#[command(
    name = "rwmp-lab",
    version,
    about = "Recycled-wavefunction functional learning on simulated lattices"
)]
struct Cli {
    /// TOML configuration for the subcommand; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Pauli terms and exact spectrum of a Hamiltonian spec file.
    Hamiltonian {
        /// Restrict the spectrum to this particle number.
        #[arg(long)]
        particles: Option<usize>,
    },
    /// Adiabatic preparation followed by phase estimation.
    Rte,
    /// Phase estimation on the exact ground state.
    Qpe,
    /// Density matrix by amplitude counting on the exact ground state.
    Qae,
    /// Kohn-Sham potential reproducing a density.
    InvertKs,
    /// Trains a model on exactly solved systems.
    Train,
    /// Runs the recycling loop over a potential schedule.
    RunRwmp,
    /// Solves a new potential with trained models.
    Solve,
    /// Non-interacting response function of a KS potential.
    Respond,
    /// Fermi-weighted density of a KS potential.
    ThermalDensity,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    std::fs::create_dir_all(&cli.out)?;
    let ctx = commands::Context {
        config: cli.config,
        seed: cli.seed,
        out: cli.out,
    };
    match cli.command {
        Command::Hamiltonian { particles } => commands::hamiltonian(&ctx, particles),
        Command::Rte => commands::rte(&ctx),
        Command::Qpe => commands::qpe(&ctx),
        Command::Qae => commands::qae(&ctx),
        Command::InvertKs => commands::invert_ks(&ctx),
        Command::Train => commands::train(&ctx),
        Command::RunRwmp => commands::run_rwmp(&ctx),
        Command::Solve => commands::solve(&ctx),
        Command::Respond => commands::respond(&ctx),
        Command::ThermalDensity => commands::thermal_density(&ctx),
    }
}
