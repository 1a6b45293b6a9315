use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use lyapcov_cli::{run, Command, FactorFormat, Format, Overrides};

#[derive(Parser)]
#[command(
    name = "lyapcov",
    version,
    about = "Fluctuation covariances via low-rank Lyapunov solves"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `outputs` in the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Root seed for the Monte Carlo stage (overrides `sim.seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Format of tabular outputs.
    #[arg(long, global = true, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
    /// Encoding of the low-rank factor written by `solve`.
    #[arg(long, global = true, value_enum, default_value_t = FactorArg::Csv)]
    factor_format: FactorArg,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// ADI shifts, per-shift radii and the elliptic error bound.
    Shifts,
    /// Low-rank ADI solve of the stationary Lyapunov equation.
    Solve,
    /// Singular value decay of V_* against the Penzl and Sabino bounds.
    Bounds,
    /// Monte Carlo and ODE checks of the linearization and relaxation stages.
    Validate,
    /// Full pipeline and the combined error budget.
    Ceres,
}

#[derive(ValueEnum, Clone, Copy)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(ValueEnum, Clone, Copy)]
enum FactorArg {
    Csv,
    Bin,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let Some(config) = cli.config else {
        eprintln!("error: --config <path> is required");
        return ExitCode::from(2);
    };
    let command = match cli.command {
        Cmd::Shifts => Command::Shifts,
        Cmd::Solve => Command::Solve,
        Cmd::Bounds => Command::Bounds,
        Cmd::Validate => Command::Validate,
        Cmd::Ceres => Command::Ceres,
    };
    let overrides = Overrides {
        out: cli.out,
        seed: cli.seed,
        format: match cli.format {
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
        },
        factor_format: match cli.factor_format {
            FactorArg::Csv => FactorFormat::Csv,
            FactorArg::Bin => FactorFormat::Binary,
        },
    };
    match run(command, &config, &overrides) {
        Ok(report) => {
            println!("{}", report.message);
            for f in &report.files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
