use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use esmbo::harness::{aggregate, render_report, run_benchmark, BenchmarkConfig, ReportFormat};
use esmbo::Error;

/// Run and compare RS, SMBO, ERS and ESMBO hyperparameter searches.
#[derive(Parser, Debug)]
#[command(name = "esmbo", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run every (method, problem, seed) cell of a benchmark config, then aggregate.
    Run {
        /// Benchmark config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to the config's `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Cells run concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Recompute reports from the logs of an output directory.
    Aggregate {
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the overall comparison table.
    Report {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Csv,
    Json,
}

fn execute(cli: Cli) -> esmbo::Result<()> {
    match cli.command {
        Command::Run { config, out, jobs } => {
            let cfg = BenchmarkConfig::load(&config)?;
            let out = out
                .or_else(|| cfg.output_dir.clone())
                .ok_or_else(|| Error::Config("no --out given and the config has no output_dir".into()))?;
            let summary = run_benchmark(&cfg, &out, jobs)?;
            eprintln!(
                "ran {} cells, skipped {} complete; reports in {}",
                summary.cells_run,
                summary.cells_skipped,
                out.join("reports").display()
            );
        }
        Command::Aggregate { out } => {
            let agg = aggregate(&out)?;
            eprintln!(
                "aggregated {} methods over {} runs; reports in {}",
                agg.methods.len(),
                agg.columns.len(),
                out.join("reports").display()
            );
        }
        Command::Report { out, format } => {
            let format = match format {
                Format::Csv => ReportFormat::Csv,
                Format::Json => ReportFormat::Json,
            };
            let text = render_report(&out, format)?;
            std::io::stdout().lock().write_all(text.as_bytes())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Config(_)) => {
            eprintln!("esmbo: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("esmbo: {e}");
            ExitCode::from(1)
        }
    }
}
