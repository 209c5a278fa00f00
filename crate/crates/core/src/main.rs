use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use transopt::cli::{
    cmd_generate, cmd_report, cmd_sweep, cmd_train, CliError, ExperimentConfig, Overrides,
    SweepOptions,
};

/// Classify optimization problems from Latin Hypercube samples with a
/// transformer set encoder.
///
/// Exit codes: 0 success, 2 configuration error, 3 dataset cache error,
/// 4 runtime failure.
#[derive(Parser, Debug)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (cache, reports, sweep CSV).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for fold training; 1 is the bit-deterministic mode.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[arg(long, global = true)]
    dim: Option<usize>,
    #[arg(long, global = true)]
    multiplier: Option<usize>,
    #[arg(long, global = true)]
    embed: Option<usize>,
    #[arg(long, global = true)]
    heads: Option<usize>,
    #[arg(long, global = true)]
    layers: Option<usize>,
    #[arg(long, global = true)]
    instances_per_class: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build and cache every design of the configured datasets.
    Generate,
    /// Cross-validate one configuration and write its report.
    Train,
    /// Cross-validate every grid point and write the sweep CSV.
    Sweep {
        /// Leave wall_seconds blank so reruns produce identical CSVs.
        #[arg(long)]
        no_timing: bool,
    },
    /// Summarize a sweep CSV as markdown.
    Report {
        /// Sweep CSV to read (default: <out>/sweep.csv).
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Markdown destination (default: <out>/report.md).
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    cfg.apply(&Overrides {
        seed: cli.seed,
        output_dir: cli.out.clone(),
        dim: cli.dim,
        multiplier: cli.multiplier,
        embed: cli.embed,
        heads: cli.heads,
        layers: cli.layers,
        instances_per_class: cli.instances_per_class,
    });
    if cli.jobs == 0 {
        return Err(CliError::Config("--jobs must be at least 1".into()));
    }
    match cli.command {
        Command::Generate => {
            let m = cmd_generate(&cfg)?;
            println!(
                "wrote {} designs and {}",
                m.entries.len(),
                cfg.cache_dir().join(transopt::cli::MANIFEST_FILE).display()
            );
        }
        Command::Train => {
            let out = cmd_train(&cfg, cli.jobs)?;
            print!(
                "{}",
                std::fs::read_to_string(&out.summary_path).unwrap_or_default()
            );
            println!("report: {}", out.report_path.display());
        }
        Command::Sweep { no_timing } => {
            let path = cmd_sweep(
                &cfg,
                SweepOptions {
                    jobs: cli.jobs,
                    timing: !no_timing,
                },
            )?;
            println!("sweep results: {}", path.display());
        }
        Command::Report { csv, output } => {
            let csv = csv.unwrap_or_else(|| cfg.sweep_csv());
            let output = output.unwrap_or_else(|| cfg.output_dir.join("report.md"));
            cmd_report(&csv, &output)?;
            println!("report: {}", output.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
