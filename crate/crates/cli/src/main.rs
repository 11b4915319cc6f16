use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tthf_cli::{compare, experiment, output, parse_config, ExperimentConfig, Result};

#[derive(Parser)]
#[command(name = "tthf", version, about = "Two-timescale hybrid federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every replicate and write trace, bounds and summary CSVs.
    Run(RunArgs),
    /// Align several summary.csv files into one table.
    Compare {
        summaries: Vec<PathBuf>,
        /// Write the table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run with every applicable bound check enabled; write bounds and summary only.
    VerifyBounds(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    config: PathBuf,
    /// Override `training.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Override `run.output_dir`.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Worker threads for replicates.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

fn load(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = parse_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.training.seed = seed;
    }
    if let Some(dir) = &args.out_dir {
        cfg.run.output_dir = dir.clone();
    }
    Ok(cfg)
}

fn run(args: &RunArgs, verify_only: bool) -> Result<bool> {
    let mut cfg = load(args)?;
    if verify_only {
        cfg.checks.enabled = true;
    }
    let out = experiment::run_experiment(&cfg, args.jobs)?;
    let written = output::write_outputs(&cfg.run.output_dir, &cfg, &out, !verify_only)?;
    for status in &out.checks {
        println!(
            "{:<9} {:>6} rows {:>6} violations  {}",
            status.name,
            status.rows,
            status.violations,
            if status.passed { "pass" } else { "FAIL" }
        );
    }
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(out.checks_passed())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => run(args, false),
        Command::VerifyBounds(args) => run(args, true),
        Command::Compare { summaries, out } => compare::compare_files(summaries).and_then(|table| {
            match out {
                Some(path) => output::write_atomically(
                    path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(std::path::Path::new(".")),
                    &[(path.file_name().and_then(|n| n.to_str()).unwrap_or("comparison.csv"), table)],
                )
                .map(|_| ()),
                None => std::io::stdout()
                    .write_all(&table)
                    .map_err(|source| tthf_cli::CliError::Io { path: "<stdout>".into(), source }),
            }
            .map(|()| true)
        }),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("bound checks failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
