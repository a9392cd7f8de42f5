use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mathagent::backend::BackendFactory;
use mathagent::cli::{self, CliError, ReportArgs};

#[derive(Parser)]
#[command(name = "mathagent", version, about = "Multimodal math error detection and evaluation")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline over a dataset in the configured mode.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run all four ablation modes and write ablation.csv.
    Ablate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Check a dataset file against the schema and print statistics.
    Validate { dataset: PathBuf },
    /// Rescore stored detections and print a Markdown table.
    Report {
        detections: PathBuf,
        dataset: PathBuf,
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long, default_value = cli::DEFAULT_LABEL)]
        label: String,
        #[arg(long, default_value = "baseline")]
        baseline_label: String,
        /// Also write report.md and report.csv here.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Render a results table from report-input JSON.
    Render { input: PathBuf },
    /// Write a synthetic dataset with the reference marginals.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_ansi(std::io::IsTerminal::is_terminal(&std::io::stderr()))
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .init();
    let args = Args::parse();
    let mut stdout = std::io::stdout().lock();
    let result: Result<(), CliError> = match args.command {
        Command::Run { config } => cli::cmd_run(&config, &BackendFactory::default()).map(|_| ()),
        Command::Ablate { config } => cli::cmd_ablate(&config, &BackendFactory::default()).map(|_| ()),
        Command::Validate { dataset } => cli::cmd_validate(&dataset, &mut stdout),
        Command::Report { detections, dataset, baseline, label, baseline_label, out_dir } => cli::cmd_report(
            &ReportArgs {
                detections: &detections,
                dataset: &dataset,
                baseline: baseline.as_deref(),
                label: &label,
                baseline_label: &baseline_label,
                out_dir: out_dir.as_deref(),
            },
            &mut stdout,
        ),
        Command::Render { input } => cli::cmd_render(&input, &mut stdout),
        Command::Generate { out, seed } => cli::cmd_generate(&out, seed).map(|n| {
            tracing::info!(samples = n, path = %out.display(), "wrote synthetic dataset");
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mathagent: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
