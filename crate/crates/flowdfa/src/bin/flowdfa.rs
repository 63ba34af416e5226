//! Thin command-line front end over the pipeline library.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 fingerprint mismatch.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use flowdfa::config::PipelineConfig;
use flowdfa::encode::EncoderScheme;
use flowdfa::error::Error;
use flowdfa::eval::format_report_table;
use flowdfa::pipeline::{
    cmd_eval, cmd_export_dot, cmd_export_traces, cmd_score, cmd_sweep, cmd_train, TraceSplit,
};
use flowdfa::trace::SortingLevel;

#[derive(Parser)]
#[command(
    name = "flowdfa",
    about = "Learn state machines from NetFlow records and flag anomalous traffic",
    version
)]
struct Cli {
    /// Pipeline configuration file (TOML).
    #[arg(short, long, global = true, default_value = "flowdfa.toml")]
    config: PathBuf,

    /// Override the encoder scheme from the config.
    #[arg(long, global = true)]
    encoder: Option<String>,

    /// Override the sorting level from the config.
    #[arg(long, global = true)]
    sorting: Option<SortingLevel>,

    /// Override the root seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the output directory from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the encoder, build traces, learn the model, calibrate the
    /// threshold; writes all artifacts.
    Train,
    /// Score the test partition (or another flow file) under the trained
    /// artifacts.
    Score {
        /// Score this flow CSV instead of the config's test partition.
        #[arg(long)]
        flows: Option<PathBuf>,
    },
    /// Compute metrics over the scores file.
    Eval {
        /// Also evaluate the isolation-forest baseline.
        #[arg(long)]
        baseline: bool,
    },
    /// Run all encodings and sorting levels plus the baseline.
    Sweep,
    /// Export traces in Abbadingo format with a symbol table sidecar.
    ExportTraces {
        /// Which partition to export.
        #[arg(long, default_value = "train")]
        split: String,
    },
    /// Export the trained model as a DOT graph.
    ExportDot,
}

fn apply_overrides(config: &mut PipelineConfig, cli: &Cli) -> Result<(), Error> {
    if let Some(encoder) = &cli.encoder {
        config.encoder.scheme = match encoder.as_str() {
            "percentile" => EncoderScheme::Percentile,
            "frequency" => EncoderScheme::Frequency,
            "contextual_frequency" => EncoderScheme::ContextualFrequency,
            other => return Err(Error::Config(format!("unknown encoder scheme `{other}`"))),
        };
    }
    if let Some(sorting) = cli.sorting {
        config.traces.sorting = sorting;
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output_dir = out.clone();
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Error> {
    let mut config = PipelineConfig::load(&cli.config)?;
    apply_overrides(&mut config, cli)?;
    match &cli.command {
        Command::Train => {
            let outcome = cmd_train(&config)?;
            println!(
                "trained: {} traces -> prefix tree {} states -> model {} states ({} decisions)",
                outcome.train_traces,
                outcome.pta_states,
                outcome.model_states,
                outcome.merge_decisions
            );
            println!(
                "threshold ({}): {:.6}",
                outcome.threshold.method, outcome.threshold.value
            );
            println!("artifacts in {}", config.output_dir.display());
        }
        Command::Score { flows } => {
            let outcome = cmd_score(&config, flows.as_deref())?;
            println!(
                "scored {} traces, {} anomalous; {}",
                outcome.scored,
                outcome.anomalous,
                outcome.scores_path.display()
            );
        }
        Command::Eval { baseline } => {
            let rows = cmd_eval(&config, *baseline)?;
            print!("{}", format_report_table(&rows));
        }
        Command::Sweep => {
            let rows = cmd_sweep(&config)?;
            print!("{}", format_report_table(&rows));
        }
        Command::ExportTraces { split } => {
            let split = match split.as_str() {
                "train" => TraceSplit::Train,
                "test" => TraceSplit::Test,
                "all" => TraceSplit::All,
                other => {
                    return Err(Error::Config(format!(
                        "split must be train, test or all, got `{other}`"
                    )))
                }
            };
            let path = cmd_export_traces(&config, split)?;
            println!("wrote {}", path.display());
        }
        Command::ExportDot => {
            let path = cmd_export_dot(&config)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
