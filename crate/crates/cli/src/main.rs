use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use untrimmed_cli::{cmd_eval, cmd_gradcheck, cmd_inspect, cmd_synth, cmd_train, with_threads, CliError, EvalTask, RunConfig};

/// Weakly supervised action recognition and detection on untrimmed sequences.
#[derive(Parser)]
#[command(name = "untrimmed", version)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set train.epochs=20` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Worker threads (1 = serial reference mode, 0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for corpus synthesis, initialisation and sampling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic train/test corpora.
    Synth,
    /// Train a model on the training corpus.
    Train,
    /// Evaluate a model on the test corpus.
    Eval {
        #[arg(long, value_enum)]
        task: Task,
    },
    /// Compare analytic and finite-difference gradients.
    Gradcheck,
    /// Dump attention weights and proposals for the test corpus.
    Inspect,
}

#[derive(Clone, Copy, ValueEnum)]
enum Task {
    Recognition,
    Detection,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut overrides = cli.set;
    if let Some(s) = cli.seed {
        overrides.push(format!("seed={s}"));
    }
    if let Some(t) = cli.threads {
        overrides.push(format!("threads={t}"));
    }
    let cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
    with_threads(cfg.threads, || match cli.command {
        Command::Synth => cmd_synth(&cfg),
        Command::Train => cmd_train(&cfg),
        Command::Eval { task } => cmd_eval(
            &cfg,
            match task {
                Task::Recognition => EvalTask::Recognition,
                Task::Detection => EvalTask::Detection,
            },
        )
        .map(drop),
        Command::Gradcheck => cmd_gradcheck(&cfg).map(drop),
        Command::Inspect => cmd_inspect(&cfg),
    })?
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
