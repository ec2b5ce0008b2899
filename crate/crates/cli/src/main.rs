use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gappy_fuse::pipeline::{
    create_run_dir, evaluate_stage, generate_stage, load_or_generate, load_or_train, open_run_dir, rigidity_stage,
    run_experiment, train_stage,
};
use gappy_fuse::{apply_thread_env, emit_report, load_config, CliError, ExperimentConfig, THREADS_ENV};

/// Fuses partial multi-modality burst observations into one isometric
/// embedding and scores the result.
#[derive(Parser)]
#[command(name = "gappy-fuse", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the dataset and its ground truth.
    Generate(StageArgs),
    /// Check whether the observation graph admits a rigid assembly.
    Rigidity(StageArgs),
    /// Train the coupled auto-encoders.
    Train(StageArgs),
    /// Score the trained model and write the report.
    Evaluate(StageArgs),
    /// All stages into a fresh timestamped directory.
    Run(StageArgs),
    /// Rebuild the summary and scatter plot of a finished run (`--out`).
    Report(ReportArgs),
}

#[derive(Args)]
struct StageArgs {
    #[arg(long)]
    config: PathBuf,
    /// Run directory for single stages (reused when it exists); parent
    /// directory for `run`. Defaults to a new directory under the
    /// config's `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replaces the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Stop after the dataset and the rigidity report.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    out: PathBuf,
}

fn load(args: &StageArgs) -> Result<ExperimentConfig, CliError> {
    let mut config = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    apply_thread_env(&mut config, std::env::var(THREADS_ENV).ok().as_deref())?;
    Ok(config)
}

fn stage_dir(args: &StageArgs, config: &ExperimentConfig) -> Result<PathBuf, CliError> {
    match &args.out {
        Some(dir) => open_run_dir(dir),
        None => create_run_dir(&config.output_dir, config),
    }
}

fn announce(dir: &Path) {
    println!("run directory: {}", dir.display());
}

/// Exit status 0 on success, 2 when a configured threshold fails.
fn execute(command: Command) -> Result<u8, CliError> {
    match command {
        Command::Generate(args) => {
            let config = load(&args)?;
            let dir = stage_dir(&args, &config)?;
            announce(&dir);
            let (dataset, truth) = generate_stage(&config, &dir)?;
            if args.dry_run {
                rigidity_stage(&dataset, &truth, &dir)?;
            }
            Ok(0)
        }
        Command::Rigidity(args) => {
            let config = load(&args)?;
            let dir = stage_dir(&args, &config)?;
            announce(&dir);
            let (dataset, truth) = load_or_generate(&config, &dir)?;
            let report = rigidity_stage(&dataset, &truth, &dir)?;
            println!("rigid: {}", report.verdict);
            Ok(if report.verdict { 0 } else { 2 })
        }
        Command::Train(args) => {
            let config = load(&args)?;
            let dir = stage_dir(&args, &config)?;
            announce(&dir);
            let (dataset, truth) = load_or_generate(&config, &dir)?;
            rigidity_stage(&dataset, &truth, &dir)?;
            if !args.dry_run {
                train_stage(&config, &dataset, &dir)?;
            }
            Ok(0)
        }
        Command::Evaluate(args) => {
            let config = load(&args)?;
            let dir = stage_dir(&args, &config)?;
            announce(&dir);
            let (dataset, truth) = load_or_generate(&config, &dir)?;
            let rigidity = rigidity_stage(&dataset, &truth, &dir)?;
            if args.dry_run {
                return Ok(0);
            }
            let model = load_or_train(&config, &dataset, &dir)?;
            let outcome = evaluate_stage(&config, &dataset, &rigidity, &model, &dir)?;
            print!("{}", std::fs::read_to_string(dir.join(gappy_fuse::pipeline::SUMMARY)).unwrap_or_default());
            Ok(if outcome.passed() { 0 } else { 2 })
        }
        Command::Run(args) => {
            let config = load(&args)?;
            let parent = args.out.clone().unwrap_or_else(|| config.output_dir.clone());
            let dir = create_run_dir(&parent, &config)?;
            announce(&dir);
            let outcome = run_experiment(&config, &dir, args.dry_run)?;
            if !args.dry_run {
                print!("{}", std::fs::read_to_string(dir.join(gappy_fuse::pipeline::SUMMARY)).unwrap_or_default());
            }
            Ok(if outcome.passed() { 0 } else { 2 })
        }
        Command::Report(args) => {
            print!("{}", emit_report(&args.out)?);
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
