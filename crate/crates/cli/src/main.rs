//! `ddx`: synthesize distorted-image datasets, train the patch classifier,
//! run detection, and score results.
//!
//! Exit codes: 0 on success, 1 on operational errors, 2 when a requested
//! metric is undefined (e.g. evaluating against an empty ground-truth set).

mod commands;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "ddx",
    version,
    about = "Distorted-image dataset synthesis, patch-classifier training, and mAP evaluation"
)]
struct Cli {
    /// Master seed; every randomized stage derives from it deterministically.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker threads (0 = all cores). Results are identical for any value.
    #[arg(long, global = true, env = "DDX_THREADS", default_value_t = 0)]
    threads: usize,

    /// Print extra progress information.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the classification dataset (8 classes x 3 levels per reference).
    GenClass(commands::GenClassArgs),
    /// Build a detection dataset (locally distorted regions per image).
    GenDetect(commands::GenDetectArgs),
    /// Train the patch classifier on a manifest's train split.
    Train(commands::TrainArgs),
    /// Classification accuracy and confusion matrix on a split.
    EvalClass(commands::EvalClassArgs),
    /// Detection mAP over IoU thresholds on a split.
    EvalDetect(commands::EvalDetectArgs),
    /// 2x2 train-variant x test-variant transfer table.
    Transfer(commands::TransferArgs),
    /// Size-recall curve and mAP tables from saved predictions.
    Report(commands::ReportArgs),
    /// Apply one distortion to one image.
    Distort(commands::DistortArgs),
    /// Validate a manifest (schema, files, rect bounds, parameters).
    Verify(commands::VerifyArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
        {
            eprintln!("error: cannot size thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    let outcome = match cli.command {
        Command::GenClass(args) => commands::gen_class(args, cli.seed, cli.verbose),
        Command::GenDetect(args) => commands::gen_detect(args, cli.seed, cli.verbose),
        Command::Train(args) => commands::train(args, cli.seed, cli.verbose),
        Command::EvalClass(args) => commands::eval_class(args, cli.verbose),
        Command::EvalDetect(args) => commands::eval_detect(args, cli.verbose),
        Command::Transfer(args) => commands::transfer(args, cli.verbose),
        Command::Report(args) => commands::report(args, cli.verbose),
        Command::Distort(args) => commands::distort(args, cli.seed),
        Command::Verify(args) => commands::verify(args),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            let undefined = err
                .downcast_ref::<ddx_core::Error>()
                .is_some_and(|e| matches!(e, ddx_core::Error::UndefinedMetric(_)));
            ExitCode::from(if undefined { 2 } else { 1 })
        }
    }
}
