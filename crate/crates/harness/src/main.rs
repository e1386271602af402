use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ums_harness::{run_all, run_verb, ExperimentManifest, Result, RunContext, Verb};

#[derive(Debug, Parser)]
#[command(name = "ums", version, about = "Uncertainty-guided manifold smoothing experiments")]
struct Cli {
    /// Manifest JSON; the built-in default is used when omitted.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,

    /// Output directory, overriding the manifest.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Root seed, overriding the manifest.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate every phantom under every protocol and score the FBP images.
    Simulate,
    /// Train the toy denoiser and classifier on the oracle world.
    Train,
    /// Run three-stage generation and summarise the entropy lift.
    Ums,
    /// Score trained checkpoints against the oracle.
    Eval,
    /// Write plot data from earlier runs.
    Report,
    /// Run simulate, train, ums, eval and report in order.
    All,
    /// Print the effective manifest as JSON.
    Manifest,
}

fn run(cli: Cli) -> Result<()> {
    let manifest = match &cli.manifest {
        Some(path) => ExperimentManifest::load(path)?,
        None => ExperimentManifest::default(),
    };
    let ctx = RunContext::new(manifest, cli.out, cli.seed)?;
    match cli.command {
        Command::Simulate => run_verb(&ctx, Verb::Simulate),
        Command::Train => run_verb(&ctx, Verb::Train),
        Command::Ums => run_verb(&ctx, Verb::Ums),
        Command::Eval => run_verb(&ctx, Verb::Eval),
        Command::Report => run_verb(&ctx, Verb::Report),
        Command::All => run_all(&ctx),
        Command::Manifest => {
            print!("{}", ctx.manifest.to_json());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
