use std::path::PathBuf;
use std::process::ExitCode;

use bpc::cli::{self, Command, Overrides, RunConfig};
use clap::Parser;

/// Train and evaluate predictive coding networks.
#[derive(Debug, Parser)]
#[command(name = "bpc", version)]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// Run config (TOML, or JSON with a .json extension).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named preset: xor, mnist-supervised, mnist-unsupervised, mnist-partial,
    /// bimodal, occlusion-sweep.
    #[arg(long)]
    preset: Option<String>,
    /// Model within the preset (bpc, discpc, genpc, hybridpc, discbp, ...).
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (also settable with BPC_OUT).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Input checkpoint for every command except train.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Inference steps of the command being run.
    #[arg(long)]
    steps: Option<usize>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let cfg = match &args.config {
        Some(p) => RunConfig::from_file(p),
        None => Ok(RunConfig::default()),
    };
    let ov = Overrides {
        preset: args.preset,
        model: args.model,
        seed: args.seed,
        out: args.out,
        checkpoint: args.checkpoint,
        epochs: args.epochs,
        steps: args.steps,
    };
    let resolved = cfg.and_then(|c| cli::resolve(args.command, c, ov));
    let out = resolved.as_ref().ok().map(|r| r.out.clone());
    match resolved.and_then(cli::run) {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            if let Some(out) = out {
                cli::write_error_record(&out, &e);
            }
            eprintln!("{}", cli::error_record(&e));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
