//! Command-line entry point for the mini-speech pipeline.
//!
//! `minispeech run --config run.toml` executes the configured stage chain
//! with caching; the per-stage subcommands force a single stage to run.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pipeline::{compare_runs, execute_stage, run_pipeline, RunConfig, RunPaths};

#[derive(Parser)]
#[command(name = "minispeech", about = "Desk-scale spoken language modeling pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the configured stage chain, skipping up-to-date stages.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Force one stage to run, ignoring its cache stamp.
    Stage {
        #[arg(long)]
        config: PathBuf,
        /// Stage name: synth, train-cpc, extract, kmeans, quantize,
        /// train-dc, second-round, train-lm, score, eval-abx, eval-pairs,
        /// eval-simi, or report.
        name: String,
    },
    /// Print metric deltas between two finished run directories.
    Compare {
        run_a: PathBuf,
        run_b: PathBuf,
    },
}

fn force_stage(cfg: &RunConfig, name: &str) -> pipeline::Result<()> {
    let paths = RunPaths::new(&cfg.out_dir);
    std::fs::create_dir_all(&paths.root)?;
    let tmp = paths.root.join(format!(".tmp-{name}"));
    if tmp.exists() {
        std::fs::remove_dir_all(&tmp)?;
    }
    std::fs::create_dir_all(&tmp)?;
    execute_stage(name, cfg, &paths, &tmp)?;
    let dst = paths.stage(name);
    if dst.exists() {
        std::fs::remove_dir_all(&dst)?;
    }
    std::fs::rename(&tmp, &dst)?;
    // the stage ran outside the cached chain, so its stamp is stale
    let _ = std::fs::remove_file(paths.root.join("stamps").join(name));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config } => RunConfig::load(&config).and_then(|cfg| {
            let outcome = run_pipeline(&cfg)?;
            for s in &outcome.skipped {
                println!("skip {s} (up to date)");
            }
            for s in &outcome.executed {
                println!("ran  {s}");
            }
            Ok(())
        }),
        Command::Stage { config, name } => {
            RunConfig::load(&config).and_then(|cfg| force_stage(&cfg, &name))
        }
        Command::Compare { run_a, run_b } => compare_runs(&run_a, &run_b).map(|cmp| {
            print!("{}", cmp.to_text());
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
