mod bench;
mod check;
mod run;
mod source;

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use fluxmem_core::stream::write_stream;

#[derive(Debug, Parser)]
#[command(
    name = "fluxmem",
    version,
    about = "Streaming token memory: replay, benchmark and oracle checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize a scene spec into an FMTS stream.
    Gen {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay a stream through the memory engine.
    Run(run::RunArgs),
    /// Sweep drop policies over a stream.
    Bench(bench::BenchArgs),
    /// Check fast paths against brute-force references.
    Oracle(check::OracleArgs),
}

fn generate(spec: &Path, out: &Path) -> Result<()> {
    let grids: Vec<_> = source::load_spec(spec)?
        .generate()?
        .into_iter()
        .map(|f| f.grid)
        .collect();
    let file = File::create(out).with_context(|| format!("creating {}", out.display()))?;
    let bytes = write_stream(&grids, BufWriter::new(file))?;
    eprintln!(
        "wrote {} frames ({bytes} bytes) to {}",
        grids.len(),
        out.display()
    );
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Gen { spec, out } => generate(&spec, &out),
        Command::Run(args) => {
            let summary = run::run(&args)?;
            eprintln!(
                "{} frames, drop ratio {:.4}, {} triggers, mean ingest {:.0} us",
                summary.frames, summary.final_drop_ratio, summary.triggers, summary.mean_ingest_us
            );
            Ok(())
        }
        Command::Bench(args) => bench::bench(&args).map(drop),
        Command::Oracle(args) => check::oracle(&args).map(drop),
    }
}
