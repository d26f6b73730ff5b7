mod commands;
mod config;
mod failure;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{parse_overrides, PipelineConfig};
use failure::{Failure, Kind};

/// Query-by-document re-ranking pipeline. Every command reads its inputs from
/// and writes its artifact to the work directory.
#[derive(Parser)]
#[command(name = "rprs", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Flags {
    /// `--config FILE` and config overrides such as `--rprs.n 5` or `--method sdr`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "OPTIONS")]
    options: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Split corpus and queries into sentences.
    Segment(Flags),
    /// Build the BM25 inverted index over the segmented corpus.
    Index(Flags),
    /// Validate and import externally computed sentence embeddings.
    IngestEmbeddings(Flags),
    /// Embed every sentence with the deterministic stub embedder.
    StubEmbed(Flags),
    /// Run the BM25 first stage for every query.
    Retrieve(Flags),
    /// Re-rank the first-stage run with the configured method.
    Rerank(Flags),
    /// Score a run against relevance judgments.
    Evaluate(Flags),
    /// Grid-search re-ranking parameters, then sweep the depth.
    Tune(Flags),
    /// Truncation and unit-size sweeps over the raw corpus.
    Sweep(Flags),
    /// Length correlation, retrieval probability by length, optional t-test.
    Analyze(Flags),
    /// Generate a synthetic corpus with planted relevant documents.
    Synth(Flags),
}

fn dispatch(command: Command) -> Result<String, Failure> {
    let (flags, run): (Flags, fn(&PipelineConfig) -> commands::Outcome) = match command {
        Command::Segment(f) => (f, commands::segment),
        Command::Index(f) => (f, commands::index),
        Command::IngestEmbeddings(f) => (f, commands::ingest_embeddings),
        Command::StubEmbed(f) => (f, commands::stub_embed_cmd),
        Command::Retrieve(f) => (f, commands::retrieve_cmd),
        Command::Rerank(f) => (f, commands::rerank),
        Command::Evaluate(f) => (f, commands::evaluate),
        Command::Tune(f) => (f, commands::tune),
        Command::Sweep(f) => (f, commands::sweep),
        Command::Analyze(f) => (f, commands::analyze),
        Command::Synth(f) => (f, commands::synth),
    };
    let (file, overrides) = parse_overrides(&flags.options)?;
    let config = PipelineConfig::resolve(file.as_deref(), &overrides)?;
    run(&config)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = catch_unwind(AssertUnwindSafe(|| dispatch(cli.command)))
        .unwrap_or_else(|_| Err(Failure::new(Kind::Internal, "internal invariant violated")));
    match outcome {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("{}", f.to_json());
            ExitCode::from(f.code as u8)
        }
    }
}
