use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use scoreseg_cli::commands::{self, RunContext};
use scoreseg_cli::manifest::{ManifestError, RunManifest};

#[derive(Parser)]
#[command(name = "scoreseg", version, about = "Score-informed segmentation and separation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run manifest (JSON). Defaults to the shipped manifest.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Replaces the root seed and every sub-seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overriding the manifest's.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Synthesize the music and cinematic corpora.
    Synth,
    /// Train the unit HMMs on the training clips.
    TrainHmm,
    /// Forced alignment of every clip.
    Align,
    /// Unit-loop recognition of every clip.
    Recognize,
    /// Extract the segment inventory from the training alignments.
    Segment,
    /// Write a pseudo-mixture batch from the inventory.
    Mixgen,
    /// Learn separation templates.
    TrainSep,
    /// Separate the test clips and score the stems.
    Separate,
    /// Train the knowledge projector.
    ProjectKnowledge,
    /// Write the four evaluation tables.
    Eval,
    /// Run the acceptance criteria; exits with 3 if any fails.
    Repro,
}

fn load(cli: &Cli) -> anyhow::Result<RunContext> {
    let mut m = match &cli.manifest {
        Some(p) => RunManifest::load(p)?,
        None => {
            let mut m = RunManifest::default_manifest();
            m.output_dir = PathBuf::from("out");
            m
        }
    };
    if let Some(seed) = cli.seed {
        m.seed = seed;
        m.mixgen.augmentation.seed = seed;
        m.separator.seed = seed;
    }
    if let Some(out) = &cli.out {
        m.output_dir = out.clone();
    }
    RunContext::new(m)
}

fn run(cli: &Cli) -> anyhow::Result<bool> {
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()?;
    }
    let ctx = load(cli)?;
    match cli.command {
        Command::Synth => commands::cmd_synth(&ctx)?,
        Command::TrainHmm => commands::cmd_train_hmm(&ctx)?,
        Command::Align => {
            let r = commands::cmd_align(&ctx)?;
            println!("boundary MAE {:.2} frames over {} boundaries", r.overall_mae(), r.count());
        }
        Command::Recognize => {
            let c = commands::cmd_recognize(&ctx)?;
            println!("segment accuracy {:.4} over {} segments", c.accuracy(), c.total());
        }
        Command::Segment => {
            let inv = commands::cmd_segment(&ctx)?;
            println!("{} segments", inv.len());
        }
        Command::Mixgen => commands::cmd_mixgen(&ctx)?,
        Command::TrainSep => commands::cmd_train_sep(&ctx)?,
        Command::Separate => commands::cmd_separate(&ctx)?,
        Command::ProjectKnowledge => {
            commands::cmd_project_knowledge(&ctx)?;
        }
        Command::Eval => commands::cmd_eval(&ctx)?,
        Command::Repro => {
            let r = commands::cmd_repro(&ctx)?;
            for c in &r.criteria {
                println!("{}", c.line());
            }
            return Ok(r.all_passed());
        }
    }
    Ok(true)
}

fn error_record(e: &anyhow::Error) -> serde_json::Value {
    let problems: Vec<String> = match e.downcast_ref::<ManifestError>() {
        Some(ManifestError::Invalid(p)) => p.clone(),
        _ => Vec::new(),
    };
    let kind = if e.downcast_ref::<ManifestError>().is_some() { "manifest" } else { "runtime" };
    json!({
        "error": {
            "kind": kind,
            "message": e.to_string(),
            "chain": e.chain().skip(1).map(|c| c.to_string()).collect::<Vec<_>>(),
            "problems": problems,
        }
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SCORESEG_LOG", "error")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("{}", error_record(&e));
            ExitCode::from(2)
        }
    }
}
