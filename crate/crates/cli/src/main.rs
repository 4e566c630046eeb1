use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use voicefilter::config::PipelineConfig;

mod commands;
mod output;

use output::{CliError, Output};

/// Few-shot voice conversion: corpus building, training, inference and
/// evaluation.
#[derive(Debug, Parser)]
#[command(name = "voicefilter", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Pipeline configuration (TOML).
    #[arg(long, env = "VF_CONFIG", global = true)]
    pub config: Option<PathBuf>,
    /// Print a machine-readable result on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    /// Worker threads; 1 is the deterministic baseline.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// More log output on stderr (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the synthetic multi-speaker world (alignments and WAVs).
    GenToy(commands::GenToy),
    /// Build a frame-aligned parallel corpus from alignments and audio.
    BuildCorpus(commands::BuildCorpus),
    /// Train the speaker embedder on the target side of corpora.
    TrainEmbedder(commands::TrainEmbedder),
    /// Train the multi-speaker background model.
    TrainVf(commands::TrainVf),
    /// Fine-tune a background model on one target speaker; writes a profile.
    Finetune(commands::Finetune),
    /// Package an existing model with a target speaker's statistics.
    MakeProfile(commands::MakeProfile),
    /// Convert alignments to the profile's voice.
    Infer(commands::Infer),
    /// Cosine speaker-embedding distance of synthesized to reference audio.
    EvalCsed(commands::EvalCsed),
    /// Fréchet distance of embedder frame activations.
    EvalCfsd(commands::EvalCfsd),
    /// MUSHRA means, intervals and Holm-corrected paired t-tests.
    EvalMushra(commands::EvalMushra),
    /// Run the built-in invariant checks.
    Verify(commands::Verify),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenToy(_) => "gen-toy",
            Command::BuildCorpus(_) => "build-corpus",
            Command::TrainEmbedder(_) => "train-embedder",
            Command::TrainVf(_) => "train-vf",
            Command::Finetune(_) => "finetune",
            Command::MakeProfile(_) => "make-profile",
            Command::Infer(_) => "infer",
            Command::EvalCsed(_) => "eval-csed",
            Command::EvalCfsd(_) => "eval-cfsd",
            Command::EvalMushra(_) => "eval-mushra",
            Command::Verify(_) => "verify",
        }
    }
}

fn load_config(g: &Global) -> Result<PipelineConfig, CliError> {
    let cfg = match &g.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    Ok(match g.seed {
        Some(s) => cfg.seeded(s),
        None => cfg,
    })
}

fn run(cli: Cli) -> Result<Output, CliError> {
    if let Some(n) = cli.global.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let cfg = load_config(&cli.global)?;
    let result = match &cli.command {
        Command::GenToy(c) => c.run(&cfg),
        Command::BuildCorpus(c) => c.run(&cfg),
        Command::TrainEmbedder(c) => c.run(&cfg),
        Command::TrainVf(c) => c.run(&cfg),
        Command::Finetune(c) => c.run(&cfg),
        Command::MakeProfile(c) => c.run(&cfg),
        Command::Infer(c) => c.run(&cfg),
        Command::EvalCsed(c) => c.run(&cfg),
        Command::EvalCfsd(c) => c.run(&cfg),
        Command::EvalMushra(c) => c.run(&cfg),
        Command::Verify(c) => c.run(&cfg),
    }?;
    Ok(Output {
        command: cli.command.name(),
        seed: cfg.seed,
        ..result
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();
    let json = cli.global.json;
    match run(cli) {
        Ok(out) => {
            out.print(json);
            ExitCode::from(out.exit_code)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
