mod commands;
mod config;
mod error;
mod tables;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "wwkit", version, about = "Wake-word data pipeline: augment, mine, train, decode, evaluate")]
struct Cli {
    /// TOML pipeline config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set mining.theta_p=0.7`. Repeatable.
    #[arg(long = "set", value_name = "K=V", global = true)]
    overrides: Vec<String>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0, global = true)]
    jobs: usize,
    /// Overrides `rng_seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Parent directory of run directories.
    #[arg(long, default_value = "runs", global = true)]
    out: PathBuf,
    /// Append a Unix timestamp to the run directory name.
    #[arg(long, global = true)]
    timestamp: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Synthesize random-room impulse responses.
    RirGen,
    /// Build a multi-condition dataset from clean audio.
    Augment,
    /// Select lexicon words close to the wake word.
    Confusables,
    /// Mine positives and negatives from ASR hypotheses.
    Mine,
    /// Compute log filterbank features.
    Featurize,
    /// Train a spotter from an utterance list.
    Train,
    /// Score an utterance list with a trained spotter.
    Decode,
    /// FRR and FAR of decoded detections.
    Eval,
    /// DET curves of one or more decode runs.
    Det,
    /// Synthetic clean-only versus multi-condition comparison.
    E2eDemo,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::RirGen => "rir-gen",
            Command::Augment => "augment",
            Command::Confusables => "confusables",
            Command::Mine => "mine",
            Command::Featurize => "featurize",
            Command::Train => "train",
            Command::Decode => "decode",
            Command::Eval => "eval",
            Command::Det => "det",
            Command::E2eDemo => "e2e-demo",
        }
    }
}

fn run_dir(cli: &Cli, cfg: &config::PipelineConfig) -> PathBuf {
    let mut name = format!("{}-{}", cli.command.name(), cfg.hash(cli.command.name()));
    if cli.timestamp {
        let secs = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        name.push_str(&format!("-{secs}"));
    }
    cli.out.join(name)
}

fn run(cli: &Cli) -> Result<PathBuf, CliError> {
    let mut cfg = config::load(cli.config.as_deref(), &cli.overrides)?;
    if let Some(s) = cli.seed {
        cfg.rng_seed = s;
    }
    let dir = run_dir(cli, &cfg);
    std::fs::create_dir_all(&dir).map_err(|e| error::write_failed(&dir, e))?;
    std::fs::write(
        dir.join("config.toml"),
        toml::to_string(&cfg).expect("config serializes"),
    )
    .map_err(|e| error::write_failed(&dir, e))?;
    let out: &Path = &dir;
    wwkit::exec::with_jobs(cli.jobs, || match cli.command {
        Command::RirGen => commands::rir_gen(&cfg, out),
        Command::Augment => commands::augment(&cfg, out),
        Command::Confusables => commands::confusables(&cfg, out),
        Command::Mine => commands::mine_cmd(&cfg, out),
        Command::Featurize => commands::featurize(&cfg, out),
        Command::Train => commands::train_cmd(&cfg, out),
        Command::Decode => commands::decode_cmd(&cfg, out),
        Command::Eval => commands::eval(&cfg, out),
        Command::Det => commands::det(&cfg, out),
        Command::E2eDemo => commands::e2e_demo(&cfg, out),
    })?;
    Ok(dir)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("wwkit {}: {e}", cli.command.name());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
