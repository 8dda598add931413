use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use kge_core::commands::{
    cmd_consensus, cmd_eval, cmd_ingest, cmd_rank, cmd_train, EvalOptions, RankOptions, CHECKPOINT_FILE,
};
use kge_core::config::RunConfig;
use kge_core::eval::{SettingChoice, SidePolicy};
use kge_core::graph::SplitRatios;
use kge_core::repurpose::Reduction;
use kge_core::{KgeError, Result};

/// Knowledge-graph embedding training, evaluation and candidate ranking.
#[derive(Parser)]
#[command(name = "kge", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split a triple file into train/valid/test and write the dictionaries.
    Ingest {
        triples: PathBuf,
        out_dir: PathBuf,
        /// Train,valid,test fractions.
        #[arg(long)]
        ratios: Option<SplitRatios>,
        #[command(flatten)]
        common: Common,
    },
    /// Train a model described by a config file.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from the checkpoint in checkpoint_dir.
        #[arg(long)]
        resume: bool,
    },
    /// Link-prediction metrics for a checkpoint.
    Eval {
        #[command(flatten)]
        model: ModelArgs,
        /// Triple file to rank; defaults to <data>/test.tsv.
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        setting: Option<SettingChoice>,
        #[arg(long)]
        side: Option<SidePolicy>,
        /// Also write metrics and per-query ranks to this directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Rank candidate drugs against targets through treatment relations.
    Rank {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        drugs: Option<PathBuf>,
        #[arg(long)]
        targets: Option<PathBuf>,
        #[arg(long)]
        relations: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        /// Skip unknown names with a warning instead of failing.
        #[arg(long)]
        lenient: bool,
        #[arg(long)]
        reduction: Option<Reduction>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Intersect ranking files from several models.
    Consensus {
        #[arg(required = true)]
        lists: Vec<PathBuf>,
        /// One drug name per line; appends a hits=<n> line.
        #[arg(long)]
        trials: Option<PathBuf>,
        /// Keep drugs found in at least this many lists (default: all).
        #[arg(long)]
        min_models: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ModelArgs {
    /// Defaults to <checkpoint_dir>/model.kge from the config.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Directory with the dictionaries and splits.
    #[arg(long)]
    data: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        Ok(config)
    }
}

impl ModelArgs {
    fn resolve(&self, config: &RunConfig) -> Result<(PathBuf, PathBuf)> {
        let checkpoint = match (&self.checkpoint, &config.checkpoint_dir) {
            (Some(path), _) => path.clone(),
            (None, Some(dir)) => dir.join(CHECKPOINT_FILE),
            (None, None) => return Err(KgeError::Config("pass --checkpoint or set checkpoint_dir".into())),
        };
        let data = match (&self.data, &config.data_dir) {
            (Some(path), _) => path.clone(),
            (None, Some(dir)) => dir.clone(),
            (None, None) => return Err(KgeError::Config("pass --data or set data_dir".into())),
        };
        Ok((checkpoint, data))
    }
}

fn pick(flag: Option<PathBuf>, from_config: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
    match flag.or_else(|| from_config.clone()) {
        Some(path) => Ok(path),
        None => Err(KgeError::Config(format!("pass --{key} or set `{key}` in the config"))),
    }
}

/// `KGE_THREADS`: unset, empty or 0 means single-threaded.
fn threads() -> Result<usize> {
    match std::env::var("KGE_THREADS") {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map_err(|_| KgeError::Config(format!("KGE_THREADS must be a number, got `{v}`"))),
        _ => Ok(0),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest {
            triples,
            out_dir,
            ratios,
            common,
        } => {
            let config = common.load()?;
            let summary = cmd_ingest(&triples, &out_dir, ratios.unwrap_or(config.split), config.seed)?;
            println!("{summary}");
        }
        Command::Train { common, resume } => {
            if common.config.is_none() {
                return Err(KgeError::Config("train needs --config".into()));
            }
            let config = common.load()?;
            println!("{}", cmd_train(&config, resume, threads()?)?);
        }
        Command::Eval {
            model,
            test,
            setting,
            side,
            out,
            common,
        } => {
            let config = common.load()?;
            let (checkpoint, data) = model.resolve(&config)?;
            let options = EvalOptions {
                setting: setting.unwrap_or(config.setting),
                side: side.unwrap_or(config.side),
                test_file: test,
                out_dir: out,
                threads: threads()?,
            };
            let reports = cmd_eval(&checkpoint, &data, &options)?;
            let blocks: Vec<String> = reports.iter().map(|r| r.to_kv()).collect();
            print!("{}", blocks.join("\n"));
        }
        Command::Rank {
            model,
            drugs,
            targets,
            relations,
            k,
            lenient,
            reduction,
            out,
            common,
        } => {
            let config = common.load()?;
            let (checkpoint, data) = model.resolve(&config)?;
            let options = RankOptions {
                drugs: pick(drugs, &config.drugs, "drugs")?,
                targets: pick(targets, &config.targets, "targets")?,
                relations: pick(relations, &config.relations, "relations")?,
                k: k.unwrap_or(config.k),
                lenient: lenient || config.lenient,
                reduction: reduction.unwrap_or(config.reduction),
            };
            let outcome = cmd_rank(&checkpoint, &data, &options, &out)?;
            println!("ranked={}", outcome.ranked.len());
            println!("out={}", out.display());
        }
        Command::Consensus {
            lists,
            trials,
            min_models,
            out,
        } => {
            let outcome = cmd_consensus(&lists, trials.as_deref(), min_models, &out)?;
            println!("lists={}", outcome.report.lists.len());
            println!("selected={}", outcome.report.at_least(outcome.min_models).len());
            if let Some(v) = &outcome.validation {
                println!("hits={}", v.count());
            }
            println!("out={}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                if !e.to_string().contains(&s.to_string()) {
                    eprintln!("  caused by: {s}");
                }
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
