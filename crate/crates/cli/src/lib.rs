//! Batch front end for the `stylo` library: configured, replayable runs.

pub mod commands;
pub mod config;
pub mod manifest;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use stylo::features::FeatureFamily;
use stylo::logreg::Penalty;

use config::RunConfig;
use manifest::{Job, SchemeChoice};

/// Stylometric classification experiments.
///
/// Settings come from a JSON config (`--config`); paths inside it are relative
/// to the config file. Flags override the config; paths given as flags are
/// relative to the working directory.
#[derive(Debug, Parser)]
#[command(name = "stylo", version)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    /// Global seed for fold shuffles and stability resamples.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for folds and resamples; all cores by default. Results do
    /// not depend on this value.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Comma-separated feature families, e.g. `unigram,ngram23,treelet`.
    #[arg(long, global = true, value_delimiter = ',')]
    pub families: Option<Vec<String>>,
    /// Corpus manifest (JSON lines).
    #[arg(long, global = true)]
    pub corpus: Option<PathBuf>,
    /// Matrix directory from a previous `featurize` run.
    #[arg(long, global = true)]
    pub matrix: Option<PathBuf>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build and save the feature matrix.
    Featurize,
    /// Fit one model on the whole matrix.
    Train {
        #[arg(long)]
        penalty: Option<Penalty>,
        #[arg(long)]
        c: Option<f64>,
    },
    /// Leave-one-out and/or nested cross-validation.
    Evaluate {
        #[arg(long, value_enum, default_value = "both")]
        scheme: SchemeChoice,
        /// Nested-CV trials, each with its own inner fold split.
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Correlations, stability selection and coefficient ranking.
    Analyze,
    /// Difference table between a LOO and a nested report.
    CompareCv {
        #[arg(long)]
        loo: PathBuf,
        #[arg(long)]
        nested: PathBuf,
    },
    /// Train the connective and relation classifiers.
    DiscourseTrain {
        #[arg(long)]
        connectives: Option<PathBuf>,
        #[arg(long)]
        annotations: Option<PathBuf>,
    },
    /// Re-run a recorded run from its manifest into --output-dir.
    Replay { manifest: PathBuf },
}

fn absolute(p: PathBuf) -> Result<PathBuf> {
    if p.is_absolute() {
        return Ok(p);
    }
    Ok(std::env::current_dir().context("reading the working directory")?.join(p))
}

fn build_config(global: &GlobalArgs) -> Result<RunConfig> {
    let mut cfg = match &global.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(p) = &global.output_dir {
        cfg.output_dir = Some(absolute(p.clone())?);
    }
    if let Some(p) = &global.corpus {
        cfg.corpus = Some(absolute(p.clone())?);
        cfg.matrix = None;
    }
    if let Some(p) = &global.matrix {
        cfg.matrix = Some(absolute(p.clone())?);
    }
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    if let Some(fams) = &global.families {
        cfg.families = fams
            .iter()
            .map(|s| s.trim())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<FeatureFamily>())
            .collect::<stylo::Result<_>>()?;
    }
    Ok(cfg)
}

pub fn run(cli: Cli) -> Result<()> {
    let jobs = cli.global.jobs;
    stylo::par::with_jobs(jobs, move || dispatch(cli))
}

fn dispatch(cli: Cli) -> Result<()> {
    if let Command::Replay { manifest } = &cli.command {
        let out = cli
            .global
            .output_dir
            .clone()
            .context("replay needs --output-dir")?;
        return commands::replay(manifest, &absolute(out)?);
    }
    let mut cfg = build_config(&cli.global)?;
    let job = match cli.command {
        Command::Featurize => Job::Featurize,
        Command::Train { penalty, c } => {
            if let Some(p) = penalty {
                cfg.train.penalty = p;
            }
            if let Some(c) = c {
                cfg.train.c = c;
            }
            Job::Train
        }
        Command::Evaluate { scheme, trials } => {
            if let Some(t) = trials {
                cfg.cv.trials = t;
            }
            Job::Evaluate { scheme }
        }
        Command::Analyze => Job::Analyze,
        Command::CompareCv { loo, nested } => Job::CompareCv {
            loo: absolute(loo)?,
            nested: absolute(nested)?,
        },
        Command::DiscourseTrain {
            connectives,
            annotations,
        } => {
            if let Some(p) = connectives {
                cfg.connectives = Some(absolute(p)?);
            }
            if let Some(p) = annotations {
                cfg.annotations = Some(absolute(p)?);
            }
            Job::DiscourseTrain
        }
        Command::Replay { .. } => unreachable!("handled above"),
    };
    if !matches!(job, Job::CompareCv { .. } | Job::DiscourseTrain) {
        cfg.family_set()?;
    }
    cfg.apply_seed();
    let out = cfg.output_dir()?.to_path_buf();
    commands::execute(&cfg, &job, &out)
}
