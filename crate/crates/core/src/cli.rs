//! Command-line front end.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::PipelineConfig;
use crate::error::Error;
use crate::pipeline::{unix_now, ModelKind, Pipeline, StepError};

#[derive(Debug, Parser)]
#[command(name = "impactsel", version, about = "Impact-energy indicator selection and regression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Config file (`key = value` lines).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Base seed; per-step seeds derive from it unless set explicitly.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the confirmation and training datasets.
    Synth(Common),
    /// Extract the candidate feature matrices.
    Extract {
        #[command(flatten)]
        common: Common,
        /// Extract from this dataset manifest instead.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Energy-sensitivity screening on the confirmation runs.
    Evaluate(Common),
    /// Ranking and selection of indicators, with EDA tables.
    Select(Common),
    /// Train and test one model.
    Train {
        #[command(flatten)]
        common: Common,
        /// 1 = selected indicators, 2 = correlation-filtered, 3 = all candidates.
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
        model: u8,
    },
    /// Models 1-3 side by side.
    Compare(Common),
    /// Every step in order.
    All(Common),
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Synth(c) | Command::Evaluate(c) | Command::Select(c) | Command::Compare(c) | Command::All(c) => c,
            Command::Extract { common, .. } | Command::Train { common, .. } => common,
        }
    }
}

/// Defaults, then the config file, then `PIPELINE_*` variables, then flags.
pub fn resolve_config<I, K, V>(common: &Common, env: I) -> Result<PipelineConfig, StepError>
where
    I: IntoIterator<Item = (K, V)>,
    K: AsRef<str>,
    V: AsRef<str>,
{
    let wrap = |error: Error| StepError { step: "config", error };
    let mut cfg = match &common.config {
        Some(p) => PipelineConfig::from_file(p).map_err(wrap)?,
        None => PipelineConfig::default(),
    };
    cfg.apply_env(env).map_err(wrap)?;
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

pub fn run(cli: Cli) -> Result<(), StepError> {
    let started = unix_now();
    let cfg = resolve_config(cli.command.common(), std::env::vars())?;
    let mut p = Pipeline::new(cfg)?;
    match &cli.command {
        Command::Synth(_) => p.write_synth()?,
        Command::Extract { dataset: Some(d), .. } => p.write_extract_dataset(d)?,
        Command::Extract { dataset: None, .. } => p.write_extract()?,
        Command::Evaluate(_) => p.write_evaluate()?,
        Command::Select(_) => p.write_select()?,
        Command::Train { model, .. } => {
            p.write_train(ModelKind::from_number(*model).expect("range checked by clap"))?
        }
        Command::Compare(_) => p.write_compare()?,
        Command::All(_) => p.write_all()?,
    }
    p.write_manifest(started)
}

fn report(e: &StepError) {
    eprintln!("{}", e.to_json());
}

/// Entry point for the binary. Failures print a JSON error object on
/// stderr and exit nonzero.
pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                e.exit();
            }
            report(&StepError {
                step: "args",
                error: Error::Config(e.to_string().trim().to_string()),
            });
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(&e);
            ExitCode::FAILURE
        }
    }
}
