use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands::{cmd_gauss2d, cmd_gauss_highdim, cmd_morph, cmd_verify};
use crate::config::{load_config, Gauss2dConfig, HighDimConfig, ImageSource, MorphConfig, VerifyConfig};
use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;

#[derive(Debug, Parser)]
#[command(name = "gradnetot", version, about = "Optimal transport maps with monotone gradient networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON config file; unspecified fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
    /// Training iterations for every model, replacing the config's budgets.
    #[arg(long)]
    pub iterations: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Skewed 2-D Gaussian to the standard Gaussian with three networks.
    Gauss2d(Common),
    /// Random Gaussians to the standard Gaussian over several dimensions.
    GaussHighdim(Common),
    /// Transport between two grayscale images.
    Morph {
        #[command(flatten)]
        common: Common,
        /// Source image (PGM or IDX).
        #[arg(long)]
        source: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        source_index: usize,
        /// Target image (PGM or IDX).
        #[arg(long)]
        target: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        target_index: usize,
    },
    /// Structural checks on a saved checkpoint.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Number of sample inputs and random pairs.
        #[arg(long)]
        points: Option<usize>,
    },
}

fn no_iterations(common: &Common) -> CliResult<()> {
    match common.iterations {
        Some(_) => Err(CliError::Usage("verify does not train; --iterations is not accepted".into())),
        None => Ok(()),
    }
}

/// Parses `args` (program name first) and runs the chosen subcommand.
pub fn run<I, T>(args: I) -> CliResult<RunManifest>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::Usage(e.to_string()))?;
    dispatch(cli.command)
}

pub fn dispatch(command: Command) -> CliResult<RunManifest> {
    match command {
        Command::Gauss2d(c) => {
            let mut cfg: Gauss2dConfig = load_config(c.config.as_deref())?;
            if let Some(s) = c.seed {
                cfg.seed = s;
            }
            if let Some(n) = c.iterations {
                cfg.override_iterations(n);
            }
            cmd_gauss2d(&cfg, &c.out_dir)
        }
        Command::GaussHighdim(c) => {
            let mut cfg: HighDimConfig = load_config(c.config.as_deref())?;
            if let Some(s) = c.seed {
                cfg.seed = s;
            }
            if let Some(n) = c.iterations {
                cfg.override_iterations(n);
            }
            cmd_gauss_highdim(&cfg, &c.out_dir)
        }
        Command::Morph {
            common: c,
            source,
            source_index,
            target,
            target_index,
        } => {
            let mut cfg: MorphConfig = load_config(c.config.as_deref())?;
            if let Some(s) = c.seed {
                cfg.seed = s;
            }
            if let Some(n) = c.iterations {
                cfg.train.iterations = n;
            }
            if let Some(path) = source {
                cfg.source = Some(ImageSource { path, index: source_index });
            }
            if let Some(path) = target {
                cfg.target = Some(ImageSource { path, index: target_index });
            }
            cmd_morph(&cfg, &c.out_dir)
        }
        Command::Verify {
            common: c,
            checkpoint,
            points,
        } => {
            no_iterations(&c)?;
            let mut cfg: VerifyConfig = load_config(c.config.as_deref())?;
            if let Some(s) = c.seed {
                cfg.seed = s;
            }
            if checkpoint.is_some() {
                cfg.checkpoint = checkpoint;
            }
            if let Some(n) = points {
                cfg.points = n;
            }
            cmd_verify(&cfg, &c.out_dir)
        }
    }
}
