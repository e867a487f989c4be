//! The `vaediff` command line: one subcommand per pipeline stage, all
//! reading a shared [`RunConfig`].
//!
//! ```text
//! vaediff [--config run.toml] [--seed N] [--out DIR] [--section.key=value ...] <stage>
//! ```
//!
//! Stages, in pipeline order: `simulate`, `train-vae`, `train-diffusion`,
//! `generate`, `rebalance`, `eval-quality`, `fit-predictor`, `fit-zip`,
//! `evaluate`, `explain`. `pipeline` runs them all. Every stage writes
//! `manifests/<stage>.json` under the output directory.

pub mod config;
pub mod error;
pub mod manifest;
pub mod stages;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::{Override, RunConfig};
pub use error::{CliError, CliResult};
pub use manifest::{Manifest, ManifestBuilder};
pub use stages::Stage;

#[derive(Debug, Parser)]
#[command(
    name = "vaediff",
    version,
    about = "VAE-diffusion rebalancing of zero-inflated count data",
    after_help = "Per-stage overrides: --section.key=value (e.g. --vae.epochs=50). \
                  Precedence: defaults < --config file < overrides < --seed/--out."
)]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Base seed; stage seeds not set explicitly derive from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Simulate a zero-inflated crash-count dataset.
    Simulate,
    /// Train the VAE on the non-zero training rows.
    TrainVae,
    /// Train the latent diffusion model.
    TrainDiffusion,
    /// Generate synthetic non-zero rows.
    Generate,
    /// Append the synthetic rows to the training split.
    Rebalance,
    /// Score synthetic rows against the real non-zero rows.
    EvalQuality,
    /// Fit gradient-boosted trees on the imbalanced and rebalanced data.
    FitPredictor,
    /// Fit the zero-inflated Poisson baseline.
    FitZip,
    /// Report held-out MSE for every fitted model.
    Evaluate,
    /// Shapley attributions for one fitted model.
    Explain,
    /// Run every stage in order.
    Pipeline,
    /// Print the resolved configuration as TOML.
    ShowConfig,
}

impl Command {
    fn stages(self) -> Vec<Stage> {
        match self {
            Command::Simulate => vec![Stage::Simulate],
            Command::TrainVae => vec![Stage::TrainVae],
            Command::TrainDiffusion => vec![Stage::TrainDiffusion],
            Command::Generate => vec![Stage::Generate],
            Command::Rebalance => vec![Stage::Rebalance],
            Command::EvalQuality => vec![Stage::EvalQuality],
            Command::FitPredictor => vec![Stage::FitPredictor],
            Command::FitZip => vec![Stage::FitZip],
            Command::Evaluate => vec![Stage::Evaluate],
            Command::Explain => vec![Stage::Explain],
            Command::Pipeline => Stage::ALL.to_vec(),
            Command::ShowConfig => Vec::new(),
        }
    }
}

/// Pulls `--section.key=value` arguments out of `args`.
pub fn split_overrides(args: Vec<OsString>) -> CliResult<(Vec<OsString>, Vec<Override>)> {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    for a in args {
        match a.to_str().and_then(|s| s.strip_prefix("--")) {
            Some(body) if body.split('=').next().is_some_and(|k| k.contains('.')) && body.contains('=') => {
                overrides.push(Override::parse(body)?)
            }
            _ => rest.push(a),
        }
    }
    Ok((rest, overrides))
}

/// Resolves the config from parsed flags and overrides.
pub fn resolve_config(cli: &Cli, overrides: &[Override]) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::load(cli.config.as_deref(), overrides)?;
    if let Some(seed) = cli.seed {
        cfg.seeds.base = seed;
    }
    if let Some(out) = &cli.out {
        cfg.paths.out = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> CliResult<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let (rest, overrides) = split_overrides(args.into_iter().map(Into::into).collect())?;
    let cli = match Cli::try_parse_from(rest) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => {
            return Err(CliError::Usage {
                message: e.to_string().trim_end().to_string(),
            })
        }
    };
    let cfg = resolve_config(&cli, &overrides)?;
    if let Command::ShowConfig = cli.command {
        print!("{}", cfg.to_toml_string()?);
        return Ok(());
    }
    for stage in cli.command.stages() {
        let manifest = stage.run(&cfg)?;
        log::info!("{} done, manifest {}", stage.name(), manifest.display());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_are_separated_from_flags() {
        let args = ["vaediff", "--vae.epochs=3", "--out", "x.d", "simulate", "--simulate.n_rows=10"];
        let (rest, o) = split_overrides(args.iter().map(OsString::from).collect()).unwrap();
        assert_eq!(rest, ["vaediff", "--out", "x.d", "simulate"].map(OsString::from));
        assert_eq!(o.len(), 2);
        assert_eq!(o[1].path, ["simulate", "n_rows"]);
    }

    #[test]
    fn flags_beat_overrides() {
        let cli = Cli::try_parse_from(["vaediff", "--seed", "5", "--out", "o", "simulate"]).unwrap();
        let o = [Override::parse("seeds.base=9").unwrap(), Override::parse("paths.out=p").unwrap()];
        let cfg = resolve_config(&cli, &o).unwrap();
        assert_eq!(cfg.seeds.base, 5);
        assert_eq!(cfg.paths.out, PathBuf::from("o"));
    }
}
