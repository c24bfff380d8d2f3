use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use defog_cli::{EvalPaths, HeatmapTarget, Settings, TrainPaths};

#[derive(Parser)]
#[command(name = "defog", version, about = "Simulate fog-of-war games, train and evaluate hidden-state predictors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra key=value pairs applied after the configuration file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Write the log here instead of stdout.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct Grid {
    /// Cell stride in walk tiles; the cell side defaults to the same value.
    #[arg(long, default_value_t = 32)]
    g: usize,
    /// Prediction horizon in seconds.
    #[arg(long, default_value_t = 15.0)]
    s: f64,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic replays and a manifest.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        games: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Partition a manifest into train/valid/test by game.
    Split {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Featurize every game and verify count-grid invariants.
    FeaturizeCheck {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        grid: Grid,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Train an encoder-decoder model and save the best checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        grid: Grid,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        valid: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// F1 over the threshold grid for one predictor on validation data.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        grid: Grid,
        #[arg(long)]
        valid: PathBuf,
        /// Baseline name (Input, PS, PM, PM+R) or checkpoint path.
        #[arg(long)]
        predictor: String,
    },
    /// Score baselines and checkpoints at one (g, s).
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        grid: Grid,
        #[arg(long)]
        valid: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long = "model")]
        models: Vec<PathBuf>,
    },
    /// Aligned score table over several (g, s) settings.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        valid: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// Comma separated g:s pairs.
        #[arg(long, default_value = "64:15,32:30,32:15,32:5,32:0")]
        grid: String,
        /// Checkpoint for one setting, as g:s=path.
        #[arg(long = "model")]
        models: Vec<String>,
        /// Also write machine-readable lines here.
        #[arg(long)]
        machine: Option<PathBuf>,
    },
    /// Input, predicted and real graymaps for one game step and unit type.
    Heatmap {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        grid: Grid,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        predictor: String,
        #[arg(long, default_value_t = 0)]
        game: usize,
        #[arg(long, default_value_t = 0)]
        player: usize,
        #[arg(long, default_value_t = 0)]
        step: usize,
        /// Unit type name or id.
        #[arg(long = "type")]
        unit_type: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn open_log(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn settings(c: &Common) -> Result<Settings> {
    Settings::load(c.config.as_deref(), c.seed, &c.set)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { common, games, out } => {
            let mut log = open_log(common.log.as_deref())?;
            defog_cli::simulate(settings(&common)?, games, &out, &mut log)?;
            log.flush()?;
        }
        Command::Split { common, manifest, out } => {
            let mut log = open_log(common.log.as_deref())?;
            defog_cli::split_command(settings(&common)?, &manifest, &out, &mut log)?;
            log.flush()?;
        }
        Command::FeaturizeCheck { common, grid, manifest } => {
            let mut log = open_log(common.log.as_deref())?;
            defog_cli::featurize_check(settings(&common)?, &manifest, grid.g, grid.s, &mut log)?;
            log.flush()?;
        }
        Command::Train { common, grid, train, valid, out } => {
            let mut log = open_log(common.log.as_deref())?;
            let result = defog_cli::train_command(
                settings(&common)?,
                TrainPaths { train: &train, valid: &valid, out: &out },
                grid.g,
                grid.s,
                &mut log,
            );
            log.flush()?;
            result?;
        }
        Command::Sweep { common, grid, valid, predictor } => {
            let mut log = open_log(common.log.as_deref())?;
            defog_cli::sweep_command(settings(&common)?, &valid, &predictor, grid.g, grid.s, &mut log)?;
            log.flush()?;
        }
        Command::Evaluate { common, grid, valid, test, models } => {
            let mut log = open_log(common.log.as_deref())?;
            defog_cli::evaluate_command(
                settings(&common)?,
                EvalPaths { valid: &valid, test: &test },
                &models,
                grid.g,
                grid.s,
                &mut log,
            )?;
            log.flush()?;
        }
        Command::Report { common, valid, test, grid, models, machine } => {
            let mut log = open_log(common.log.as_deref())?;
            defog_cli::report_command(
                settings(&common)?,
                EvalPaths { valid: &valid, test: &test },
                &grid,
                &models,
                machine.as_deref(),
                &mut log,
            )?;
            log.flush()?;
        }
        Command::Heatmap { common, grid, manifest, predictor, game, player, step, unit_type, out } => {
            let mut log = open_log(common.log.as_deref())?;
            let target = HeatmapTarget { game, player, step, unit_type };
            defog_cli::heatmap_command(settings(&common)?, &manifest, &predictor, &target, grid.g, grid.s, &out, &mut log)?;
            log.flush()?;
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
