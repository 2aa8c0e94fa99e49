//! Command-line harness: config files, checkpoints and the subcommands
//! of the `usgan` binary.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod experiment;

use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{CommandFactory, Parser, Subcommand, ValueEnum};

pub use checkpoint::{Checkpoint, Entry, FORMAT_VERSION, MAGIC};
pub use commands::{
    cmd_eval_gan, cmd_phantom, cmd_synth, cmd_train, EvalGanArgs, PhantomArgs, Stage, SynthArgs,
    TrainArgs,
};
pub use config::{RunConfig, WORKERS_ENV};
pub use experiment::{cmd_experiment, CellResult, ExperimentArgs, ExperimentOutcome};

use crate::data::Label;
use crate::gan::Variant;

#[derive(Parser, Debug)]
#[command(
    name = "usgan",
    version,
    about = "Stacked GAN augmentation for ultrasound phantoms"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StageArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    #[value(name = "clf")]
    Classifier,
}

impl From<StageArg> for Stage {
    fn from(s: StageArg) -> Self {
        match s {
            StageArg::One => Stage::One,
            StageArg::Two => Stage::Two,
            StageArg::Classifier => Stage::Classifier,
        }
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate the phantom dataset with its manifest.
    Phantom {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train Stage-I, Stage-II or the classifier.
    Train {
        #[arg(long, value_enum)]
        stage: StageArg,
        #[arg(long)]
        variant: Option<Variant>,
        /// Class whose images the GAN is trained on.
        #[arg(long)]
        class: Option<Label>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Stage-I checkpoint, required for --stage 2.
        #[arg(long)]
        stage1_ckpt: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Sample images from a trained generator.
    Synth {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a directory of generated images against real ones.
    EvalGan {
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        fake: PathBuf,
        /// Classifier checkpoint used as feature extractor.
        #[arg(long)]
        extractor: PathBuf,
        /// CSV file the result row is appended to.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "custom")]
        variant: String,
        #[arg(long)]
        class: Label,
    },
    /// Run the ablation grid and write the summary tables.
    Experiment {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Executes a parsed command line. Returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Phantom { config, seed, out } => {
            let shown = out.display().to_string();
            cmd_phantom(&PhantomArgs { config, seed, out }).map(|ds| {
                println!(
                    "wrote {} images of {} subjects to {shown}",
                    ds.num_images(),
                    ds.subjects.len()
                );
            })
        }
        Command::Train {
            stage,
            variant,
            class,
            config,
            seed,
            out,
            stage1_ckpt,
            data,
        } => {
            if stage == StageArg::Two && stage1_ckpt.is_none() {
                Cli::command()
                    .error(
                        ErrorKind::MissingRequiredArgument,
                        "--stage 2 requires --stage1-ckpt <PATH>",
                    )
                    .exit();
            }
            let args = TrainArgs {
                stage: stage.into(),
                variant,
                class,
                config,
                seed,
                out,
                stage1_ckpt,
                data,
            };
            cmd_train(&args).map(|log| {
                if let Some(last) = log.steps.last() {
                    println!(
                        "finished {} steps, final loss_d {:.4}",
                        log.steps.len(),
                        last.loss_d
                    );
                }
            })
        }
        Command::Synth { ckpt, n, seed, out } => cmd_synth(&SynthArgs { ckpt, n, seed, out })
            .map(|imgs| println!("wrote {} images", imgs.len())),
        Command::EvalGan {
            real,
            fake,
            extractor,
            out,
            variant,
            class,
        } => cmd_eval_gan(&EvalGanArgs {
            real_dir: real,
            fake_dir: fake,
            extractor_ckpt: extractor,
            out,
            variant,
            class,
        })
        .map(|r| {
            if let Some(row) = r.table1_row() {
                println!("{row}");
            }
        }),
        Command::Experiment { config, data, out } => {
            match cmd_experiment(&ExperimentArgs { config, out, data }) {
                Ok(outcome) => {
                    print!("{}", outcome.table2);
                    let failed = outcome.failures();
                    for c in &failed {
                        eprintln!(
                            "cell r{} {} failed: {}",
                            c.repeat,
                            c.variant,
                            c.outcome.as_ref().unwrap_err()
                        );
                    }
                    return if failed.is_empty() { 0 } else { 2 };
                }
                Err(e) => Err(e),
            }
        }
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
