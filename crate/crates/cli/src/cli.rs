//! Argument parsing and dispatch.

use std::path::PathBuf;

use cardio_core::conv::Padding;
use cardio_core::ef::EfModelConfig;
use cardio_core::lvd::LvdModelConfig;
use cardio_core::nn::{LossKind, TrainConfig};
use cardio_core::synth::SYNTH_FRAME_RATE;
use cardio_core::{Error, Result};
use clap::{Args, Parser, Subcommand};

use crate::commands::*;
use crate::report::Report;

#[derive(Debug, Parser)]
#[command(name = "cardio", version, about = "Factored video convolution, beat extraction and echo measurement models")]
pub struct Cli {
    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,
    /// Worker threads; 0 uses all cores.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Where to write the JSON report.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compare factored and full convolution on random separable kernels.
    OracleCheck {
        #[arg(long, default_value_t = 200)]
        trials: usize,
        #[arg(long, default_value_t = 16)]
        max_dim: usize,
        #[arg(long, default_value_t = 7)]
        max_kernel: usize,
    },
    /// Finite-difference gradient checks of every layer kind and both models.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long, default_value_t = 20)]
        per_tensor: usize,
    },
    /// Multiply counts and timings of full versus factored convolution.
    Bench {
        /// Video dims as `NX,NY,NT`.
        #[arg(long, value_delimiter = ',', default_values_t = [64, 64, 64])]
        video: Vec<usize>,
        /// Kernel dims as `MX,MY,MT`.
        #[arg(long, value_delimiter = ',', default_values_t = [7, 7, 7])]
        kernel: Vec<usize>,
        #[arg(long, default_value = "same")]
        padding: Padding,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
    },
    /// Cut a video into diastole-to-systole clips using its masks.
    ExtractBeats {
        #[arg(long)]
        video: PathBuf,
        #[arg(long)]
        masks: PathBuf,
        #[arg(long)]
        clips_dir: PathBuf,
        #[arg(long, default_value_t = SYNTH_FRAME_RATE)]
        frame_rate: f64,
        /// Minimum frames between extrema of one kind.
        #[arg(long)]
        min_separation: Option<usize>,
        /// Minimum prominence as a fraction of the area range.
        #[arg(long)]
        min_prominence: Option<f64>,
        /// Detect on the raw area signal.
        #[arg(long)]
        no_smooth: bool,
    },
    /// Write a synthetic EF and LVD dataset.
    Synth {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value_t = 200)]
        ef_videos: usize,
        #[arg(long, default_value_t = 500)]
        lvd_frames: usize,
        #[arg(long, default_value_t = 1.0)]
        mm_per_pixel: f64,
    },
    /// Train the EF regressor on labelled clips and save a checkpoint.
    TrainEf {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        train: TrainFlags,
        #[arg(long, default_value = "same")]
        padding: Padding,
        #[arg(long, default_value_t = 64)]
        encoder_dim: usize,
        /// Use squared instead of absolute error as the loss.
        #[arg(long)]
        mse: bool,
        #[arg(long, default_value_t = 0.7)]
        max_baseline_ratio: f64,
    },
    /// Per-video EF error of a saved checkpoint.
    EvalEf {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        max_mae: Option<f64>,
    },
    /// Train the keypoint model on labelled frames and save a checkpoint.
    TrainLvd {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        train: TrainFlags,
        /// Weight of the coordinate error term next to the length loss.
        #[arg(long, default_value_t = 1.0)]
        coord_weight: f64,
        #[arg(long, default_value_t = 0.7)]
        max_baseline_ratio: f64,
    },
    /// Dimension errors of a saved keypoint checkpoint.
    EvalLvd {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        max_mean_mae: Option<f64>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct TrainFlags {
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
}

impl TrainFlags {
    fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.lr,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed,
            ..TrainConfig::default()
        }
    }
}

fn dims3(flag: &str, v: &[usize]) -> Result<[usize; 3]> {
    v.try_into()
        .map_err(|_| Error::config(format!("--{flag} needs three comma-separated values, got {v:?}")))
}

/// Runs the parsed command on a pool of `cli.threads` workers.
pub fn run(cli: &Cli) -> Result<Report> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| Error::config(format!("thread pool: {e}")))?;
    let mut report = pool.install(|| dispatch(cli))?;
    report.config("threads", cli.threads);
    Ok(report)
}

fn dispatch(cli: &Cli) -> Result<Report> {
    let seed = cli.seed;
    match &cli.command {
        Command::OracleCheck { trials, max_dim, max_kernel } => cmd_oracle_check(&OracleArgs {
            trials: *trials,
            max_dim: *max_dim,
            max_kernel: *max_kernel,
            seed,
        }),
        Command::Gradcheck { instances, per_tensor } => cmd_gradcheck(&GradcheckArgs {
            instances: *instances,
            per_tensor: *per_tensor,
            seed,
        }),
        Command::Bench { video, kernel, padding, repeats } => cmd_bench(&BenchArgs {
            video_dims: dims3("video", video)?,
            kernel_dims: dims3("kernel", kernel)?,
            padding: *padding,
            repeats: *repeats,
            seed,
        }),
        Command::ExtractBeats { video, masks, clips_dir, frame_rate, min_separation, min_prominence, no_smooth } => {
            cmd_extract_beats(&ExtractArgs {
                video: video.clone(),
                masks: masks.clone(),
                out_dir: clips_dir.clone(),
                frame_rate: *frame_rate,
                min_separation: *min_separation,
                min_prominence: *min_prominence,
                smooth: !no_smooth,
            })
        }
        Command::Synth { dir, ef_videos, lvd_frames, mm_per_pixel } => cmd_synth(&SynthArgs {
            out_dir: dir.clone(),
            ef_videos: *ef_videos,
            lvd_frames: *lvd_frames,
            mm_per_pixel: *mm_per_pixel,
            seed,
        }),
        Command::TrainEf { labels, checkpoint, train, padding, encoder_dim, mse, max_baseline_ratio } => {
            cmd_train_ef(&TrainEfArgs {
                labels: labels.clone(),
                checkpoint: checkpoint.clone(),
                train: train.config(seed),
                model: EfModelConfig {
                    encoder_dim: *encoder_dim,
                    padding: *padding,
                    loss: if *mse { LossKind::Mse } else { LossKind::Mae },
                    ..EfModelConfig::default()
                },
                max_baseline_ratio: *max_baseline_ratio,
            })
        }
        Command::EvalEf { checkpoint, labels, max_mae } => cmd_eval_ef(&EvalEfArgs {
            checkpoint: checkpoint.clone(),
            labels: labels.clone(),
            max_mae: *max_mae,
        }),
        Command::TrainLvd { labels, checkpoint, train, coord_weight, max_baseline_ratio } => {
            cmd_train_lvd(&TrainLvdArgs {
                labels: labels.clone(),
                checkpoint: checkpoint.clone(),
                train: train.config(seed),
                model: LvdModelConfig { coord_weight: *coord_weight, ..LvdModelConfig::default() },
                max_baseline_ratio: *max_baseline_ratio,
            })
        }
        Command::EvalLvd { checkpoint, labels, max_mean_mae } => cmd_eval_lvd(&EvalLvdArgs {
            checkpoint: checkpoint.clone(),
            labels: labels.clone(),
            max_mean_mae: *max_mean_mae,
        }),
    }
}
