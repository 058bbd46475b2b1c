//! Command-line pipeline: `gen-tasks`, `train`, `eval` and `all`.
//!
//! Files in the output directory:
//!
//! | file | written by |
//! |------|------------|
//! | `transform_<w>.bin` | gen-tasks |
//! | `dataset_<w>_<split>.bin` | gen-tasks, when `task.cache` is set |
//! | `checkpoint.bin` | train (best validation loss) |
//! | `last.bin` | train (most recent epoch) |
//! | `history.csv` | train |
//! | `metrics.csv` | eval |
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 numerical
//! failure, 3 I/O or file-format error.

use std::ffi::OsString;
use std::fs::OpenOptions;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::evaluation::{self, MetricsCsv};
use crate::stack::{BitDepth, DiffractiveModel};
use crate::taskgen::{self, ChannelData, Dataset, Split, TransformSet};
use crate::training::{self, split_mse, PlanCache};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LAST_FILE: &str = "last.bin";
pub const HISTORY_FILE: &str = "history.csv";
pub const METRICS_FILE: &str = "metrics.csv";

#[derive(Debug, Parser)]
#[command(
    name = "wdm-diffractive",
    version,
    about = "Wavelength-multiplexed diffractive linear transform processors"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the target transforms (and optionally the dataset cache).
    GenTasks(Common),
    /// Train a stack and write its best checkpoint and history.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from this checkpoint.
        #[arg(long, value_name = "PATH")]
        resume: Option<PathBuf>,
    },
    /// Evaluate the trained checkpoint and write the metrics CSV.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sweeps: Sweeps,
    },
    /// gen-tasks, train and eval in sequence.
    All {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sweeps: Sweeps,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Override `task.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores, or RAYON_NUM_THREADS).
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub deterministic: bool,
    /// Override `output.dir`.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct Sweeps {
    /// Wavelength offsets in units of λ_m, e.g. "0,0.005,0.01".
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, value_name = "LIST")]
    pub jitter: Vec<f64>,
    /// Bit depths for post-hoc quantization, e.g. "12,8,4".
    #[arg(long, value_delimiter = ',', value_name = "LIST")]
    pub bitdepth: Vec<u32>,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::Parameter(_)
        | Error::Sizing(_)
        | Error::OutOfRange { .. }
        | Error::GeometryMismatch { .. } => 1,
        Error::NonFinite(_)
        | Error::Diverged { .. }
        | Error::DegenerateTarget
        | Error::DegenerateInput
        | Error::UndefinedMetric(_) => 2,
        Error::Io(_) | Error::Format(_) => 3,
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Config with command-line overrides applied, plus the output directory.
pub struct Prepared {
    pub config: RunConfig,
    pub out: PathBuf,
}

pub fn prepare(common: &Common) -> Result<Prepared> {
    let mut config = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        config.task.seed = seed;
    }
    if common.deterministic {
        config.training.deterministic = true;
    }
    if let Some(n) = common.threads {
        // only the first pool configuration in a process takes effect
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    config.validate()?;
    let out = common.out.clone().unwrap_or_else(|| config.output.dir.clone());
    std::fs::create_dir_all(&out)?;
    Ok(Prepared { config, out })
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenTasks(common) => {
            let p = prepare(&common)?;
            report_tasks(&gen_tasks(&p.config, &p.out)?);
        }
        Command::Train { common, resume } => {
            let p = prepare(&common)?;
            train(&p.config, &p.out, resume.as_deref())?;
        }
        Command::Eval { common, sweeps } => {
            let p = prepare(&common)?;
            eval(&p.config, &p.out, &sweeps.jitter, &sweeps.bitdepth)?;
        }
        Command::All { common, sweeps } => {
            let p = prepare(&common)?;
            report_tasks(&gen_tasks(&p.config, &p.out)?);
            train(&p.config, &p.out, None)?;
            eval(&p.config, &p.out, &sweeps.jitter, &sweeps.bitdepth)?;
        }
    }
    Ok(())
}

fn report_tasks(summary: &TaskSummary) {
    match summary.max_pairwise_cos_sim {
        Some(c) => println!(
            "{} transforms written; max pairwise |CosSim| = {c:.6}",
            summary.channels
        ),
        None => println!("1 transform written; no pairs to compare"),
    }
}

pub fn transform_path(out: &Path, channel: usize) -> PathBuf {
    out.join(format!("transform_{}.bin", channel + 1))
}

pub fn dataset_path(out: &Path, channel: usize, split: Split) -> PathBuf {
    out.join(format!("dataset_{}_{}.bin", channel + 1, split.name()))
}

fn transforms_for(config: &RunConfig) -> Result<TransformSet> {
    let n_w = config.channel_wavelengths()?.len();
    let n = config.geometry.fov_side * config.geometry.fov_side;
    taskgen::gen_transforms(n_w, n, n, config.task.seed)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskSummary {
    pub channels: usize,
    pub max_pairwise_cos_sim: Option<f64>,
}

pub fn gen_tasks(config: &RunConfig, out: &Path) -> Result<TaskSummary> {
    let transforms = transforms_for(config)?;
    for w in 0..transforms.len() {
        taskgen::write_transform(transform_path(out, w), &transforms, w)?;
    }
    if config.task.cache {
        let data = taskgen::gen_dataset(&transforms, config.split_sizes()?, config.task.seed)?;
        for (w, channel) in data.channels().iter().enumerate() {
            for split in Split::ALL {
                taskgen::write_split_cache(
                    dataset_path(out, w, split),
                    w,
                    split,
                    config.task.seed,
                    channel.split(split),
                )?;
            }
        }
    }
    Ok(TaskSummary {
        channels: transforms.len(),
        max_pairwise_cos_sim: if transforms.len() > 1 {
            Some(evaluation::max_pairwise_cos_sim(&transforms)?)
        } else {
            None
        },
    })
}

/// Transforms and dataset of a run: regenerated from the seed, checked
/// against any transform files on disk, with splits read from the cache
/// when it is complete.
pub fn load_task(config: &RunConfig, out: &Path) -> Result<(TransformSet, Dataset)> {
    let transforms = transforms_for(config)?;
    for w in 0..transforms.len() {
        let path = transform_path(out, w);
        if path.exists() && taskgen::read_transform(&path)? != *transforms.matrix(w) {
            return Err(Error::Config(format!(
                "{} was generated with different settings; rerun gen-tasks",
                path.display()
            )));
        }
    }
    let cached = (0..transforms.len()).all(|w| Split::ALL.iter().all(|&s| dataset_path(out, w, s).exists()));
    let data = if cached {
        let channels = (0..transforms.len())
            .map(|w| {
                Ok(ChannelData {
                    train: taskgen::read_split_cache(dataset_path(out, w, Split::Train))?,
                    val: taskgen::read_split_cache(dataset_path(out, w, Split::Validation))?,
                    test: taskgen::read_split_cache(dataset_path(out, w, Split::Test))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::from_channels(channels, config.task.seed)?
    } else {
        taskgen::gen_dataset(&transforms, config.split_sizes()?, config.task.seed)?
    };
    Ok((transforms, data))
}

fn check_geometry(config: &RunConfig, model: &DiffractiveModel) -> Result<()> {
    let expected = config.stack_geometry()?;
    if *model.geometry() != expected {
        return Err(Error::GeometryMismatch {
            config: expected.to_string(),
            checkpoint: model.geometry().to_string(),
        });
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
    pub best_val: f64,
}

pub fn train(config: &RunConfig, out: &Path, resume: Option<&Path>) -> Result<TrainSummary> {
    let (_, data) = load_task(config, out)?;
    let mut train_cfg = config.train_config()?;
    let (model, mut best_val) = match resume {
        None => (
            DiffractiveModel::random(
                config.stack_geometry()?,
                config.material()?,
                config.bit_depth()?,
                config.task.seed,
            )?,
            f64::INFINITY,
        ),
        Some(path) => {
            let ckpt = checkpoint::load(path)?;
            check_geometry(config, &ckpt.model)?;
            let mut model = ckpt.model;
            model.set_material(config.material()?);
            model.set_bit_depth(config.bit_depth()?);
            train_cfg.start_epoch = ckpt.epoch.map_or(0, |e| e + 1);
            // the resumed run must beat the checkpoint already on disk
            let best_path = out.join(CHECKPOINT_FILE);
            let best_val = if best_path.exists() {
                let best = checkpoint::load(&best_path)?.model;
                let val: Vec<_> = data.channels().iter().map(|c| c.val.as_slice()).collect();
                let per_channel = split_mse(&PlanCache::new(&best)?.optics(&best)?, &val)?;
                per_channel.iter().sum::<f64>() / per_channel.len() as f64
            } else {
                f64::INFINITY
            };
            (model, best_val)
        }
    };
    if train_cfg.start_epoch >= train_cfg.epochs {
        eprintln!("nothing to do: checkpoint already covers {} epochs", train_cfg.epochs);
        return Ok(TrainSummary {
            epochs_run: 0,
            best_epoch: None,
            best_val,
        });
    }

    let history_path = out.join(HISTORY_FILE);
    let append = resume.is_some() && history_path.exists();
    let mut history = BufWriter::new(
        OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(&history_path)?,
    );
    let mut header = !append;
    let mut best_epoch = None;
    let total = train_cfg.epochs;
    let result = training::fit_with(model, &data, &train_cfg, |e| {
        training::write_history_rows(&mut history, e.records, header)?;
        history.flush()?;
        header = false;
        checkpoint::save(out.join(LAST_FILE), e.model, Some(e.epoch))?;
        let improved = e.val_mse < best_val;
        if improved {
            best_val = e.val_mse;
            best_epoch = Some(e.epoch);
            checkpoint::save(out.join(CHECKPOINT_FILE), e.model, Some(e.epoch))?;
        }
        eprintln!(
            "epoch {}/{total}  val_mse {:.4e}  lr {:.2e}{}",
            e.epoch + 1,
            e.val_mse,
            e.records[0].lr,
            if improved { "  *" } else { "" }
        );
        Ok(())
    });
    match result {
        Ok(_) => Ok(TrainSummary {
            epochs_run: total - train_cfg.start_epoch,
            best_epoch,
            best_val,
        }),
        Err(e) => {
            if matches!(e, Error::Diverged { .. }) {
                eprintln!(
                    "training diverged; the last good state is in {}",
                    out.join(LAST_FILE).display()
                );
            }
            Err(e)
        }
    }
}

pub fn eval(config: &RunConfig, out: &Path, jitter: &[f64], depths: &[u32]) -> Result<PathBuf> {
    let model = checkpoint::load(out.join(CHECKPOINT_FILE))?.model;
    check_geometry(config, &model)?;
    let (transforms, data) = load_task(config, out)?;
    let path = out.join(METRICS_FILE);
    let mut csv = MetricsCsv::new(
        BufWriter::new(std::fs::File::create(&path)?),
        &config.output.run_id,
        &model,
    )?;
    if jitter.is_empty() && depths.is_empty() {
        csv.record(&evaluation::evaluate(&model, &transforms, &data)?)?;
    }
    if !jitter.is_empty() {
        for w in 0..model.geometry().n_channels() {
            for m in evaluation::sweep_jitter(&model, w, transforms.matrix(w), &data.channel(w).test, jitter)? {
                csv.row(&m)?;
            }
        }
    }
    if !depths.is_empty() {
        if model.bit_depth() != BitDepth::Continuous {
            eprintln!("note: checkpoint is already quantized at {} bits", model.bit_depth());
        }
        for r in evaluation::sweep_bitdepth(&model, depths, &transforms, &data)? {
            csv.record(&r)?;
        }
    }
    csv.finish()?.flush()?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_classes_map_to_exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 1);
        assert_eq!(
            exit_code(&Error::Diverged {
                epoch: 1,
                reason: "nan".into()
            }),
            2
        );
        assert_eq!(exit_code(&Error::Io(std::io::Error::other("x"))), 3);
        assert_eq!(exit_code(&Error::Format("x".into())), 3);
    }

    #[test]
    fn parses_lists_and_flags() {
        let cli = Cli::try_parse_from([
            "wdm-diffractive",
            "eval",
            "--config",
            "c.toml",
            "--jitter",
            "-0.01,0,0.01",
            "--bitdepth",
            "12,8",
        ])
        .unwrap();
        match cli.command {
            Command::Eval { sweeps, common } => {
                assert_eq!(sweeps.jitter, vec![-0.01, 0.0, 0.01]);
                assert_eq!(sweeps.bitdepth, vec![12, 8]);
                assert_eq!(common.config, PathBuf::from("c.toml"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn usage_errors_exit_with_one() {
        assert_eq!(main_with(["wdm-diffractive", "train"]), 1);
        assert_eq!(main_with(["wdm-diffractive", "bogus"]), 1);
    }
}
