//! The `avsync` command line.
//!
//! Exit status: 0 success, 1 usage or config error, 2 data or format
//! error, 3 failed gradient check or non-finite loss.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use log::info;

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::RunConfig;
use crate::data::{build_dataset, load_clip, read_dataset, write_dataset, AvClip};
use crate::error::{Error, Result};
use crate::gradcheck::{check_model, Coordinates, Kinks};
use crate::model::{AttentionKind, FusionConfig, SyncModel, Variant};
use crate::train::{evaluate, score_histogram, train, write_histogram};

pub const CHECKPOINT_FILE: &str = "model.avck";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const HISTOGRAM_FILE: &str = "histogram.csv";
pub const ATTENTION_FILE: &str = "attention.csv";
pub const GRAD_CHECK_TOLERANCE: f64 = 1e-3;
pub const HISTOGRAM_BINS: usize = 10;

#[derive(Debug, Parser)]
#[command(name = "avsync", version, about = "Audio-visual synchronization with soft attention")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic train/test dataset.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
    },
    /// Train a model; writes metrics.csv, model.avck and resolved.cfg.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: Variant,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a dataset's test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export the attention weights a checkpoint assigns to one clip.
    Attend {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        clip: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare reverse-mode gradients of a fresh model with finite differences.
    GradCheck {
        #[arg(long)]
        model: Variant,
        #[arg(long)]
        seed: u64,
        /// Coordinates sampled per parameter tensor.
        #[arg(long, default_value_t = 16)]
        per_param: usize,
    },
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Lib(Error),
    GradCheck(f64),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::ConfigLine { .. }
        | Error::InvalidProbability(_)
        | Error::Range(_) => 1,
        Error::Numeric(_) | Error::NonFiniteLoss { .. } => 3,
        Error::Dimension(_)
        | Error::InvalidLabel(_)
        | Error::Contract(_)
        | Error::EmptyClip
        | Error::UndefinedMetric(_)
        | Error::Format { .. }
        | Error::Io(_) => 2,
    }
}

/// Runs the CLI on `argv` (including the program name); returns the exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
        Err(Failure::GradCheck(err)) => {
            eprintln!("error: max relative error {err:e} exceeds {GRAD_CHECK_TOLERANCE:e}");
            3
        }
    }
}

fn dispatch(command: Command) -> std::result::Result<(), Failure> {
    match command {
        Command::GenData { config, out, seed } => gen_data(config.as_deref(), &out, seed)?,
        Command::Train {
            config,
            data,
            model,
            out,
        } => train_cmd(config.as_deref(), &data, model, &out)?,
        Command::Eval {
            checkpoint,
            data,
            out,
        } => eval_cmd(&checkpoint, &data, &out)?,
        Command::Attend {
            checkpoint,
            clip,
            out,
        } => attend_cmd(&checkpoint, &clip, &out)?,
        Command::GradCheck {
            model,
            seed,
            per_param,
        } => {
            if per_param == 0 {
                return Err(Failure::Usage("--per-param must be >= 1".into()));
            }
            let report = check_model(
                model,
                &FusionConfig::default(),
                seed,
                Coordinates::Sampled { per_param, seed },
                Kinks::Pinned,
            )?;
            println!("{model} seed {seed}: max relative error {:e} over {} coordinates", report.max_rel_error, report.checked);
            if let Some((name, index)) = &report.worst {
                println!("worst coordinate: {name}[{index}]");
            }
            if report.max_rel_error > GRAD_CHECK_TOLERANCE {
                return Err(Failure::GradCheck(report.max_rel_error));
            }
        }
    }
    Ok(())
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::from_file(p).map_err(|e| match e {
            Error::Io(io) => Error::Config(format!("cannot read {}: {io}", p.display())),
            other => other,
        }),
        None => Ok(RunConfig::default()),
    }
}

fn gen_data(config: Option<&Path>, out: &Path, seed: u64) -> Result<()> {
    let cfg = load_config(config)?;
    let (train, test) = build_dataset(&cfg.synthetic, &cfg.fusion, cfg.n_train, cfg.n_test, seed)?;
    write_dataset(out, &train, &test)?;
    cfg.write_resolved(out)?;
    info!("wrote {} train and {} test clips to {}", train.len(), test.len(), out.display());
    println!("{} train / {} test clips -> {}", train.len(), test.len(), out.display());
    Ok(())
}

fn check_clips(fusion: &FusionConfig, clips: &[AvClip]) -> Result<()> {
    for clip in clips {
        fusion.check_clip(clip)?;
    }
    Ok(())
}

fn train_cmd(config: Option<&Path>, data: &Path, variant: Variant, out: &Path) -> Result<()> {
    let mut cfg = load_config(config)?;
    cfg.variant = variant;
    let ds = read_dataset(data)?;
    if ds.train.is_empty() || ds.test.is_empty() {
        return Err(Error::Config(format!("{} has an empty split", data.display())));
    }
    if cfg.train.batch_size > ds.train.len() {
        return Err(Error::Config(format!(
            "batch_size {} exceeds the {} training clips",
            cfg.train.batch_size,
            ds.train.len()
        )));
    }
    check_clips(&cfg.fusion, &ds.train)?;
    check_clips(&cfg.fusion, &ds.test)?;
    let mut model = SyncModel::new(variant, cfg.fusion.clone(), cfg.train.seed)?;

    cfg.write_resolved(out)?;
    let mut tc = cfg.train.clone();
    tc.output_dir = Some(out.to_path_buf());
    let history = train(&mut model, &ds.train, &ds.test, &tc)?;
    save_checkpoint(&model, &out.join(CHECKPOINT_FILE), true)?;
    let last = history.last();
    println!(
        "{variant}: epoch {} train_loss {:.4} test_acc {:.4} -> {}",
        last.epoch,
        last.train_loss,
        last.test_acc,
        out.display()
    );
    Ok(())
}

fn eval_cmd(checkpoint: &Path, data: &Path, out: &Path) -> Result<()> {
    let model = load_checkpoint(checkpoint)?;
    let ds = read_dataset(data)?;
    if ds.test.is_empty() {
        return Err(Error::Config(format!("{} has no test clips", data.display())));
    }
    check_clips(model.config(), &ds.test)?;
    let ev = evaluate(&model, &ds.test)?;
    let (sync, unsync) = ev.scores_by_label(&ds.test);
    let hist = score_histogram(&sync, &unsync, HISTOGRAM_BINS)?;

    let mut summary = String::new();
    writeln!(summary, "variant = {}", model.variant()).expect("string write");
    writeln!(summary, "clips = {}", ds.test.len()).expect("string write");
    writeln!(summary, "accuracy = {}", ev.accuracy).expect("string write");
    writeln!(summary, "mean_sync_score = {}", mean(&sync)).expect("string write");
    writeln!(summary, "mean_unsync_score = {}", mean(&unsync)).expect("string write");
    if model.variant() != Variant::Uniform {
        if let Ok(a) = ev.alignment(&ds.test) {
            writeln!(summary, "attention_mass = {}", a.mass).expect("string write");
            writeln!(summary, "uniform_reference = {}", a.uniform_reference).expect("string write");
        }
    }
    fs::create_dir_all(out)?;
    fs::write(out.join(SUMMARY_FILE), &summary)?;
    write_histogram(&out.join(HISTOGRAM_FILE), &hist)?;
    print!("{summary}");
    Ok(())
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// `P2` graymap of one block's `[T,H,W]` weights, time slices side by side,
/// min-max scaled to 0..=255.
pub fn block_pgm(weights: &[f64], t: usize, h: usize, w: usize) -> String {
    let lo = weights.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let mut s = format!("P2\n{} {}\n255\n", w * t, h);
    for row in 0..h {
        let line: Vec<String> = (0..t)
            .flat_map(|ti| (0..w).map(move |col| (ti * h + row) * w + col))
            .map(|i| {
                let v = if span > 0.0 { (weights[i] - lo) / span * 255.0 } else { 0.0 };
                (v.round() as u32).to_string()
            })
            .collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

fn attend_cmd(checkpoint: &Path, clip_path: &Path, out: &Path) -> Result<()> {
    let model = load_checkpoint(checkpoint)?;
    let clip = load_clip(clip_path)?;
    model.config().check_clip(&clip)?;
    let pred = model.predict(&clip)?;
    let c = model.config();
    let mut files: Vec<(PathBuf, String)> = Vec::new();
    let mut csv = String::new();
    match &pred.attention {
        // the uniform model pools with fixed weights 1/N
        None => {
            csv.push_str("block,weight\n");
            for n in 0..c.n_blocks {
                writeln!(csv, "{n},{}", 1.0 / c.n_blocks as f64).expect("string write");
            }
        }
        Some(map) if map.kind == AttentionKind::Temporal => {
            csv.push_str("block,weight\n");
            for (n, w) in map.weights.data().iter().enumerate() {
                writeln!(csv, "{n},{w}").expect("string write");
            }
        }
        Some(map) => {
            csv.push_str("block,t,h,w,weight\n");
            let per_block = c.cells_per_block();
            for (n, block) in map.weights.data().chunks_exact(per_block).enumerate() {
                let mut i = 0;
                for t in 0..c.feat_t {
                    for h in 0..c.feat_h {
                        for w in 0..c.feat_w {
                            writeln!(csv, "{n},{t},{h},{w},{}", block[i]).expect("string write");
                            i += 1;
                        }
                    }
                }
                files.push((
                    out.join(format!("block_{n}.pgm")),
                    block_pgm(block, c.feat_t, c.feat_h, c.feat_w),
                ));
            }
        }
    }
    fs::create_dir_all(out)?;
    fs::write(out.join(ATTENTION_FILE), &csv)?;
    for (path, text) in files {
        fs::write(path, text)?;
    }
    println!(
        "{}: sync score {:.4} -> {}",
        model.variant(),
        pred.sync_score(),
        out.display()
    );
    Ok(())
}
