//! Command-line entry point: `train`, `eval`, `degrade`, `export-weights`,
//! and `compare-losses`, all driven by a JSON config file plus
//! `--set key=value` overrides.
//!
//! Exit codes: 0 success, 1 usage error (bad flags, bad config), 2 runtime
//! failure.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use crate::config::{load_config, parse_override, TrainConfig};
use crate::data::{
    load_png, save_png, synthetic, to_rgb, DatasetManifest, ImagePair, Split,
};
use crate::error::{Error, Result};
use crate::eval::{eval_pairs, export_weight_maps};
use crate::judge::Judge;
use crate::trainer::{four_loss_run, load_bundle, train_run, Dataset};

#[derive(Parser)]
#[command(name = "tlw-sr", version, about = "Super-resolution training with trainable per-pixel loss weights")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// JSON config file with all hyperparameters
    #[arg(long)]
    config: PathBuf,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Override the config seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override a config key by dotted path, e.g. --set lr_theta=1e-3
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the SR and weighting networks jointly
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Continue from a checkpoint written by the same config
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the config's dataset manifest
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        /// Training checkpoint to evaluate
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Bicubic-degrade a folder of PNGs
    Degrade {
        /// Folder of source PNGs
        #[arg(long)]
        input: PathBuf,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        /// Downscaling factor
        #[arg(long)]
        scale: usize,
    },
    /// Render weight maps from training checkpoints as grayscale PNGs
    ExportWeights {
        #[command(flatten)]
        common: CommonArgs,
        /// One or more training checkpoints (one map set per epoch)
        #[arg(long, required = true, num_args = 1..)]
        checkpoint: Vec<PathBuf>,
    },
    /// Train four losses in parallel from shared init and compare them
    CompareLosses {
        #[command(flatten)]
        common: CommonArgs,
    },
}

/// Parse and dispatch; returns the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let argv: Vec<String> = std::iter::once("tlw-sr".to_string())
        .chain(args.into_iter().map(Into::into))
        .collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders its own message (also for --help/--version)
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            2
        }
    }
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

fn load_cli_config(common: &CommonArgs) -> std::result::Result<TrainConfig, Failure> {
    let mut overrides = Vec::with_capacity(common.set.len());
    for raw in &common.set {
        overrides.push(parse_override(raw).map_err(|e| Failure::Usage(e.to_string()))?);
    }
    let mut cfg = load_config(&common.config, &overrides)
        .map_err(|e| Failure::Usage(e.to_string()))?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn dispatch(cli: Cli) -> std::result::Result<(), Failure> {
    match cli.command {
        Command::Train { common, resume } => cmd_train(common, resume),
        Command::Eval { common, checkpoint } => cmd_eval(common, checkpoint),
        Command::Degrade { input, out, scale } => cmd_degrade(input, out, scale),
        Command::ExportWeights { common, checkpoint } => cmd_export(common, checkpoint),
        Command::CompareLosses { common } => cmd_compare(common),
    }
}

fn manifest_of(cfg: &TrainConfig) -> std::result::Result<DatasetManifest, Failure> {
    let path = cfg
        .manifest
        .as_ref()
        .ok_or_else(|| Failure::Usage("config has no `manifest` path".into()))?;
    Ok(DatasetManifest::load(path)?)
}

/// Training patches from the train split, whole-image pairs from the val
/// split.
fn dataset_of(cfg: &TrainConfig, manifest: &DatasetManifest) -> Result<Dataset> {
    let train = crate::data::make_pairs(
        manifest,
        Split::Train,
        cfg.scale,
        cfg.patch_size,
        cfg.stride,
        cfg.seed,
    )?;
    let val = named_pairs(manifest, Split::Val, cfg.scale)?
        .into_iter()
        .map(|(_, p)| p)
        .collect();
    Ok(Dataset { train, val })
}

/// Whole images of a split as named pairs; falls back to all entries when
/// the split is empty.
fn named_pairs(
    manifest: &DatasetManifest,
    split: Split,
    scale: usize,
) -> Result<Vec<(String, ImagePair)>> {
    let mut images = manifest.load_images(split)?;
    if images.is_empty() {
        images = manifest.load_images(match split {
            Split::Val => Split::Train,
            Split::Train => Split::Val,
        })?;
    }
    images
        .into_iter()
        .map(|(name, img)| Ok((name, ImagePair::from_hr(&img, scale)?)))
        .collect()
}

fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Every run records its resolved config and an input content hash; equal
/// run.json means byte-identical outputs.
fn write_run_json(
    out_dir: &Path,
    command: &str,
    config: Option<&TrainConfig>,
    inputs_hash: &str,
) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let value = serde_json::json!({
        "command": command,
        "config": config,
        "inputs_hash": inputs_hash,
    });
    let path = out_dir.join("run.json");
    let text = serde_json::to_string_pretty(&value)
        .map_err(|e| Error::Config(format!("run.json encode: {e}")))?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn cmd_train(common: CommonArgs, resume: Option<PathBuf>) -> std::result::Result<(), Failure> {
    let cfg = load_cli_config(&common)?;
    let manifest = manifest_of(&cfg)?;
    write_run_json(&common.out, "train", Some(&cfg), &manifest.content_hash)?;
    let dataset = dataset_of(&cfg, &manifest)?;
    let outcome = train_run(&dataset, &cfg, &common.out, resume.as_deref())?;
    if let Some(last) = outcome.history.last() {
        println!(
            "trained {} epochs; train PSNR-Y {:.4} dB, judge distance {:.6}",
            last.epoch, last.psnr_y, last.judge_dist
        );
    }
    println!("checkpoints and metrics.csv in {}", common.out.display());
    Ok(())
}

fn cmd_eval(common: CommonArgs, checkpoint: PathBuf) -> std::result::Result<(), Failure> {
    let cfg = load_cli_config(&common)?;
    let bundle = load_bundle(&checkpoint)?;
    let manifest = manifest_of(&cfg)?;
    write_run_json(&common.out, "eval", Some(&cfg), &manifest.content_hash)?;
    let items = named_pairs(&manifest, Split::Val, cfg.scale)?;
    if items.is_empty() {
        return Err(Failure::Usage("manifest contains no images".into()));
    }
    let judge = Judge::build(&cfg.judge)?;
    let report = eval_pairs(
        &bundle.models[0],
        &items,
        &judge,
        cfg.scale,
        manifest.content_hash.clone(),
        cfg.scale,
        file_sha256(&checkpoint)?,
    )?;
    report.write(&common.out)?;
    println!(
        "{} images: mean PSNR-Y {:.4} dB, mean judge distance {:.6}",
        report.rows.len(),
        report.mean_psnr_y,
        report.mean_judge_dist
    );
    Ok(())
}

fn cmd_degrade(input: PathBuf, out: PathBuf, scale: usize) -> std::result::Result<(), Failure> {
    if !(1..=8).contains(&scale) {
        return Err(Failure::Usage(format!("scale {scale} out of range 1..=8")));
    }
    let mut names: Vec<PathBuf> = std::fs::read_dir(&input)
        .map_err(|e| Failure::Runtime(Error::io(&input, e)))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext.eq_ignore_ascii_case("png")))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Failure::Usage(format!(
            "no PNG files in {}",
            input.display()
        )));
    }
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let mut hasher = Sha256::new();
    for path in &names {
        hasher.update(std::fs::read(path).map_err(|e| Error::io(path, e))?);
    }
    write_run_json(&out, "degrade", None, &hex::encode(hasher.finalize()))?;
    for path in &names {
        let stem = path.file_stem().unwrap_or_default().to_string_lossy();
        let img = to_rgb(&load_png(path)?)?;
        let pair = ImagePair::from_hr(&img, scale)?;
        save_png(&pair.hr, &out.join(format!("{stem}_hr.png")))?;
        save_png(&pair.lr, &out.join(format!("{stem}_x{scale}.png")))?;
    }
    println!("degraded {} images by x{scale} into {}", names.len(), out.display());
    Ok(())
}

fn cmd_export(common: CommonArgs, checkpoints: Vec<PathBuf>) -> std::result::Result<(), Failure> {
    let cfg = load_cli_config(&common)?;
    let manifest = manifest_of(&cfg)?;
    write_run_json(&common.out, "export-weights", Some(&cfg), &manifest.content_hash)?;
    let items = named_pairs(&manifest, Split::Val, cfg.scale)?;
    let mut total = 0;
    for ckpt_path in &checkpoints {
        let bundle = load_bundle(ckpt_path)?;
        let k = bundle
            .config
            .k_schedule
            .value(bundle.epoch.saturating_sub(1)) as f32;
        let written = export_weight_maps(
            &bundle.weight,
            bundle.models.first(),
            &items,
            k,
            bundle.epoch,
            &common.out,
        )?;
        total += written.len();
    }
    println!(
        "wrote {total} weight maps for {} checkpoints into {}",
        checkpoints.len(),
        common.out.display()
    );
    Ok(())
}

fn cmd_compare(common: CommonArgs) -> std::result::Result<(), Failure> {
    let mut cfg = load_cli_config(&common)?;
    cfg.four_loss = true;
    let manifest = manifest_of(&cfg)?;
    write_run_json(&common.out, "compare-losses", Some(&cfg), &manifest.content_hash)?;
    let dataset = dataset_of(&cfg, &manifest)?;
    let outcome = four_loss_run(&dataset, &cfg, &common.out)?;
    println!("loss        psnr_y      judge_dist");
    for row in &outcome.table {
        println!("{:<10}  {:>9.4}  {:>12.8}", row.leg, row.psnr_y, row.judge_dist);
    }
    println!("table written to {}", outcome.table_path.display());
    Ok(())
}

/// Library hook for generating the bundled toy dataset from examples and
/// tests (not a CLI subcommand).
pub fn generate_toy_dataset(dir: &Path, count: usize, size: usize, seed: u64) -> Result<PathBuf> {
    synthetic::write_toy_dataset(dir, count, size, seed, (count / 10).max(1))
}
