//! Implementations of the `ddx` subcommands: thin wrappers over the core
//! builders, trainer, and evaluators.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;

use ddx_core::dataset::{
    self, build_classification_dataset, build_detection_dataset, read_manifest, verify_manifest,
    ManifestRecord, Split, SplitSpec, SplitUnit,
};
use ddx_core::distort::{self, DistortionClass, DistortionSpec};
use ddx_core::eval;
use ddx_core::model::{self, DetectParams, TrainConfig};
use ddx_core::region::Variant;
use ddx_core::RngStream;

fn parse_split_unit(s: &str) -> Result<SplitUnit> {
    match s {
        "reference" => Ok(SplitUnit::Reference),
        "image" => Ok(SplitUnit::Image),
        other => bail!("unknown split unit '{other}' (reference|image)"),
    }
}

fn parse_split_filter(s: &str) -> Result<Option<Split>> {
    match s {
        "train" => Ok(Some(Split::Train)),
        "val" => Ok(Some(Split::Val)),
        "test" => Ok(Some(Split::Test)),
        "all" => Ok(None),
        other => bail!("unknown split '{other}' (train|val|test|all)"),
    }
}

fn parse_thresholds(s: &str) -> Result<Vec<f64>> {
    let out: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("cannot parse IoU list '{s}'"))?;
    if out.is_empty() || out.iter().any(|v| !(0.0..=1.0).contains(v)) {
        bail!("IoU thresholds must lie in [0, 1]");
    }
    Ok(out)
}

fn split_histogram(records: &[ManifestRecord]) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for r in records {
        *counts.entry(r.split.to_string()).or_insert(0) += 1;
    }
    counts
}

fn print_build_summary(records: &[ManifestRecord], manifest_path: &Path) -> Result<()> {
    println!("{} records", records.len());
    for (split, n) in split_histogram(records) {
        println!("split {split}: {n}");
    }
    println!(
        "manifest digest {}",
        dataset::file_digest(manifest_path).map_err(anyhow::Error::from)?
    );
    Ok(())
}

#[derive(Args)]
pub struct GenClassArgs {
    /// Directory of pristine reference images (PNG/JPEG).
    #[arg(long)]
    refs: PathBuf,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.6)]
    split_train: f64,
    #[arg(long, default_value_t = 0.2)]
    split_val: f64,
    #[arg(long, default_value_t = 0.2)]
    split_test: f64,
    /// Split assignment unit: reference | image.
    #[arg(long, default_value = "reference")]
    split_unit: String,
}

pub fn gen_class(args: GenClassArgs, seed: u64, _verbose: u8) -> Result<u8> {
    let split = SplitSpec {
        train: args.split_train,
        val: args.split_val,
        test: args.split_test,
        unit: parse_split_unit(&args.split_unit)?,
        seed,
    };
    let build = build_classification_dataset(&args.refs, &args.out, &split, seed)
        .with_context(|| format!("building classification dataset from {}", args.refs.display()))?;
    print_build_summary(&build.records, &build.manifest_path)?;
    Ok(0)
}

#[derive(Args)]
pub struct GenDetectArgs {
    #[arg(long)]
    refs: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Region layout preset: basic | difficult.
    #[arg(long, default_value = "basic")]
    variant: String,
    /// Synthesized images per reference.
    #[arg(long, default_value_t = 20)]
    per_ref: u32,
    #[arg(long, default_value_t = 0.8)]
    split_train: f64,
    #[arg(long, default_value_t = 0.0)]
    split_val: f64,
    #[arg(long, default_value_t = 0.2)]
    split_test: f64,
    #[arg(long, default_value = "reference")]
    split_unit: String,
}

pub fn gen_detect(args: GenDetectArgs, seed: u64, _verbose: u8) -> Result<u8> {
    let variant: Variant = args.variant.parse().map_err(anyhow::Error::from)?;
    let split = SplitSpec {
        train: args.split_train,
        val: args.split_val,
        test: args.split_test,
        unit: parse_split_unit(&args.split_unit)?,
        seed,
    };
    let build =
        build_detection_dataset(&args.refs, &args.out, variant, args.per_ref, &split, seed)
            .with_context(|| format!("building detection dataset from {}", args.refs.display()))?;
    for (ref_id, reason) in &build.skipped {
        eprintln!("warning: skipped {ref_id}: {reason}");
    }
    print_build_summary(&build.records, &build.manifest_path)?;
    Ok(0)
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Where to write the trained model (DDM1 container).
    #[arg(long)]
    out_model: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 4)]
    epochs: u32,
    #[arg(long, default_value_t = 16)]
    patches_per_image: u32,
    /// Disable horizontal-flip augmentation.
    #[arg(long, default_value_t = false)]
    no_flip: bool,
    /// Training-curve CSV path (default: next to the model).
    #[arg(long)]
    log: Option<PathBuf>,
}

pub fn train(args: TrainArgs, seed: u64, verbose: u8) -> Result<u8> {
    let records = read_manifest(&args.manifest)?;
    let base = args.manifest.parent().unwrap_or(Path::new("."));
    let cfg = TrainConfig {
        learning_rate: args.lr,
        momentum: args.momentum,
        batch_size: args.batch_size,
        epochs: args.epochs,
        patches_per_image: args.patches_per_image,
        seed,
        flip_augmentation: !args.no_flip,
    };
    let outcome = model::train(&records, base, &cfg)?;
    if verbose > 0 {
        for row in &outcome.curve {
            eprintln!(
                "epoch {}: loss {:.4}, train accuracy {:.4}",
                row.epoch, row.loss, row.accuracy
            );
        }
    }
    model::save_model(&outcome.model, &args.out_model)?;
    let log_path = args
        .log
        .unwrap_or_else(|| args.out_model.with_extension("curve.csv"));
    std::fs::write(&log_path, model::curve_to_csv(&outcome.curve))
        .with_context(|| format!("writing {}", log_path.display()))?;
    let last = outcome.curve.last().expect("at least one epoch");
    println!(
        "trained {} epochs; final loss {:.4}, train accuracy {:.4}",
        last.epoch, last.loss, last.accuracy
    );
    println!("model {}", args.out_model.display());
    println!("curve {}", log_path.display());
    Ok(0)
}

#[derive(Args)]
pub struct EvalClassArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Which split to score: train | val | test | all.
    #[arg(long, default_value = "test")]
    split: String,
    /// Write the confusion matrix as CSV.
    #[arg(long)]
    out_csv: Option<PathBuf>,
}

pub fn eval_class(args: EvalClassArgs, _verbose: u8) -> Result<u8> {
    let records = read_manifest(&args.manifest)?;
    let base = args.manifest.parent().unwrap_or(Path::new("."));
    let model = model::load_model(&args.model)?;
    let split = parse_split_filter(&args.split)?;
    let result = eval::evaluate_classification(&model, &records, base, split)?;
    print!("{}", eval::format_confusion(&result));
    if let Some(path) = args.out_csv {
        std::fs::write(&path, eval::confusion_csv(&result))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(0)
}

#[derive(Args)]
pub struct EvalDetectArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Comma-separated IoU thresholds.
    #[arg(long, default_value = "0.5,0.75,0.9")]
    iou: String,
    /// Sliding-window stride in pixels.
    #[arg(long, default_value_t = 8)]
    stride: u32,
    /// Class-probability threshold for map activation.
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    /// Cross-class NMS IoU threshold.
    #[arg(long, default_value_t = 0.45)]
    nms: f64,
    #[arg(long, default_value = "test")]
    split: String,
    /// Save predictions in the interchange format (JSONL).
    #[arg(long)]
    pred_out: Option<PathBuf>,
    /// Write per-class AP and mAP as CSV.
    #[arg(long)]
    out_csv: Option<PathBuf>,
}

pub fn eval_detect(args: EvalDetectArgs, _verbose: u8) -> Result<u8> {
    let records = read_manifest(&args.manifest)?;
    let base = args.manifest.parent().unwrap_or(Path::new("."));
    let model = model::load_model(&args.model)?;
    let thresholds = parse_thresholds(&args.iou)?;
    let split = parse_split_filter(&args.split)?;
    let params = DetectParams {
        stride: args.stride,
        threshold: args.tau,
        nms_iou: args.nms,
    };
    let predictions = eval::predict_manifest(&model, &records, base, &params, split)?;
    if let Some(path) = &args.pred_out {
        eval::write_predictions(path, &predictions)?;
    }
    let images = eval::pair_predictions(&records, &predictions, split)?;
    let result = eval::evaluate_detection(&images, &thresholds)?;
    print!("{}", eval::format_map_table(&result, "patch-cnn"));
    if let Some(path) = args.out_csv {
        std::fs::write(&path, eval::map_csv(&result))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(0)
}

#[derive(Args)]
pub struct TransferArgs {
    #[arg(long)]
    model_basic: PathBuf,
    #[arg(long)]
    model_difficult: PathBuf,
    #[arg(long)]
    manifest_basic: PathBuf,
    #[arg(long)]
    manifest_difficult: PathBuf,
    #[arg(long, default_value = "0.5,0.75,0.9")]
    iou: String,
    #[arg(long, default_value_t = 8)]
    stride: u32,
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    #[arg(long, default_value_t = 0.45)]
    nms: f64,
    #[arg(long)]
    out_csv: Option<PathBuf>,
}

pub fn transfer(args: TransferArgs, _verbose: u8) -> Result<u8> {
    let basic_records = read_manifest(&args.manifest_basic)?;
    let difficult_records = read_manifest(&args.manifest_difficult)?;
    let basic_base = args.manifest_basic.parent().unwrap_or(Path::new("."));
    let difficult_base = args.manifest_difficult.parent().unwrap_or(Path::new("."));
    let model_basic = model::load_model(&args.model_basic)?;
    let model_difficult = model::load_model(&args.model_difficult)?;
    let thresholds = parse_thresholds(&args.iou)?;
    let params = DetectParams {
        stride: args.stride,
        threshold: args.tau,
        nms_iou: args.nms,
    };
    let table = eval::transfer_matrix(
        [&model_basic, &model_difficult],
        [
            (basic_records.as_slice(), basic_base),
            (difficult_records.as_slice(), difficult_base),
        ],
        &thresholds,
        &params,
    )?;
    print!("{}", eval::format_transfer_table(&table));
    if let Some(path) = args.out_csv {
        std::fs::write(&path, eval::transfer_csv(&table))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(0)
}

#[derive(Args)]
pub struct ReportArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Predictions interchange file (from eval-detect --pred-out).
    #[arg(long)]
    predictions: PathBuf,
    /// IoU threshold for the size-recall curve.
    #[arg(long, default_value_t = 0.9)]
    iou: f64,
    /// Bucket edges on the ground-truth linear size ratio.
    #[arg(long, default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7")]
    buckets: String,
    /// Working image size the ratios refer to.
    #[arg(long, default_value_t = 300)]
    image_size: u32,
    #[arg(long, default_value = "test")]
    split: String,
    /// Write the size-recall curve as CSV.
    #[arg(long)]
    out_csv: Option<PathBuf>,
    /// Also report mAP at these thresholds.
    #[arg(long, default_value = "0.5,0.75,0.9")]
    map_iou: String,
}

pub fn report(args: ReportArgs, _verbose: u8) -> Result<u8> {
    let records = read_manifest(&args.manifest)?;
    let predictions = eval::read_predictions(&args.predictions)?;
    let split = parse_split_filter(&args.split)?;
    let images = eval::pair_predictions(&records, &predictions, split)?;
    let edges = parse_thresholds(&args.buckets)?;
    let map_thresholds = parse_thresholds(&args.map_iou)?;

    let detection = eval::evaluate_detection(&images, &map_thresholds)?;
    print!("{}", eval::format_map_table(&detection, "predictions"));

    let curve = eval::size_bucketed_recall(&images, args.iou, &edges, args.image_size)?;
    println!("size-recall at IoU {}", args.iou);
    for bucket in &curve.buckets {
        match bucket.recall() {
            Some(r) => println!(
                "  [{:.2}, {:.2}): {}/{} = {:.3}",
                bucket.lo, bucket.hi, bucket.matched, bucket.total, r
            ),
            None => println!("  [{:.2}, {:.2}): empty", bucket.lo, bucket.hi),
        }
    }
    if let Some(path) = args.out_csv {
        std::fs::write(&path, eval::size_recall_csv(&curve))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(0)
}

#[derive(Args)]
pub struct DistortArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Distortion class: gwn | gaussian_blur | salt_pepper | quantization |
    /// jpeg | lowpass | denoise | fnoise.
    #[arg(long = "type")]
    class: String,
    /// Severity level 1, 2, or 3 from the published grid.
    #[arg(long)]
    level: Option<u8>,
    /// Explicit severity parameter (within the class's legal range).
    #[arg(long)]
    param: Option<f64>,
    /// JPEG quality when the output path ends in .jpg/.jpeg.
    #[arg(long, default_value_t = 95)]
    out_quality: u8,
}

pub fn distort(args: DistortArgs, seed: u64) -> Result<u8> {
    let class: DistortionClass = args.class.parse().map_err(anyhow::Error::from)?;
    let spec = match (args.level, args.param) {
        (Some(level), None) => {
            if !(1..=3).contains(&level) {
                bail!("level must be 1, 2, or 3");
            }
            DistortionSpec::at_level(class, level as usize - 1)?
        }
        (None, Some(param)) => DistortionSpec::new(class, param)?,
        _ => bail!("give exactly one of --level or --param"),
    };
    let img = ddx_core::load_image(&args.input)?.to_real();
    let out = distort::apply(&img, &spec, &RngStream::new(seed, 0))?;
    let format = match args
        .output
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .as_deref()
    {
        Some("jpg" | "jpeg") => ddx_core::SaveFormat::Jpeg {
            quality: args.out_quality,
        },
        _ => ddx_core::SaveFormat::Png,
    };
    ddx_core::save_image(&out.to_bytes(), &args.output, format)?;
    println!(
        "applied {} (param {}) -> {}",
        spec.class,
        spec.param,
        args.output.display()
    );
    Ok(0)
}

#[derive(Args)]
pub struct VerifyArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Emit the report as JSON instead of text.
    #[arg(long, default_value_t = false)]
    json: bool,
}

pub fn verify(args: VerifyArgs) -> Result<u8> {
    let report = verify_manifest(&args.manifest)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{}", report.render());
    }
    Ok(if report.ok() { 0 } else { 1 })
}
