//! Command-line front end: dataset synthesis, classical filters, training,
//! inference, evaluation, and rendering.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use desnow::filters::{dror, dror_on_image, ror, ror_on_image, DrorConfig, RorConfig};
use desnow::geom::io as gio;
use desnow::geom::{Label, SensorConfig};
use desnow::model::{
    infer_classifier_labels, train, DesnowModel, Schedule, TrainConfig, TrainMode, TrainScan,
};
use desnow::pipeline::{
    classify, evaluate, load_all_scans, load_manifest, score_scan, select_threshold,
    split_dataset, synthesize_dataset, threshold_grid, DatasetParams, LoadedScan, Manifest,
    Metrics, ShiftConfig, Split,
};
use desnow::synth::{BoxScatter, RadialLaw, SceneSpec, SnowModel, SynthConfig};

#[derive(Parser)]
#[command(name = "desnow", about = "Self-supervised LiDAR de-snowing at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a paired clean/noisy/label dataset with a manifest.
    Synth(SynthArgs),
    /// Run a classical sparsity filter over a cloud or scan.
    Filter(FilterArgs),
    /// Train the reconstruction/difficulty model.
    Train(TrainArgs),
    /// Score scans with a trained model and emit predicted labels.
    Infer(InferArgs),
    /// Compare predicted labels against ground truth.
    Eval(EvalArgs),
    /// Render a scan to PNG.
    Render(RenderArgs),
}

#[derive(Args)]
struct SensorArgs {
    /// Laser channels (rows).
    #[arg(long, default_value_t = 32)]
    rows: usize,
    /// Azimuth bins (columns); sets the horizontal resolution 2*pi/cols.
    #[arg(long, default_value_t = 512)]
    cols: usize,
    #[arg(long, default_value_t = 100.0)]
    max_range: f64,
    /// Elevation of row 0, degrees.
    #[arg(long, default_value_t = -25.0)]
    elev_bottom_deg: f64,
    /// Elevation of the last row, degrees.
    #[arg(long, default_value_t = 3.0)]
    elev_top_deg: f64,
}

impl SensorArgs {
    fn build(&self) -> Result<SensorConfig> {
        let delta_h = 2.0 * std::f64::consts::PI / self.cols as f64;
        Ok(SensorConfig::with_linear_elevation(
            self.rows,
            delta_h,
            self.max_range,
            self.elev_bottom_deg.to_radians(),
            self.elev_top_deg.to_radians(),
        )?)
    }
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    scenes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Snow returns per scan, "min:max".
    #[arg(long, default_value = "500:1500")]
    noise_count_range: String,
    /// Mean of the exponential radial law for snow ranges, meters.
    #[arg(long, default_value_t = 8.0)]
    snow_mean_range: f64,
    /// Sensing-error margin tau, meters.
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    /// Adaptive laser gain g.
    #[arg(long, default_value_t = 0.45)]
    gain: f64,
    /// Atmospheric extinction beta, 1/m.
    #[arg(long, default_value_t = 0.02)]
    extinction: f64,
    /// Detectable noise floor n.
    #[arg(long, default_value_t = 0.05)]
    noise_floor: f64,
    #[command(flatten)]
    sensor: SensorArgs,
}

#[derive(Args)]
struct FilterArgs {
    /// ror or dror.
    #[arg(long)]
    method: String,
    /// Cloud (.csv/.bin) or range image (.rimg).
    #[arg(long)]
    input: PathBuf,
    /// Raw u8 labels for clouds, a label .rimg for range images.
    #[arg(long)]
    output: PathBuf,
    /// ROR search radius, meters.
    #[arg(long, default_value_t = 0.5)]
    radius: f64,
    #[arg(long, default_value_t = 3)]
    min_neighbors: usize,
    /// DROR radius multiplier gamma.
    #[arg(long, default_value_t = 3.0)]
    gamma: f64,
    /// DROR minimum search radius, meters.
    #[arg(long, default_value_t = 0.04)]
    min_radius: f64,
    #[command(flatten)]
    sensor: SensorArgs,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory (from `synth`).
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    /// Training log CSV path.
    #[arg(long)]
    log: Option<PathBuf>,
    /// self or semi.
    #[arg(long, default_value = "self")]
    mode: String,
    /// ramp, pretrain, smooth, or supervised (semi mode).
    #[arg(long, default_value = "smooth")]
    schedule: String,
    #[arg(long, default_value_t = 3)]
    hypotheses: usize,
    #[arg(long, default_value_t = 0.5)]
    blank_ratio: f64,
    #[arg(long, default_value_t = 800)]
    steps: usize,
    #[arg(long, default_value_t = 3e-3)]
    lr: f64,
    #[arg(long, default_value_t = 1)]
    batch_size: usize,
    #[arg(long, default_value_t = 16)]
    channels: usize,
    #[arg(long, default_value_t = 4)]
    blocks: usize,
    #[arg(long, default_value_t = 3)]
    encoder_blocks: usize,
    /// Meters per normalized range unit.
    #[arg(long, default_value_t = 100.0)]
    range_scale: f64,
    /// Fraction of training scans whose labels are visible (semi mode).
    #[arg(long, default_value_t = 0.1)]
    labeled_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Disable horizontal flip augmentation.
    #[arg(long)]
    no_flip: bool,
    /// train:val:test ratios.
    #[arg(long, default_value = "0.7:0.15:0.15")]
    split: String,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Output directory for predicted label files.
    #[arg(long)]
    out: PathBuf,
    /// Subset to score: test, val, train, or all.
    #[arg(long, default_value = "test")]
    subset: String,
    /// Depth-debias: p<N> percentile shift, "min", or "none".
    #[arg(long, default_value = "p20")]
    shift: String,
    /// Decision threshold: "auto" (validation-selected) or a number.
    #[arg(long, default_value = "auto")]
    threshold: String,
    /// Use the semi-supervised classifier head instead of thresholding.
    #[arg(long)]
    classifier: bool,
    #[arg(long, default_value = "0.7:0.15:0.15")]
    split: String,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory of predicted label files ({id}_pred.rimg).
    #[arg(long)]
    pred: PathBuf,
    /// Dataset directory with the ground-truth manifest.
    #[arg(long)]
    gt: PathBuf,
    /// Also break metrics down by per-scan noise level.
    #[arg(long)]
    by_noise_level: bool,
    /// Method name for the report.
    #[arg(long, default_value = "ours")]
    name: String,
    /// Metrics CSV output path.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    data: PathBuf,
    /// Scan id from the manifest, e.g. scan_0003.
    #[arg(long)]
    scan: String,
    /// bev, range, or difficulty.
    #[arg(long, default_value = "bev")]
    style: String,
    /// Predicted labels directory; ground truth is used when absent.
    #[arg(long)]
    pred: Option<PathBuf>,
    /// Checkpoint for the difficulty style.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Integer upscale for range/difficulty styles.
    #[arg(long, default_value_t = 4)]
    scale: u32,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Synth(args) => cmd_synth(args),
        Command::Filter(args) => cmd_filter(args),
        Command::Train(args) => cmd_train(args),
        Command::Infer(args) => cmd_infer(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Render(args) => cmd_render(args),
    }
}

fn parse_pair(s: &str) -> Result<(usize, usize)> {
    let (a, b) = s.split_once(':').context("expected min:max")?;
    Ok((a.trim().parse()?, b.trim().parse()?))
}

fn parse_ratios(s: &str) -> Result<(f64, f64, f64)> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        bail!("expected three ratios a:b:c");
    }
    Ok((parts[0].parse()?, parts[1].parse()?, parts[2].parse()?))
}

fn parse_shift(s: &str) -> Result<Option<ShiftConfig>> {
    match s {
        "none" => Ok(None),
        "min" => Ok(Some(ShiftConfig { percentile: 0, ..ShiftConfig::default() })),
        other => {
            let p: u8 = other
                .strip_prefix('p')
                .context("shift must be none, min, or p<percentile>")?
                .parse()?;
            if p > 100 {
                bail!("percentile must be <= 100");
            }
            Ok(Some(ShiftConfig { percentile: p, ..ShiftConfig::default() }))
        }
    }
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let sensor = args.sensor.build()?;
    let count_range = parse_pair(&args.noise_count_range)?;
    let params = DatasetParams {
        scenes: args.scenes,
        seed: args.seed,
        scene_spec: SceneSpec {
            snow: SnowModel {
                count_range,
                radial: RadialLaw::Exponential { mean: args.snow_mean_range },
            },
            scatter: Some(BoxScatter::default()),
            ..SceneSpec::default()
        },
        synth: SynthConfig {
            sensing_margin: args.tau,
            laser_gain: args.gain,
            extinction: args.extinction,
            noise_floor: args.noise_floor,
            ..SynthConfig::default()
        },
    };
    let manifest = synthesize_dataset(&args.out, &sensor, &params)?;
    let mut by_level = std::collections::BTreeMap::new();
    for scan in &manifest.scans {
        *by_level.entry(format!("{}", scan.noise_level)).or_insert(0usize) += 1;
    }
    println!("wrote {} scans to {}", manifest.scans.len(), args.out.display());
    for (level, count) in by_level {
        println!("  {level}: {count}");
    }
    Ok(())
}

fn cmd_filter(args: FilterArgs) -> Result<()> {
    let ext = args.input.extension().and_then(|e| e.to_str()).unwrap_or("");
    let sensor = args.sensor.build()?;
    match ext {
        "rimg" => {
            let (img, _) = gio::read_range_image(&args.input)?;
            let labels = match args.method.as_str() {
                "ror" => {
                    ror_on_image(&img, &RorConfig::new(args.radius, args.min_neighbors)?, &sensor)?
                }
                "dror" => {
                    let cfg = DrorConfig {
                        radius_multiplier: args.gamma,
                        min_search_radius: args.min_radius,
                        min_neighbors: args.min_neighbors,
                    };
                    cfg.validate()?;
                    dror_on_image(&img, &cfg, &sensor)?
                }
                other => bail!("unknown method {other:?}"),
            };
            gio::write_label_map(&args.output, &labels, sensor.delta_h)?;
            println!(
                "{}: {} noise / {} valid pixels",
                args.method,
                labels.count(Label::Noise),
                labels.values.iter().filter(|&&l| l != Label::Invalid).count()
            );
        }
        "csv" | "bin" => {
            let cloud = if ext == "csv" {
                gio::read_cloud_csv(&args.input)?
            } else {
                gio::read_cloud_binary(&args.input)?
            };
            let labels = match args.method.as_str() {
                "ror" => ror(&cloud, &RorConfig::new(args.radius, args.min_neighbors)?),
                "dror" => {
                    let cfg = DrorConfig {
                        radius_multiplier: args.gamma,
                        min_search_radius: args.min_radius,
                        min_neighbors: args.min_neighbors,
                    };
                    cfg.validate()?;
                    dror(&cloud, &cfg, &sensor)
                }
                other => bail!("unknown method {other:?}"),
            };
            let bytes: Vec<u8> = labels.iter().map(|l| l.to_u8()).collect();
            std::fs::write(&args.output, bytes)?;
            println!(
                "{}: {} noise / {} points",
                args.method,
                labels.iter().filter(|&&l| l == Label::Noise).count(),
                labels.len()
            );
        }
        other => bail!("unsupported input extension {other:?}"),
    }
    Ok(())
}

/// Deterministic split of a manifest; seeded by the dataset seed so train,
/// infer, and eval always agree.
fn manifest_split(manifest: &Manifest, ratios: (f64, f64, f64)) -> Result<Split> {
    Ok(split_dataset(manifest.scans.len(), ratios, manifest.seed)?)
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let manifest = load_manifest(&args.data)?;
    let scans = load_all_scans(&args.data, &manifest)?;
    let split = manifest_split(&manifest, parse_ratios(&args.split)?)?;

    let mode = match args.mode.as_str() {
        "self" => TrainMode::SelfSupervised,
        "semi" => TrainMode::Semi,
        other => bail!("unknown mode {other:?}"),
    };
    let schedule: Schedule = args.schedule.parse().map_err(|e: String| anyhow::anyhow!(e))?;

    // labeled subset for semi mode: a deterministic prefix of the shuffled
    // train indices
    let n_labeled = if mode == TrainMode::Semi {
        ((args.labeled_fraction * split.train.len() as f64).round() as usize)
            .min(split.train.len())
    } else {
        0
    };

    let train_scans: Vec<TrainScan> = split
        .train
        .iter()
        .enumerate()
        .map(|(pos, &idx)| TrainScan {
            image: scans[idx].noisy.clone(),
            labels: (pos < n_labeled).then(|| scans[idx].labels.clone()),
        })
        .collect();

    let cfg = TrainConfig {
        mode,
        schedule,
        hypotheses: args.hypotheses,
        blank_ratio: args.blank_ratio,
        learning_rate: args.lr,
        steps: args.steps,
        batch_size: args.batch_size,
        channels: args.channels,
        blocks: args.blocks,
        encoder_blocks: args.encoder_blocks,
        range_scale: args.range_scale,
        flip_augment: !args.no_flip,
        seed: args.seed,
    };
    let started = std::time::Instant::now();
    let outcome = train(&train_scans, &cfg)?;
    let elapsed = started.elapsed().as_secs_f64();
    outcome.model.save(&args.out, cfg.steps as u64)?;
    if let Some(log) = &args.log {
        desnow::model::train::write_history_csv(log, &outcome.history)?;
    }
    println!(
        "trained {} steps on {} scans ({n_labeled} labeled) in {elapsed:.1}s -> {}",
        cfg.steps,
        train_scans.len(),
        args.out.display()
    );
    Ok(())
}

fn subset_indices(split: &Split, subset: &str, n: usize) -> Result<Vec<usize>> {
    Ok(match subset {
        "train" => split.train.clone(),
        "val" => split.val.clone(),
        "test" => split.test.clone(),
        "all" => (0..n).collect(),
        other => bail!("unknown subset {other:?}"),
    })
}

fn cmd_infer(args: InferArgs) -> Result<()> {
    let manifest = load_manifest(&args.data)?;
    let scans = load_all_scans(&args.data, &manifest)?;
    let split = manifest_split(&manifest, parse_ratios(&args.split)?)?;
    let (model, _) = DesnowModel::load(&args.model)?;
    let shift = parse_shift(&args.shift)?;
    std::fs::create_dir_all(&args.out)?;

    let threshold = if args.classifier {
        f64::NAN
    } else if args.threshold == "auto" {
        let val_scans: Vec<&LoadedScan> = split.val.iter().map(|&i| &scans[i]).collect();
        if val_scans.is_empty() {
            bail!("auto threshold needs a nonempty validation split");
        }
        let (scores, is_noise) =
            desnow::pipeline::pooled_scores(&model, &val_scans, shift.as_ref())?;
        let grid = threshold_grid(&scores, 201);
        select_threshold(&scores, &is_noise, &grid)?
    } else {
        args.threshold.parse().context("threshold must be a number or auto")?
    };

    let indices = subset_indices(&split, &args.subset, scans.len())?;
    for &i in &indices {
        let scan = &scans[i];
        let pred = if args.classifier {
            infer_classifier_labels(&model, &scan.noisy)?
        } else {
            let scores = score_scan(&model, &scan.noisy, shift.as_ref())?;
            classify(&scores, threshold)
        };
        gio::write_label_map(
            &args.out.join(format!("{}_pred.rimg", scan.id)),
            &pred,
            manifest.sensor.delta_h,
        )?;
    }
    let summary = serde_json::json!({
        "threshold": if threshold.is_nan() { serde_json::Value::Null } else { threshold.into() },
        "classifier": args.classifier,
        "shift": args.shift,
        "subset": args.subset,
        "scans": indices.len(),
    });
    std::fs::write(args.out.join("infer.json"), serde_json::to_string_pretty(&summary)?)?;
    if args.classifier {
        println!("classified {} scans with the classifier head", indices.len());
    } else {
        println!("classified {} scans at threshold {threshold}", indices.len());
    }
    Ok(())
}

fn metrics_row(name: &str, group: &str, m: &Metrics) -> String {
    format!(
        "{name},{group},{},{},{},{},{},{},{}",
        m.iou(),
        m.precision(),
        m.recall(),
        m.tp,
        m.fp,
        m.fn_,
        m.tn
    )
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let manifest = load_manifest(&args.gt)?;
    let mut total = Metrics::default();
    let mut by_level: std::collections::BTreeMap<String, Metrics> = Default::default();
    let mut evaluated = 0usize;
    for record in &manifest.scans {
        let pred_path = args.pred.join(format!("{}_pred.rimg", record.id));
        if !pred_path.exists() {
            continue;
        }
        let (pred, _) = gio::read_label_map(&pred_path)?;
        let (gt, _) = gio::read_label_map(&args.gt.join(&record.labels))?;
        let m = evaluate(&pred, &gt)?;
        total.merge(&m);
        by_level.entry(format!("{}", record.noise_level)).or_default().merge(&m);
        evaluated += 1;
    }
    if evaluated == 0 {
        bail!("no predictions found in {}", args.pred.display());
    }

    println!("{:<20} {:>8} {:>10} {:>8}", "Method", "IoU", "Precision", "Recall");
    println!(
        "{:<20} {:>8.4} {:>10.4} {:>8.4}",
        args.name,
        total.iou(),
        total.precision(),
        total.recall()
    );
    if args.by_noise_level {
        for (level, m) in &by_level {
            println!(
                "{:<20} {:>8.4} {:>10.4} {:>8.4}",
                format!("{} [{level}]", args.name),
                m.iou(),
                m.precision(),
                m.recall()
            );
        }
    }

    if let Some(csv) = &args.csv {
        let mut out = String::from("method,group,iou,precision,recall,tp,fp,fn,tn\n");
        out.push_str(&metrics_row(&args.name, "all", &total));
        out.push('\n');
        if args.by_noise_level {
            for (level, m) in &by_level {
                out.push_str(&metrics_row(&args.name, level, m));
                out.push('\n');
            }
        }
        std::fs::write(csv, out)?;
    }
    Ok(())
}

fn load_pred_or_gt(
    pred_dir: Option<&Path>,
    data: &Path,
    record_labels: &str,
    id: &str,
) -> Result<desnow::geom::LabelMap> {
    match pred_dir {
        Some(dir) => Ok(gio::read_label_map(&dir.join(format!("{id}_pred.rimg")))?.0),
        None => Ok(gio::read_label_map(&data.join(record_labels))?.0),
    }
}

fn cmd_render(args: RenderArgs) -> Result<()> {
    use desnow::pipeline::render as r;
    let manifest = load_manifest(&args.data)?;
    let record = manifest
        .scans
        .iter()
        .find(|s| s.id == args.scan)
        .with_context(|| format!("scan {} not in manifest", args.scan))?;
    let (img, _) = gio::read_range_image(&args.data.join(&record.noisy))?;
    let (gt, _) = gio::read_label_map(&args.data.join(&record.labels))?;

    let png = match args.style.as_str() {
        "bev" => {
            let pred =
                load_pred_or_gt(args.pred.as_deref(), &args.data, &record.labels, &record.id)?;
            r::render_bev(&img, &pred, &gt, &manifest.sensor, &r::BevConfig::default())
        }
        "range" => {
            let pred =
                load_pred_or_gt(args.pred.as_deref(), &args.data, &record.labels, &record.id)?;
            r::render_range_outcomes(&pred, &gt, args.scale)
        }
        "difficulty" => {
            let model_path = args.model.as_ref().context("difficulty style needs --model")?;
            let (model, _) = DesnowModel::load(model_path)?;
            let scores = score_scan(&model, &img, Some(&ShiftConfig::default()))?;
            r::render_difficulty(&scores, args.scale)
        }
        other => bail!("unknown style {other:?}"),
    };
    png.save(&args.out)?;
    println!("wrote {}", args.out.display());
    Ok(())
}
