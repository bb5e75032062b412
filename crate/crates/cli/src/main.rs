//! `tiptrack` command-line interface: track / eval / eval-seg / bench /
//! synth workflows over the library.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 ingest
//! error, 4 pipeline error, 5 evaluation error, 1 anything else.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};

use tiptrack::error::{Error, ErrorCategory};
use tiptrack::imgproc::{Frame, LabelMap, ProbMap};
use tiptrack::io::{
    self, AppConfig, BackendKind, DatasetManifest, FrameSource, LoopingSource, TipAnnotationRow,
};
use tiptrack::metrics::{self, Report, ReportFormat, SegScores, TipErrors};
use tiptrack::pipeline::{run_pipeline, PipelineStats, TrackingResult};
use tiptrack::segmentation::{ClassicalSegmenter, OracleSegmenter, Segmenter};
use tiptrack::synth::{self, DegradePreset, SequenceOptions};
use tiptrack::Result;

#[derive(Parser)]
#[command(name = "tiptrack", version, about = "Real-time catheter/guidewire tip tracking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the tracking pipeline over a frame source and write tips.csv.
    Track(TrackArgs),
    /// Compare predicted tips against reference tips (MAE).
    Eval(EvalArgs),
    /// Compare predicted masks against reference masks (Dice/IoU/...).
    EvalSeg(EvalSegArgs),
    /// Measure sustained pipeline throughput and per-stage latency.
    Bench(BenchArgs),
    /// Generate a synthetic dataset with exact tip ground truth.
    Synth(SynthArgs),
}

#[derive(Args)]
struct BackendOpts {
    /// Segmentation backend.
    #[arg(long, value_parser = ["oracle", "classical"])]
    backend: Option<String>,
    /// Class count override (2 or 3).
    #[arg(long)]
    classes: Option<u8>,
    /// Ground-truth mask directory for the oracle backend.
    #[arg(long)]
    masks: Option<PathBuf>,
}

#[derive(Args)]
struct TrackArgs {
    /// Frame source: image directory, RAWV1 file, or `-` for stdin.
    #[arg(long)]
    input: PathBuf,
    /// Configuration file (flat `section.key = value`).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output tip annotations CSV.
    #[arg(long, default_value = "tips.csv")]
    output: PathBuf,
    /// Pipeline statistics JSON (printed to stdout when omitted).
    #[arg(long)]
    stats: Option<PathBuf>,
    /// Directory for per-frame overlay PNGs with T0/T1/T2 markers.
    #[arg(long)]
    overlay: Option<PathBuf>,
    /// Physical pixel spacing override in mm.
    #[arg(long)]
    spacing_mm: Option<f64>,
    /// File pattern for image directories.
    #[arg(long, default_value = "*.png")]
    pattern: String,
    #[command(flatten)]
    backend: BackendOpts,
}

#[derive(Args)]
struct EvalArgs {
    /// Predicted tips.csv.
    #[arg(long)]
    pred: PathBuf,
    /// Reference tips.csv.
    #[arg(long)]
    gt: PathBuf,
    /// Physical pixel spacing in mm (1.0 reports pixels).
    #[arg(long, default_value_t = 1.0)]
    spacing_mm: f64,
    /// Restrict the evaluation to one device class.
    #[arg(long)]
    class: Option<u8>,
    /// Report path prefix (writes PREFIX.csv and PREFIX.json).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct EvalSegArgs {
    /// Predicted mask directory.
    #[arg(long)]
    pred: PathBuf,
    /// Reference mask directory.
    #[arg(long)]
    gt: PathBuf,
    /// Report path prefix (writes PREFIX.csv and PREFIX.json).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Frame source: image directory or RAWV1 file (looped).
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Benchmark duration in seconds.
    #[arg(long, default_value_t = 5.0)]
    duration: f64,
    /// File pattern for image directories.
    #[arg(long, default_value = "*.png")]
    pattern: String,
    #[command(flatten)]
    backend: BackendOpts,
}

#[derive(Args)]
struct SynthArgs {
    /// Degradation preset.
    #[arg(long, default_value = "clean", value_parser = ["clean", "moderate", "heavy"])]
    preset: String,
    /// Number of frames.
    #[arg(long, default_value_t = 100)]
    frames: u32,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    force: bool,
    /// 2 = instrument only, 3 = catheter + guidewire.
    #[arg(long, default_value_t = 2)]
    classes: u8,
    /// Square frame size in pixels.
    #[arg(long, default_value_t = 500)]
    size: u32,
    /// Device advance in arc-pixels per frame.
    #[arg(long, default_value_t = 2.0)]
    motion: f64,
    /// Tube width in pixels.
    #[arg(long, default_value_t = 5)]
    width: u32,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Track(args) => cmd_track(args),
        Command::Eval(args) => cmd_eval(args),
        Command::EvalSeg(args) => cmd_eval_seg(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Synth(args) => cmd_synth(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}

fn exit_code(e: &Error) -> i32 {
    match e.category() {
        ErrorCategory::Config => 2,
        ErrorCategory::Ingest => 3,
        ErrorCategory::Pipeline => 4,
        ErrorCategory::Evaluation => 5,
        ErrorCategory::Other => match e {
            Error::InvalidArgument(_) => 2,
            _ => 1,
        },
    }
}

fn load_config_opt(path: &Option<PathBuf>) -> Result<AppConfig> {
    match path {
        Some(p) => io::load_config(p),
        None => Ok(AppConfig::default()),
    }
}

fn apply_backend_opts(cfg: &mut AppConfig, opts: &BackendOpts) -> Result<()> {
    if let Some(kind) = &opts.backend {
        cfg.backend.kind = match kind.as_str() {
            "oracle" => BackendKind::Oracle,
            _ => BackendKind::Classical,
        };
    }
    if let Some(classes) = opts.classes {
        if classes != 2 && classes != 3 {
            return Err(Error::config("backend.classes", "must be 2 or 3"));
        }
        cfg.backend.classes = classes;
    }
    if let Some(masks) = &opts.masks {
        cfg.backend.mask_dir = Some(masks.clone());
    }
    Ok(())
}

fn build_backend(cfg: &AppConfig) -> Result<Box<dyn Segmenter>> {
    match cfg.backend.kind {
        BackendKind::Classical => Ok(Box::new(ClassicalSegmenter {
            threshold: cfg.backend.threshold,
            polarity: cfg.backend.polarity,
            open_radius: cfg.backend.open_radius,
        })),
        BackendKind::Oracle => {
            let dir = cfg.backend.mask_dir.as_ref().ok_or_else(|| {
                Error::config("backend.mask_dir", "oracle backend needs a mask directory")
            })?;
            Ok(Box::new(OracleSegmenter::from_dir(dir)?))
        }
    }
}

fn open_source(input: &Path, pattern: &str) -> Result<Box<dyn FrameSource + Send>> {
    if input.as_os_str() == "-" {
        return Ok(Box::new(io::RawStreamSource::from_reader(
            std::io::stdin(),
            "<stdin>",
        )?));
    }
    if input.is_dir() {
        return Ok(Box::new(io::open_image_dir(input, pattern)?));
    }
    Ok(Box::new(io::open_raw_stream(input)?))
}

fn cmd_track(args: TrackArgs) -> Result<()> {
    let mut cfg = load_config_opt(&args.config)?;
    apply_backend_opts(&mut cfg, &args.backend)?;
    if let Some(s) = args.spacing_mm {
        if s <= 0.0 {
            return Err(Error::config("pipeline.pixel_spacing_mm", "must be > 0"));
        }
        cfg.pipeline.pixel_spacing_mm = s;
    }
    let backend = build_backend(&cfg)?;
    let mut source = open_source(&args.input, &args.pattern)?;

    let mut results: Vec<TrackingResult> = Vec::new();
    let stats = run_pipeline(
        source.as_mut(),
        backend.as_ref(),
        &cfg.postprocess,
        &cfg.pipeline,
        &mut |r| results.push(r),
    )?;

    let rows: Vec<TipAnnotationRow> = results
        .iter()
        .flat_map(|r| r.tips.iter().map(TipAnnotationRow::from_estimate))
        .collect();
    io::write_tips_csv(&rows, &args.output)?;

    let report = Report {
        stats: Some(stats.clone()),
        config_echo: cfg.echo(),
        ..Report::default()
    };
    let stats_json = metrics::emit_report(&report, ReportFormat::Json)?;
    match &args.stats {
        Some(path) => std::fs::write(path, &stats_json)?,
        None => print!("{stats_json}"),
    }

    if let Some(overlay_dir) = &args.overlay {
        write_overlays(&args.input, &args.pattern, overlay_dir, &results)?;
    }

    eprintln!(
        "tracked {} frames ({} dropped) at {:.1} fps -> {}",
        stats.frames_out,
        stats.frames_dropped,
        stats.throughput_fps,
        args.output.display()
    );
    Ok(())
}

fn write_overlays(
    input: &Path,
    pattern: &str,
    overlay_dir: &Path,
    results: &[TrackingResult],
) -> Result<()> {
    if !input.is_dir() {
        return Err(Error::InvalidArgument(
            "--overlay requires an image-directory input".into(),
        ));
    }
    std::fs::create_dir_all(overlay_dir)?;
    let by_id: BTreeMap<u64, &TrackingResult> =
        results.iter().map(|r| (r.frame_sequence_id, r)).collect();
    let mut source = io::open_image_dir(input, pattern)?;
    while let Some(frame) = source.next_frame() {
        let frame = frame?;
        if let Some(result) = by_id.get(&frame.sequence_id) {
            let path = overlay_dir.join(format!("{:06}.png", frame.sequence_id));
            io::write_overlay_png(&frame, &result.tips, &path)?;
        }
    }
    Ok(())
}

/// Aligns prediction and reference rows by (frame_id, class_id),
/// requiring an exact key match in both directions.
fn align_rows(
    pred: &[TipAnnotationRow],
    gt: &[TipAnnotationRow],
    class_filter: Option<u8>,
) -> Result<Vec<(TipAnnotationRow, TipAnnotationRow)>> {
    let keep = |r: &&TipAnnotationRow| class_filter.is_none_or(|c| r.class_id == c);
    let pred_map: BTreeMap<(u64, u8), &TipAnnotationRow> = pred
        .iter()
        .filter(keep)
        .map(|r| ((r.frame_id, r.class_id), r))
        .collect();
    let gt_map: BTreeMap<(u64, u8), &TipAnnotationRow> = gt
        .iter()
        .filter(keep)
        .map(|r| ((r.frame_id, r.class_id), r))
        .collect();
    let missing_in_pred: Vec<String> = gt_map
        .keys()
        .filter(|k| !pred_map.contains_key(k))
        .map(|(f, c)| format!("{f}/{c}"))
        .collect();
    let missing_in_gt: Vec<String> = pred_map
        .keys()
        .filter(|k| !gt_map.contains_key(k))
        .map(|(f, c)| format!("{f}/{c}"))
        .collect();
    if !missing_in_pred.is_empty() || !missing_in_gt.is_empty() {
        return Err(Error::UndefinedMetric(format!(
            "id mismatch: missing in predictions [{}], missing in reference [{}]",
            missing_in_pred.join(", "),
            missing_in_gt.join(", ")
        )));
    }
    Ok(gt_map
        .iter()
        .map(|(k, g)| (*pred_map[k], **g))
        .collect())
}

fn write_report(report: &Report, output: &Option<PathBuf>) -> Result<()> {
    let csv = metrics::emit_report(report, ReportFormat::Csv)?;
    let json = metrics::emit_report(report, ReportFormat::Json)?;
    match output {
        Some(prefix) => {
            std::fs::write(prefix.with_extension("csv"), &csv)?;
            std::fs::write(prefix.with_extension("json"), &json)?;
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let pred = io::read_tips_csv(&args.pred)?;
    let gt = io::read_tips_csv(&args.gt)?;
    let pairs = align_rows(&pred, &gt, args.class)?;
    let preds: Vec<((f64, f64), bool)> = pairs.iter().map(|(p, _)| (p.t0, p.valid)).collect();
    let gts: Vec<(f64, f64)> = pairs.iter().map(|(_, g)| g.t0).collect();
    let errors: TipErrors = metrics::tip_errors_from_points(&preds, &gts, args.spacing_mm)?;
    let report = Report {
        tips: Some(errors),
        ..Report::default()
    };
    write_report(&report, &args.output)?;
    eprintln!(
        "MAE x={:.4} y={:.4} xy={:.4} over {} pairs ({} invalid)",
        errors.mae_x, errors.mae_y, errors.mae_xy, errors.n_frames, errors.n_invalid
    );
    Ok(())
}

fn relabel(map: &LabelMap, num_classes: u8) -> LabelMap {
    LabelMap::new(map.width(), map.height(), num_classes, map.labels().to_vec())
        .expect("labels stay valid when widening the class count")
}

fn cmd_eval_seg(args: EvalSegArgs) -> Result<()> {
    let pred = io::load_mask_dir(&args.pred)?;
    let gt = io::load_mask_dir(&args.gt)?;
    let missing_pred: Vec<String> = gt
        .keys()
        .filter(|k| !pred.contains_key(k))
        .map(|k| k.to_string())
        .collect();
    let missing_gt: Vec<String> = pred
        .keys()
        .filter(|k| !gt.contains_key(k))
        .map(|k| k.to_string())
        .collect();
    if !missing_pred.is_empty() || !missing_gt.is_empty() {
        return Err(Error::UndefinedMetric(format!(
            "id mismatch: missing in predictions [{}], missing in reference [{}]",
            missing_pred.join(", "),
            missing_gt.join(", ")
        )));
    }
    let k = pred
        .values()
        .chain(gt.values())
        .map(|m| m.num_classes())
        .max()
        .ok_or_else(|| Error::UndefinedMetric("no masks to evaluate".into()))?;

    // Average per-frame scores, each frame weighted equally.
    let mut acc: BTreeMap<u8, Vec<metrics::ClassScores>> = BTreeMap::new();
    for (id, p) in &pred {
        let scores = metrics::seg_scores(&relabel(p, k), &relabel(&gt[id], k))?;
        for (c, s) in scores.per_class {
            acc.entry(c).or_default().push(s);
        }
    }
    let per_class: Vec<(u8, metrics::ClassScores)> = acc
        .into_iter()
        .map(|(c, list)| {
            let n = list.len() as f64;
            let mean = metrics::ClassScores {
                dice: list.iter().map(|s| s.dice).sum::<f64>() / n,
                iou: list.iter().map(|s| s.iou).sum::<f64>() / n,
                precision: list.iter().map(|s| s.precision).sum::<f64>() / n,
                recall: list.iter().map(|s| s.recall).sum::<f64>() / n,
                f1: list.iter().map(|s| s.f1).sum::<f64>() / n,
            };
            (c, mean)
        })
        .collect();
    let n = per_class.len() as f64;
    let mean = metrics::ClassScores {
        dice: per_class.iter().map(|(_, s)| s.dice).sum::<f64>() / n,
        iou: per_class.iter().map(|(_, s)| s.iou).sum::<f64>() / n,
        precision: per_class.iter().map(|(_, s)| s.precision).sum::<f64>() / n,
        recall: per_class.iter().map(|(_, s)| s.recall).sum::<f64>() / n,
        f1: per_class.iter().map(|(_, s)| s.f1).sum::<f64>() / n,
    };
    let scores = SegScores { per_class, mean };
    eprintln!(
        "seg mean: dice={:.4} iou={:.4} over {} frames",
        scores.mean.dice,
        scores.mean.iou,
        pred.len()
    );
    let report = Report {
        seg: Some(scores),
        ..Report::default()
    };
    write_report(&report, &args.output)
}

/// Oracle wrapper for looped sources: looks masks up modulo the stored
/// period so replayed frames keep their annotations.
struct LoopedOracle {
    inner: OracleSegmenter,
    period: u64,
}

impl Segmenter for LoopedOracle {
    fn num_classes(&self) -> u8 {
        self.inner.num_classes()
    }
    fn segment(&self, frame: &Frame) -> Result<ProbMap> {
        let mut clone = frame.clone();
        clone.sequence_id = frame.sequence_id % self.period;
        self.inner.segment(&clone)
    }
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    if args.duration <= 0.0 {
        return Err(Error::InvalidArgument("duration must be > 0".into()));
    }
    let mut cfg = load_config_opt(&args.config)?;
    apply_backend_opts(&mut cfg, &args.backend)?;

    // Preload every source frame so the benchmark can loop it.
    let mut base = open_source(&args.input, &args.pattern)?;
    let mut frames = Vec::new();
    while let Some(frame) = base.next_frame() {
        frames.push(frame?);
    }
    if frames.is_empty() {
        return Err(Error::ingest(&args.input, "source yielded no frames"));
    }
    let period = frames.len() as u64;

    let backend: Box<dyn Segmenter> = match cfg.backend.kind {
        BackendKind::Oracle => {
            let dir = cfg.backend.mask_dir.as_ref().ok_or_else(|| {
                Error::config("backend.mask_dir", "oracle backend needs a mask directory")
            })?;
            Box::new(LoopedOracle {
                inner: OracleSegmenter::from_dir(dir)?,
                period,
            })
        }
        BackendKind::Classical => build_backend(&cfg)?,
    };

    let deadline = Instant::now() + Duration::from_secs_f64(args.duration);
    let mut source = LoopingSource::new(frames, Some(deadline), None);
    let mut n = 0u64;
    let stats: PipelineStats = run_pipeline(
        &mut source,
        backend.as_ref(),
        &cfg.postprocess,
        &cfg.pipeline,
        &mut |_r| n += 1,
    )?;

    let report = Report {
        stats: Some(stats.clone()),
        config_echo: cfg.echo(),
        ..Report::default()
    };
    print!("{}", metrics::emit_report(&report, ReportFormat::Json)?);
    eprintln!(
        "bench: {:.1} fps over {} frames; stage p50/p95/max (ms): read {:.2}/{:.2}/{:.2}, \
         preprocess {:.2}/{:.2}/{:.2}, infer {:.2}/{:.2}/{:.2}, postprocess {:.2}/{:.2}/{:.2}",
        stats.throughput_fps,
        stats.frames_out,
        stats.stages.read.p50_ms,
        stats.stages.read.p95_ms,
        stats.stages.read.max_ms,
        stats.stages.preprocess.p50_ms,
        stats.stages.preprocess.p95_ms,
        stats.stages.preprocess.max_ms,
        stats.stages.infer.p50_ms,
        stats.stages.infer.p95_ms,
        stats.stages.infer.max_ms,
        stats.stages.postprocess.p50_ms,
        stats.stages.postprocess.p95_ms,
        stats.stages.postprocess.max_ms,
    );
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let preset = DegradePreset::parse(&args.preset)?;
    let options = SequenceOptions {
        image_size: args.size,
        tube_width: args.width,
        classes: args.classes,
        preset,
    };
    let bundles = synth::gen_sequence(args.frames, args.motion, args.seed, &options)?;
    let manifest = DatasetManifest {
        version: 1,
        generator: "tiptrack-synth".into(),
        preset: preset.as_str().into(),
        image_size: args.size,
        n_frames: args.frames,
        seed: args.seed,
        tube_width: args.width,
        classes: args.classes,
        motion_px: args.motion,
    };
    io::write_dataset(&args.out, &bundles, &manifest, args.force)?;
    eprintln!(
        "wrote {} frames to {} (preset {}, seed {})",
        args.frames,
        args.out.display(),
        preset.as_str(),
        args.seed
    );
    Ok(())
}
