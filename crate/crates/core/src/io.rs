//! Frame sources, mask/annotation readers and writers, dataset layout,
//! and configuration loading.
//!
//! Interchange formats:
//! - frames and masks: 8-bit PNG (`masks/` holds raw label values
//!   {0, 1, 2});
//! - tip annotations: `tips.csv` with header
//!   `frame_id,class_id,t0_x,t0_y,t1_x,t1_y,t2_x,t2_y,valid`, floats at
//!   two decimals, UTF-8, LF line endings;
//! - raw streams: an ASCII header `RAWV1 <width> <height> <channels>\n`
//!   followed by concatenated row-major frames;
//! - config: a flat `section.key = value` text document (# comments),
//!   unknown keys rejected.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgproc::{Frame, LabelMap};
use crate::pipeline::{DropPolicy, PipelineConfig, PipelineMode};
use crate::postprocess::{PostprocessConfig, TipEstimate};
use crate::segmentation::Polarity;
use crate::synth::SynthFrameBundle;

/// A sequential frame producer consumed by exactly one reader thread.
pub trait FrameSource {
    fn next_frame(&mut self) -> Option<Result<Frame>>;
    /// (width, height, channels) of the frames this source yields.
    fn geometry(&self) -> (u32, u32, u8);
    fn fps_hint(&self) -> f64 {
        24.0
    }
    fn len_hint(&self) -> Option<usize> {
        None
    }
}

/// In-memory source, mostly for tests and benchmarks.
pub struct MemorySource {
    frames: std::collections::VecDeque<Frame>,
    geometry: (u32, u32, u8),
}

impl MemorySource {
    pub fn new(frames: Vec<Frame>) -> MemorySource {
        let geometry = frames
            .first()
            .map(|f| (f.width(), f.height(), f.channels()))
            .unwrap_or((0, 0, 1));
        MemorySource {
            frames: frames.into(),
            geometry,
        }
    }
}

impl FrameSource for MemorySource {
    fn next_frame(&mut self) -> Option<Result<Frame>> {
        self.frames.pop_front().map(Ok)
    }

    fn geometry(&self) -> (u32, u32, u8) {
        self.geometry
    }

    fn len_hint(&self) -> Option<usize> {
        Some(self.frames.len())
    }
}

/// Loops a fixed frame list, reassigning sequence ids, until a deadline
/// or frame budget is hit. Used by the benchmark command.
pub struct LoopingSource {
    frames: Vec<Frame>,
    idx: usize,
    next_id: u64,
    deadline: Option<Instant>,
    max_frames: Option<u64>,
    fps: f64,
}

impl LoopingSource {
    pub fn new(frames: Vec<Frame>, deadline: Option<Instant>, max_frames: Option<u64>) -> Self {
        assert!(!frames.is_empty(), "looping source needs frames");
        LoopingSource {
            frames,
            idx: 0,
            next_id: 0,
            deadline,
            max_frames,
            fps: 24.0,
        }
    }
}

impl FrameSource for LoopingSource {
    fn next_frame(&mut self) -> Option<Result<Frame>> {
        if let Some(deadline) = self.deadline {
            if Instant::now() >= deadline {
                return None;
            }
        }
        if let Some(max) = self.max_frames {
            if self.next_id >= max {
                return None;
            }
        }
        let mut frame = self.frames[self.idx].clone();
        frame.sequence_id = self.next_id;
        frame.timestamp_ns = self.next_id.saturating_mul((1e9 / self.fps) as u64);
        self.idx = (self.idx + 1) % self.frames.len();
        self.next_id += 1;
        Some(Ok(frame))
    }

    fn geometry(&self) -> (u32, u32, u8) {
        let f = &self.frames[0];
        (f.width(), f.height(), f.channels())
    }
}

/// Minimal `*` glob matching over file names.
fn glob_match(pattern: &str, name: &str) -> bool {
    fn rec(p: &[u8], n: &[u8]) -> bool {
        match p.first() {
            None => n.is_empty(),
            Some(b'*') => (0..=n.len()).any(|k| rec(&p[1..], &n[k..])),
            Some(&c) => n.first() == Some(&c) && rec(&p[1..], &n[1..]),
        }
    }
    rec(pattern.as_bytes(), name.as_bytes())
}

fn decode_frame_file(path: &Path) -> Result<(u32, u32, u8, Vec<u8>)> {
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::ingest(path, e.to_string()))?
        .decode()
        .map_err(|e| Error::ingest(path, e.to_string()))?;
    Ok(match img {
        image::DynamicImage::ImageRgb8(rgb) => {
            let (w, h) = rgb.dimensions();
            (w, h, 3, rgb.into_raw())
        }
        image::DynamicImage::ImageRgba8(_) | image::DynamicImage::ImageRgb16(_) => {
            let rgb = img.to_rgb8();
            let (w, h) = rgb.dimensions();
            (w, h, 3, rgb.into_raw())
        }
        other => {
            // Grayscale of any bit depth rescales to 8-bit at ingest.
            let gray = other.to_luma8();
            let (w, h) = gray.dimensions();
            (w, h, 1, gray.into_raw())
        }
    })
}

/// Lexicographically ordered image-sequence source: matching files in
/// `dir` become frames 0..n-1. Mixed geometries fail at the offending
/// file.
pub struct ImageDirSource {
    files: Vec<PathBuf>,
    next: usize,
    geometry: (u32, u32, u8),
    fps: f64,
    first: Option<Frame>,
}

/// Opens a directory of still images as a frame source.
pub fn open_image_dir(dir: &Path, pattern: &str) -> Result<ImageDirSource> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::ingest(dir, e.to_string()))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| glob_match(pattern, n))
        })
        .collect();
    files.sort_by(|a, b| a.as_os_str().as_encoded_bytes().cmp(b.as_os_str().as_encoded_bytes()));
    if files.is_empty() {
        return Err(Error::ingest(
            dir,
            format!("no files match pattern `{pattern}`"),
        ));
    }
    let (w, h, c, data) = decode_frame_file(&files[0])?;
    let first = Frame::new(w, h, c, data, 0, 0)?;
    Ok(ImageDirSource {
        files,
        next: 0,
        geometry: (w, h, c),
        fps: 24.0,
        first: Some(first),
    })
}

impl FrameSource for ImageDirSource {
    fn next_frame(&mut self) -> Option<Result<Frame>> {
        if self.next >= self.files.len() {
            return None;
        }
        let id = self.next as u64;
        let timestamp_ns = (id as f64 * 1e9 / self.fps) as u64;
        self.next += 1;
        if id == 0 {
            if let Some(mut f) = self.first.take() {
                f.timestamp_ns = 0;
                return Some(Ok(f));
            }
        }
        let path = &self.files[id as usize];
        let (w, h, c, data) = match decode_frame_file(path) {
            Ok(t) => t,
            Err(e) => return Some(Err(e)),
        };
        if (w, h, c) != self.geometry {
            return Some(Err(Error::ingest(
                path,
                format!(
                    "geometry {w}x{h}x{c} differs from first frame {}x{}x{}",
                    self.geometry.0, self.geometry.1, self.geometry.2
                ),
            )));
        }
        Some(Frame::new(w, h, c, data, id, timestamp_ns))
    }

    fn geometry(&self) -> (u32, u32, u8) {
        self.geometry
    }

    fn len_hint(&self) -> Option<usize> {
        Some(self.files.len() - self.next)
    }
}

/// Raw concatenated-frame stream: header `RAWV1 <w> <h> <c>\n`, then
/// `w*h*c` bytes per frame, row-major.
pub struct RawStreamSource<R: Read> {
    reader: BufReader<R>,
    geometry: (u32, u32, u8),
    next_id: u64,
    fps: f64,
    label: PathBuf,
}

impl<R: Read> RawStreamSource<R> {
    pub fn from_reader(reader: R, label: impl Into<PathBuf>) -> Result<Self> {
        let label = label.into();
        let mut reader = BufReader::new(reader);
        let mut header = String::new();
        reader
            .read_line(&mut header)
            .map_err(|e| Error::ingest(&label, e.to_string()))?;
        let parts: Vec<&str> = header.trim_end().split(' ').collect();
        if parts.len() != 4 || parts[0] != "RAWV1" {
            return Err(Error::ingest(
                &label,
                format!("bad raw stream header `{}`", header.trim_end()),
            ));
        }
        let w: u32 = parts[1]
            .parse()
            .map_err(|_| Error::ingest(&label, "bad width in header"))?;
        let h: u32 = parts[2]
            .parse()
            .map_err(|_| Error::ingest(&label, "bad height in header"))?;
        let c: u8 = parts[3]
            .parse()
            .map_err(|_| Error::ingest(&label, "bad channel count in header"))?;
        if w == 0 || h == 0 || (c != 1 && c != 3) {
            return Err(Error::ingest(&label, "invalid raw stream geometry"));
        }
        Ok(RawStreamSource {
            reader,
            geometry: (w, h, c),
            next_id: 0,
            fps: 24.0,
            label,
        })
    }
}

pub fn open_raw_stream(path: &Path) -> Result<RawStreamSource<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::ingest(path, e.to_string()))?;
    RawStreamSource::from_reader(file, path)
}

impl<R: Read> FrameSource for RawStreamSource<R> {
    fn next_frame(&mut self) -> Option<Result<Frame>> {
        let (w, h, c) = self.geometry;
        let len = w as usize * h as usize * c as usize;
        let mut data = vec![0u8; len];
        let mut filled = 0usize;
        while filled < len {
            match self.reader.read(&mut data[filled..]) {
                Ok(0) => break,
                Ok(n) => filled += n,
                Err(e) => return Some(Err(Error::ingest(&self.label, e.to_string()))),
            }
        }
        if filled == 0 {
            return None; // clean end at a frame boundary
        }
        if filled < len {
            return Some(Err(Error::ingest(
                &self.label,
                format!("truncated frame {}: {filled} of {len} bytes", self.next_id),
            )));
        }
        let id = self.next_id;
        self.next_id += 1;
        let timestamp_ns = (id as f64 * 1e9 / self.fps) as u64;
        Some(Frame::new(w, h, c, data, id, timestamp_ns))
    }

    fn geometry(&self) -> (u32, u32, u8) {
        self.geometry
    }
}

// ── Mask store ───────────────────────────────────────────────────────

/// Loads a ground-truth mask directory (`<sequence_id:06d>.png`, 8-bit
/// single channel, labels {0, 1, 2}). The store's class count is 3 when
/// any mask contains label 2, else 2.
pub fn load_mask_dir(dir: &Path) -> Result<BTreeMap<u64, LabelMap>> {
    let mut raw: BTreeMap<u64, (u32, u32, Vec<u8>)> = BTreeMap::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::ingest(dir, e.to_string()))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::ingest(dir, e.to_string()))?.path();
        if !path.is_file() || path.extension().and_then(|e| e.to_str()) != Some("png") {
            continue;
        }
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default();
        let id: u64 = stem
            .parse()
            .map_err(|_| Error::ingest(&path, "mask file name is not a frame id"))?;
        let img = image::ImageReader::open(&path)
            .map_err(|e| Error::ingest(&path, e.to_string()))?
            .decode()
            .map_err(|e| Error::ingest(&path, e.to_string()))?
            .to_luma8();
        let (w, h) = img.dimensions();
        let labels = img.into_raw();
        if let Some(&bad) = labels.iter().find(|&&v| v > 2) {
            return Err(Error::ingest(
                &path,
                format!("mask value {bad} is not a label in {{0, 1, 2}}"),
            ));
        }
        raw.insert(id, (w, h, labels));
    }
    if raw.is_empty() {
        return Err(Error::ingest(dir, "no mask PNGs found"));
    }
    let num_classes = if raw.values().any(|(_, _, l)| l.contains(&2)) {
        3
    } else {
        2
    };
    let mut out = BTreeMap::new();
    for (id, (w, h, labels)) in raw {
        out.insert(id, LabelMap::new(w, h, num_classes, labels)?);
    }
    Ok(out)
}

pub fn write_mask_png(map: &LabelMap, path: &Path) -> Result<()> {
    let img = image::GrayImage::from_raw(map.width(), map.height(), map.labels().to_vec())
        .expect("label buffer matches dimensions");
    img.save(path)?;
    Ok(())
}

pub fn write_frame_png(frame: &Frame, path: &Path) -> Result<()> {
    match frame.channels() {
        1 => {
            let img =
                image::GrayImage::from_raw(frame.width(), frame.height(), frame.data().to_vec())
                    .expect("frame buffer matches dimensions");
            img.save(path)?;
        }
        _ => {
            let img =
                image::RgbImage::from_raw(frame.width(), frame.height(), frame.data().to_vec())
                    .expect("frame buffer matches dimensions");
            img.save(path)?;
        }
    }
    Ok(())
}

// ── Tip annotation CSV ───────────────────────────────────────────────

pub const TIPS_CSV_HEADER: &str = "frame_id,class_id,t0_x,t0_y,t1_x,t1_y,t2_x,t2_y,valid";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TipAnnotationRow {
    pub frame_id: u64,
    pub class_id: u8,
    pub t0: (f64, f64),
    pub t1: (f64, f64),
    pub t2: (f64, f64),
    pub valid: bool,
}

impl TipAnnotationRow {
    pub fn from_estimate(e: &TipEstimate) -> TipAnnotationRow {
        TipAnnotationRow {
            frame_id: e.frame_sequence_id,
            class_id: e.class_id,
            t0: (e.t0.0 as f64, e.t0.1 as f64),
            t1: (e.t1.0 as f64, e.t1.1 as f64),
            t2: (e.t2.0 as f64, e.t2.1 as f64),
            valid: e.valid,
        }
    }
}

/// Serializes rows with two-decimal coordinates; invalid rows write the
/// -1 placeholder in every coordinate field.
pub fn format_tips_csv(rows: &[TipAnnotationRow]) -> String {
    let mut out = String::with_capacity(rows.len() * 48 + TIPS_CSV_HEADER.len() + 1);
    out.push_str(TIPS_CSV_HEADER);
    out.push('\n');
    for row in rows {
        let (t0, t1, t2) = if row.valid {
            (row.t0, row.t1, row.t2)
        } else {
            ((-1.0, -1.0), (-1.0, -1.0), (-1.0, -1.0))
        };
        out.push_str(&format!(
            "{},{},{:.2},{:.2},{:.2},{:.2},{:.2},{:.2},{}\n",
            row.frame_id, row.class_id, t0.0, t0.1, t1.0, t1.1, t2.0, t2.1, row.valid
        ));
    }
    out
}

pub fn write_tips_csv(rows: &[TipAnnotationRow], path: &Path) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| Error::ingest(path, e.to_string()))?;
    file.write_all(format_tips_csv(rows).as_bytes())?;
    Ok(())
}

pub fn parse_tips_csv(text: &str) -> Result<Vec<TipAnnotationRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim_end() == TIPS_CSV_HEADER => {}
        Some((_, header)) => {
            return Err(Error::Parse {
                line: 1,
                message: format!("bad header `{header}`"),
            })
        }
        None => {
            return Err(Error::Parse {
                line: 1,
                message: "empty file".into(),
            })
        }
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 9 fields, got {}", fields.len()),
            });
        }
        let parse_f = |s: &str, what: &str| -> Result<f64> {
            s.trim().parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("bad {what} `{s}`"),
            })
        };
        let frame_id: u64 = fields[0].trim().parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("bad frame_id `{}`", fields[0]),
        })?;
        let class_id: u8 = fields[1].trim().parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("bad class_id `{}`", fields[1]),
        })?;
        let valid = match fields[8].trim() {
            "true" => true,
            "false" => false,
            other => {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("bad valid flag `{other}`"),
                })
            }
        };
        rows.push(TipAnnotationRow {
            frame_id,
            class_id,
            t0: (parse_f(fields[2], "t0_x")?, parse_f(fields[3], "t0_y")?),
            t1: (parse_f(fields[4], "t1_x")?, parse_f(fields[5], "t1_y")?),
            t2: (parse_f(fields[6], "t2_x")?, parse_f(fields[7], "t2_y")?),
            valid,
        });
    }
    Ok(rows)
}

pub fn read_tips_csv(path: &Path) -> Result<Vec<TipAnnotationRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::ingest(path, e.to_string()))?;
    parse_tips_csv(&text)
}

// ── Configuration ────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    Oracle,
    Classical,
}

impl BackendKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            BackendKind::Oracle => "oracle",
            BackendKind::Classical => "classical",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Requested class count (2 or 3); the oracle store may narrow it.
    pub classes: u8,
    pub threshold: u8,
    pub polarity: Polarity,
    pub open_radius: u32,
    pub mask_dir: Option<PathBuf>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Classical,
            classes: 2,
            threshold: 100,
            polarity: Polarity::DarkDevice,
            open_radius: 1,
            mask_dir: None,
        }
    }
}

/// Fully resolved application configuration.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AppConfig {
    pub pipeline: PipelineConfig,
    pub postprocess: PostprocessConfig,
    pub backend: BackendConfig,
}

impl AppConfig {
    /// Every resolved key, for report echoes. Deterministic order.
    pub fn echo(&self) -> BTreeMap<String, String> {
        let p = &self.pipeline;
        let pp = &self.postprocess;
        let b = &self.backend;
        let mut map = BTreeMap::new();
        map.insert("pipeline.queue_capacity".into(), p.queue_capacity.to_string());
        map.insert(
            "pipeline.mode".into(),
            match p.mode {
                PipelineMode::Offline => "offline".into(),
                PipelineMode::Live => "live".to_string(),
            },
        );
        map.insert(
            "pipeline.live_drop_policy".into(),
            match p.live_drop_policy {
                DropPolicy::DropOldest => "drop_oldest".into(),
                DropPolicy::Block => "block".to_string(),
            },
        );
        map.insert(
            "pipeline.target_size".into(),
            p.target_size.map_or("native".into(), |t| t.to_string()),
        );
        map.insert(
            "pipeline.pixel_spacing_mm".into(),
            format!("{}", p.pixel_spacing_mm),
        );
        map.insert(
            "segmentation.tile_size".into(),
            p.inference.tile_size.to_string(),
        );
        map.insert("segmentation.overlap".into(), p.inference.overlap.to_string());
        map.insert(
            "segmentation.window_threshold".into(),
            p.inference.window_threshold.to_string(),
        );
        map.insert("postprocess.d_merge".into(), pp.d_merge.to_string());
        map.insert("postprocess.a_min".into(), pp.a_min.to_string());
        map.insert("postprocess.d_max".into(), format!("{}", pp.d_max));
        map.insert("postprocess.arc_t1".into(), format!("{}", pp.arc_t1));
        map.insert("postprocess.arc_t2".into(), format!("{}", pp.arc_t2));
        map.insert("postprocess.reach_delta".into(), format!("{}", pp.reach_delta));
        map.insert("backend.kind".into(), b.kind.as_str().into());
        map.insert("backend.classes".into(), b.classes.to_string());
        map.insert("backend.threshold".into(), b.threshold.to_string());
        map.insert(
            "backend.polarity".into(),
            match b.polarity {
                Polarity::DarkDevice => "dark_device".into(),
                Polarity::BrightDevice => "bright_device".to_string(),
            },
        );
        map.insert("backend.open_radius".into(), b.open_radius.to_string());
        map.insert(
            "backend.mask_dir".into(),
            b.mask_dir
                .as_ref()
                .map_or(String::new(), |p| p.display().to_string()),
        );
        map
    }
}

fn config_err(key: &str, message: impl Into<String>) -> Error {
    Error::config(key, message)
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| config_err(key, format!("cannot parse `{value}`")))
}

/// Parses a flat `section.key = value` document over defaults.
/// Unknown keys are rejected; out-of-range values name the key.
pub fn parse_config(text: &str) -> Result<AppConfig> {
    let mut cfg = AppConfig::default();
    for raw_line in text.lines() {
        let line = raw_line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(config_err(line, "expected `key = value`"));
        };
        let key = key.trim();
        let value = value.trim();
        match key {
            "pipeline.queue_capacity" => {
                cfg.pipeline.queue_capacity = parse_value(key, value)?;
                if cfg.pipeline.queue_capacity < 1 {
                    return Err(config_err(key, "must be >= 1"));
                }
            }
            "pipeline.mode" => {
                cfg.pipeline.mode = match value {
                    "offline" => PipelineMode::Offline,
                    "live" => PipelineMode::Live,
                    _ => return Err(config_err(key, "expected offline|live")),
                }
            }
            "pipeline.live_drop_policy" => {
                cfg.pipeline.live_drop_policy = match value {
                    "drop_oldest" => DropPolicy::DropOldest,
                    "block" => DropPolicy::Block,
                    _ => return Err(config_err(key, "expected drop_oldest|block")),
                }
            }
            "pipeline.target_size" => {
                cfg.pipeline.target_size = if value == "native" {
                    None
                } else {
                    let t: u32 = parse_value(key, value)?;
                    if t < 16 {
                        return Err(config_err(key, "must be >= 16 (or `native`)"));
                    }
                    Some(t)
                }
            }
            "pipeline.pixel_spacing_mm" => {
                cfg.pipeline.pixel_spacing_mm = parse_value(key, value)?;
                if cfg.pipeline.pixel_spacing_mm <= 0.0 {
                    return Err(config_err(key, "must be > 0"));
                }
            }
            "segmentation.tile_size" => {
                cfg.pipeline.inference.tile_size = parse_value(key, value)?
            }
            "segmentation.overlap" => cfg.pipeline.inference.overlap = parse_value(key, value)?,
            "segmentation.window_threshold" => {
                cfg.pipeline.inference.window_threshold = parse_value(key, value)?
            }
            "postprocess.d_merge" => cfg.postprocess.d_merge = parse_value(key, value)?,
            "postprocess.a_min" => cfg.postprocess.a_min = parse_value(key, value)?,
            "postprocess.d_max" => {
                cfg.postprocess.d_max = parse_value(key, value)?;
                if cfg.postprocess.d_max <= 0.0 {
                    return Err(config_err(key, "must be > 0"));
                }
            }
            "postprocess.arc_t1" => {
                cfg.postprocess.arc_t1 = parse_value(key, value)?;
                if cfg.postprocess.arc_t1 <= 0.0 {
                    return Err(config_err(key, "must be > 0"));
                }
            }
            "postprocess.arc_t2" => {
                cfg.postprocess.arc_t2 = parse_value(key, value)?;
                if cfg.postprocess.arc_t2 <= 0.0 {
                    return Err(config_err(key, "must be > 0"));
                }
            }
            "postprocess.reach_delta" => {
                cfg.postprocess.reach_delta = parse_value(key, value)?;
                if !(0.0..=1.0).contains(&cfg.postprocess.reach_delta) {
                    return Err(config_err(key, "must lie in [0, 1]"));
                }
            }
            "backend.kind" => {
                cfg.backend.kind = match value {
                    "oracle" => BackendKind::Oracle,
                    "classical" => BackendKind::Classical,
                    _ => return Err(config_err(key, "expected oracle|classical")),
                }
            }
            "backend.classes" => {
                cfg.backend.classes = parse_value(key, value)?;
                if cfg.backend.classes != 2 && cfg.backend.classes != 3 {
                    return Err(config_err(key, "must be 2 or 3"));
                }
            }
            "backend.threshold" => cfg.backend.threshold = parse_value(key, value)?,
            "backend.polarity" => {
                cfg.backend.polarity = match value {
                    "dark_device" => Polarity::DarkDevice,
                    "bright_device" => Polarity::BrightDevice,
                    _ => return Err(config_err(key, "expected dark_device|bright_device")),
                }
            }
            "backend.open_radius" => cfg.backend.open_radius = parse_value(key, value)?,
            "backend.mask_dir" => cfg.backend.mask_dir = Some(PathBuf::from(value)),
            _ => return Err(config_err(key, "unknown key")),
        }
    }
    cfg.pipeline
        .validate()
        .map_err(|e| config_err("pipeline", e.to_string()))?;
    cfg.postprocess
        .validate()
        .map_err(|e| config_err("postprocess", e.to_string()))?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<AppConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::ingest(path, e.to_string()))?;
    parse_config(&text)
}

// ── Dataset layout ───────────────────────────────────────────────────

/// Generator parameters recorded next to a synthetic dataset so the
/// exact data can be regenerated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub generator: String,
    pub preset: String,
    pub image_size: u32,
    pub n_frames: u32,
    pub seed: u64,
    pub tube_width: u32,
    pub classes: u8,
    pub motion_px: f64,
}

/// Writes the on-disk dataset layout: `frames/<id:06d>.png`,
/// `masks/<id:06d>.png`, `tips.csv`, `manifest.json`. Refuses to write
/// into an existing non-empty directory unless `force` is set.
pub fn write_dataset(
    dir: &Path,
    bundles: &[SynthFrameBundle],
    manifest: &DatasetManifest,
    force: bool,
) -> Result<()> {
    if dir.exists() {
        let non_empty = std::fs::read_dir(dir)
            .map_err(|e| Error::ingest(dir, e.to_string()))?
            .next()
            .is_some();
        if non_empty && !force {
            return Err(Error::ingest(
                dir,
                "output directory is not empty (use --force to overwrite)",
            ));
        }
    }
    let frames_dir = dir.join("frames");
    let masks_dir = dir.join("masks");
    std::fs::create_dir_all(&frames_dir)?;
    std::fs::create_dir_all(&masks_dir)?;

    let mut rows = Vec::new();
    for bundle in bundles {
        let id = bundle.frame.sequence_id;
        write_frame_png(&bundle.frame, &frames_dir.join(format!("{id:06}.png")))?;
        write_mask_png(&bundle.gt_mask, &masks_dir.join(format!("{id:06}.png")))?;
        for gt in &bundle.gt_tips {
            rows.push(TipAnnotationRow {
                frame_id: id,
                class_id: gt.class_id,
                t0: gt.t0,
                t1: gt.t1,
                t2: gt.t2,
                valid: true,
            });
        }
    }
    write_tips_csv(&rows, &dir.join("tips.csv"))?;
    let json = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    std::fs::write(dir.join("manifest.json"), json + "\n")?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::ingest(path, e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| Error::ingest(path, e.to_string()))
}

// ── Overlay rendering ────────────────────────────────────────────────

fn draw_cross(img: &mut image::RgbImage, center: (u32, u32), arm: i64, color: [u8; 3]) {
    let (w, h) = img.dimensions();
    for d in -arm..=arm {
        for (x, y) in [
            (center.0 as i64 + d, center.1 as i64),
            (center.0 as i64, center.1 as i64 + d),
        ] {
            if x >= 0 && y >= 0 && (x as u32) < w && (y as u32) < h {
                img.put_pixel(x as u32, y as u32, image::Rgb(color));
            }
        }
    }
}

/// Renders T0/T1/T2 markers (red, green, blue crosses) over the frame.
pub fn render_overlay(frame: &Frame, tips: &[TipEstimate]) -> image::RgbImage {
    let (w, h) = (frame.width(), frame.height());
    let mut img = image::RgbImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let v = frame.luminance(x, y);
            img.put_pixel(x, y, image::Rgb([v, v, v]));
        }
    }
    for tip in tips {
        if !tip.valid {
            continue;
        }
        draw_cross(&mut img, tip.t2, 3, [40, 90, 255]);
        draw_cross(&mut img, tip.t1, 3, [40, 220, 70]);
        draw_cross(&mut img, tip.t0, 4, [255, 60, 40]);
    }
    img
}

pub fn write_overlay_png(frame: &Frame, tips: &[TipEstimate], path: &Path) -> Result<()> {
    render_overlay(frame, tips).save(path)?;
    Ok(())
}
