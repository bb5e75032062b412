//! Four-stage asynchronous tracking pipeline.
//!
//! reader → preprocessor → inference → post-processor, one dedicated
//! worker per stage, connected by bounded FIFO queues. Offline mode is
//! lossless (backpressure all the way to the reader); live mode applies
//! a drop policy at the reader→preprocessor queue so acquisition never
//! falls behind. Pipeline parallelism never changes outputs: the
//! threaded runner and [`run_sequential`] produce identical tip
//! estimates for the same input.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::imgproc::{Frame, LabelMap};
use crate::io::FrameSource;
use crate::postprocess::{extract_tips, PostprocessConfig, TipEstimate};
use crate::segmentation::{plan_tiles, sliding_window_infer, Segmenter};

/// Flow-control mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PipelineMode {
    /// Lossless: every source frame produces a result.
    Offline,
    /// Real-time: the reader queue applies [`DropPolicy`].
    Live,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropPolicy {
    /// Evict the oldest queued frame when the reader queue is full.
    DropOldest,
    /// Block the reader (same behavior as offline).
    Block,
}

/// Inference-stage settings: single-pass below the window threshold,
/// tiled sliding-window at or above it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InferenceSettings {
    pub tile_size: u32,
    pub overlap: u32,
    /// Tile the frame when either side reaches this many pixels.
    pub window_threshold: u32,
}

impl Default for InferenceSettings {
    fn default() -> Self {
        InferenceSettings {
            tile_size: 512,
            overlap: 256,
            window_threshold: 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Capacity of each inter-stage queue, in frames.
    pub queue_capacity: usize,
    pub mode: PipelineMode,
    pub live_drop_policy: DropPolicy,
    /// Preprocessor letterbox target (square). `None` keeps the native
    /// resolution.
    pub target_size: Option<u32>,
    /// Physical pixel spacing; 1.0 means coordinates stay in pixels.
    pub pixel_spacing_mm: f64,
    pub inference: InferenceSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            queue_capacity: 8,
            mode: PipelineMode::Offline,
            live_drop_policy: DropPolicy::DropOldest,
            target_size: None,
            pixel_spacing_mm: 1.0,
            inference: InferenceSettings::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.queue_capacity < 1 {
            return Err(Error::InvalidArgument("queue_capacity must be >= 1".into()));
        }
        if self.pixel_spacing_mm <= 0.0 {
            return Err(Error::InvalidArgument(
                "pixel_spacing_mm must be > 0".into(),
            ));
        }
        if self.inference.tile_size <= self.inference.overlap {
            return Err(Error::InvalidArgument(
                "tile_size must exceed overlap".into(),
            ));
        }
        if let Some(t) = self.target_size {
            if t < 16 {
                return Err(Error::InvalidArgument("target_size must be >= 16".into()));
            }
        }
        Ok(())
    }
}

/// Affine map between original and letterboxed coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Letterbox {
    scale: f64,
    dx: f64,
    dy: f64,
    src_w: u32,
    src_h: u32,
}

impl Letterbox {
    pub fn identity(width: u32, height: u32) -> Letterbox {
        Letterbox {
            scale: 1.0,
            dx: 0.0,
            dy: 0.0,
            src_w: width,
            src_h: height,
        }
    }

    pub fn fit(src_w: u32, src_h: u32, target: u32) -> Letterbox {
        let scale = (target as f64 / src_w as f64).min(target as f64 / src_h as f64);
        let dx = (target as f64 - src_w as f64 * scale) / 2.0;
        let dy = (target as f64 - src_h as f64 * scale) / 2.0;
        Letterbox {
            scale,
            dx,
            dy,
            src_w,
            src_h,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.scale == 1.0 && self.dx == 0.0 && self.dy == 0.0
    }

    /// Original → letterboxed coordinates.
    pub fn forward(&self, p: (f64, f64)) -> (f64, f64) {
        (p.0 * self.scale + self.dx, p.1 * self.scale + self.dy)
    }

    /// Letterboxed pixel → original pixel, rounded and clamped in-bounds.
    pub fn back(&self, p: (u32, u32)) -> (u32, u32) {
        let x = ((p.0 as f64 - self.dx) / self.scale).round();
        let y = ((p.1 as f64 - self.dy) / self.scale).round();
        (
            (x.max(0.0) as u32).min(self.src_w - 1),
            (y.max(0.0) as u32).min(self.src_h - 1),
        )
    }
}

/// Nearest-neighbor letterbox resize onto a square `target` canvas,
/// padding with bright background (fluoroscopy polarity).
fn letterbox_resize(frame: &Frame, target: u32) -> (Frame, Letterbox) {
    let lb = Letterbox::fit(frame.width(), frame.height(), target);
    let c = frame.channels() as usize;
    let mut data = vec![255u8; target as usize * target as usize * c];
    for y in 0..target {
        for x in 0..target {
            let sx = ((x as f64 + 0.5 - lb.dx) / lb.scale - 0.5).round();
            let sy = ((y as f64 + 0.5 - lb.dy) / lb.scale - 0.5).round();
            if sx < 0.0 || sy < 0.0 || sx >= frame.width() as f64 || sy >= frame.height() as f64 {
                continue;
            }
            let src = (sy as usize * frame.width() as usize + sx as usize) * c;
            let dst = (y as usize * target as usize + x as usize) * c;
            data[dst..dst + c].copy_from_slice(&frame.data()[src..src + c]);
        }
    }
    let out = Frame::new(
        target,
        target,
        frame.channels(),
        data,
        frame.sequence_id,
        frame.timestamp_ns,
    )
    .expect("letterbox dims are consistent");
    (out, lb)
}

/// Per-stage processing latencies in milliseconds (queueing time
/// excluded: are measured queue-exit to queue-entry).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StageLatencies {
    pub read_ms: f64,
    pub preprocess_ms: f64,
    pub infer_ms: f64,
    pub postprocess_ms: f64,
}

/// One tracked frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingResult {
    pub frame_sequence_id: u64,
    /// One estimate per device class, in original frame coordinates.
    pub tips: Vec<TipEstimate>,
    pub stage_latencies: StageLatencies,
    /// Seconds since pipeline start at emission.
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LatencySummary {
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
}

impl LatencySummary {
    fn from_samples(samples: &mut Vec<f64>) -> LatencySummary {
        if samples.is_empty() {
            return LatencySummary {
                p50_ms: 0.0,
                p95_ms: 0.0,
                max_ms: 0.0,
            };
        }
        samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let nearest_rank = |q: f64| {
            let rank = (q * samples.len() as f64).ceil() as usize;
            samples[rank.clamp(1, samples.len()) - 1]
        };
        LatencySummary {
            p50_ms: nearest_rank(0.50),
            p95_ms: nearest_rank(0.95),
            max_ms: *samples.last().unwrap(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StageSummaries {
    pub read: LatencySummary,
    pub preprocess: LatencySummary,
    pub infer: LatencySummary,
    pub postprocess: LatencySummary,
}

/// Aggregate pipeline statistics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineStats {
    pub frames_in: u64,
    pub frames_out: u64,
    pub frames_dropped: u64,
    /// frames_out / wall span (first frame enqueued → last result).
    pub throughput_fps: f64,
    pub wall_time_s: f64,
    pub stages: StageSummaries,
    /// High-water mark of each inter-stage queue.
    pub max_queue_depths: Vec<usize>,
}

/// Frames per second over the pipeline's wall span.
pub fn measure_throughput(stats: &PipelineStats) -> Result<f64> {
    if stats.frames_out == 0 {
        return Err(Error::UndefinedMetric(
            "throughput undefined for zero frames".into(),
        ));
    }
    if stats.wall_time_s <= 0.0 {
        return Err(Error::UndefinedMetric("wall span is not positive".into()));
    }
    Ok(stats.frames_out as f64 / stats.wall_time_s)
}

/// Pixel coordinates → millimeters (componentwise).
pub fn px_to_mm(p: (f64, f64), spacing_mm: f64) -> Result<(f64, f64)> {
    if spacing_mm <= 0.0 {
        return Err(Error::InvalidArgument("pixel spacing must be > 0".into()));
    }
    Ok((p.0 * spacing_mm, p.1 * spacing_mm))
}

// ── Bounded inter-stage queue ────────────────────────────────────────

struct QueueState<T> {
    items: VecDeque<T>,
    closed: bool,
}

/// Bounded FIFO with blocking push/pop, close semantics in both
/// directions, and a high-water mark for the bounded-memory check.
pub(crate) struct BoundedQueue<T> {
    state: Mutex<QueueState<T>>,
    not_empty: Condvar,
    not_full: Condvar,
    capacity: usize,
    max_len: AtomicUsize,
}

impl<T> BoundedQueue<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1);
        BoundedQueue {
            state: Mutex::new(QueueState {
                items: VecDeque::with_capacity(capacity),
                closed: false,
            }),
            not_empty: Condvar::new(),
            not_full: Condvar::new(),
            capacity,
            max_len: AtomicUsize::new(0),
        }
    }

    /// Blocking push; fails (returning the item) once the queue is closed.
    pub fn push(&self, item: T) -> std::result::Result<(), T> {
        let mut state = self.state.lock().unwrap();
        loop {
            if state.closed {
                return Err(item);
            }
            if state.items.len() < self.capacity {
                state.items.push_back(item);
                self.max_len.fetch_max(state.items.len(), Ordering::Relaxed);
                self.not_empty.notify_one();
                return Ok(());
            }
            state = self.not_full.wait(state).unwrap();
        }
    }

    /// Non-blocking push that evicts the oldest item when full. Returns
    /// the evicted item, or fails with the input once closed.
    pub fn push_drop_oldest(&self, item: T) -> std::result::Result<Option<T>, T> {
        let mut state = self.state.lock().unwrap();
        if state.closed {
            return Err(item);
        }
        let evicted = if state.items.len() >= self.capacity {
            state.items.pop_front()
        } else {
            None
        };
        state.items.push_back(item);
        self.max_len.fetch_max(state.items.len(), Ordering::Relaxed);
        self.not_empty.notify_one();
        Ok(evicted)
    }

    /// Blocking pop; `None` once the queue is closed and drained.
    pub fn pop(&self) -> Option<T> {
        let mut state = self.state.lock().unwrap();
        loop {
            if let Some(item) = state.items.pop_front() {
                self.not_full.notify_one();
                return Some(item);
            }
            if state.closed {
                return None;
            }
            state = self.not_empty.wait(state).unwrap();
        }
    }

    pub fn close(&self) {
        let mut state = self.state.lock().unwrap();
        state.closed = true;
        self.not_empty.notify_all();
        self.not_full.notify_all();
    }

    pub fn max_observed(&self) -> usize {
        self.max_len.load(Ordering::Relaxed)
    }
}

// ── Stage functions (shared by both runners) ────────────────────────

fn preprocess_stage(frame: Frame, cfg: &PipelineConfig) -> (Frame, Letterbox) {
    match cfg.target_size {
        Some(target) if target != frame.width() || target != frame.height() => {
            letterbox_resize(&frame, target)
        }
        _ => {
            let lb = Letterbox::identity(frame.width(), frame.height());
            (frame, lb)
        }
    }
}

fn infer_stage(
    frame: &Frame,
    backend: &dyn Segmenter,
    inference: &InferenceSettings,
) -> Result<LabelMap> {
    let large =
        frame.width() >= inference.window_threshold || frame.height() >= inference.window_threshold;
    let probs = if large {
        let grid = plan_tiles(
            frame.width(),
            frame.height(),
            inference.tile_size,
            inference.overlap,
        )?;
        sliding_window_infer(frame, backend, &grid)?
    } else {
        backend.segment(frame)?
    };
    Ok(probs.argmax_labels())
}

/// Post-processing state carried across frames: the previous estimates,
/// kept in processed (letterboxed) coordinates for artifact-filter hints.
#[derive(Default)]
struct PostprocessState {
    prev: Vec<TipEstimate>,
}

fn postprocess_stage(
    labels: &LabelMap,
    sequence_id: u64,
    pp: &PostprocessConfig,
    letterbox: &Letterbox,
    state: &mut PostprocessState,
) -> Result<Vec<TipEstimate>> {
    let tips = extract_tips(labels, pp, &state.prev, sequence_id)?;
    state.prev = tips.clone();
    if letterbox.is_identity() {
        return Ok(tips);
    }
    Ok(tips
        .into_iter()
        .map(|t| TipEstimate {
            t0: letterbox.back(t.t0),
            t1: letterbox.back(t.t1),
            t2: letterbox.back(t.t2),
            base: letterbox.back(t.base),
            ..t
        })
        .collect())
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

fn build_stats(
    frames_in: u64,
    frames_out: u64,
    frames_dropped: u64,
    wall_time_s: f64,
    latencies: &mut StageLatencyBuffers,
    max_queue_depths: Vec<usize>,
) -> PipelineStats {
    let stages = StageSummaries {
        read: LatencySummary::from_samples(&mut latencies.read),
        preprocess: LatencySummary::from_samples(&mut latencies.preprocess),
        infer: LatencySummary::from_samples(&mut latencies.infer),
        postprocess: LatencySummary::from_samples(&mut latencies.postprocess),
    };
    let mut stats = PipelineStats {
        frames_in,
        frames_out,
        frames_dropped,
        throughput_fps: 0.0,
        wall_time_s,
        stages,
        max_queue_depths,
    };
    stats.throughput_fps = measure_throughput(&stats).unwrap_or(0.0);
    stats
}

#[derive(Default)]
struct StageLatencyBuffers {
    read: Vec<f64>,
    preprocess: Vec<f64>,
    infer: Vec<f64>,
    postprocess: Vec<f64>,
}

impl StageLatencyBuffers {
    fn record(&mut self, l: &StageLatencies) {
        self.read.push(l.read_ms);
        self.preprocess.push(l.preprocess_ms);
        self.infer.push(l.infer_ms);
        self.postprocess.push(l.postprocess_ms);
    }
}

/// Single-threaded reference composition of the four stages. The
/// threaded pipeline must emit bit-identical tip estimates.
pub fn run_sequential(
    source: &mut dyn FrameSource,
    backend: &dyn Segmenter,
    pp: &PostprocessConfig,
    cfg: &PipelineConfig,
    sink: &mut dyn FnMut(TrackingResult),
) -> Result<PipelineStats> {
    cfg.validate()?;
    pp.validate()?;
    let start = Instant::now();
    let mut state = PostprocessState::default();
    let mut latencies = StageLatencyBuffers::default();
    let mut frames_in = 0u64;
    let mut frames_out = 0u64;
    let mut first_read: Option<f64> = None;
    let mut last_emit = 0.0f64;

    loop {
        let t_read = Instant::now();
        let Some(next) = source.next_frame() else {
            break;
        };
        let frame = next?;
        let read_ms = ms(t_read.elapsed());
        frames_in += 1;
        first_read.get_or_insert_with(|| start.elapsed().as_secs_f64());

        let sequence_id = frame.sequence_id;
        let t_prep = Instant::now();
        let (processed, letterbox) = preprocess_stage(frame, cfg);
        let preprocess_ms = ms(t_prep.elapsed());

        let t_infer = Instant::now();
        let labels = infer_stage(&processed, backend, &cfg.inference).map_err(|e| {
            Error::Pipeline {
                sequence_id,
                message: e.to_string(),
            }
        })?;
        let infer_ms = ms(t_infer.elapsed());

        let t_post = Instant::now();
        let tips = postprocess_stage(&labels, sequence_id, pp, &letterbox, &mut state)?;
        let postprocess_ms = ms(t_post.elapsed());

        let stage_latencies = StageLatencies {
            read_ms,
            preprocess_ms,
            infer_ms,
            postprocess_ms,
        };
        latencies.record(&stage_latencies);
        frames_out += 1;
        last_emit = start.elapsed().as_secs_f64();
        sink(TrackingResult {
            frame_sequence_id: sequence_id,
            tips,
            stage_latencies,
            wall_time_s: last_emit,
        });
    }

    let wall = match first_read {
        Some(t0) if frames_out > 0 => last_emit - t0,
        _ => 0.0,
    };
    Ok(build_stats(
        frames_in,
        frames_out,
        0,
        wall,
        &mut latencies,
        vec![0, 0, 0, 0],
    ))
}

struct ReadItem {
    frame: Frame,
    read_ms: f64,
}

struct PrepItem {
    frame: Frame,
    letterbox: Letterbox,
    read_ms: f64,
    preprocess_ms: f64,
}

struct InferItem {
    labels: LabelMap,
    sequence_id: u64,
    letterbox: Letterbox,
    read_ms: f64,
    preprocess_ms: f64,
    infer_ms: f64,
}

struct ReaderReport {
    frames_in: u64,
    frames_dropped: u64,
    first_read_s: Option<f64>,
}

/// Runs the four-stage asynchronous pipeline to completion.
///
/// Results arrive at `sink` on the calling thread, in strictly
/// increasing sequence-id order. A backend failure aborts the run after
/// draining already-inferred frames and reports the failing sequence
/// id; source exhaustion shuts the pipeline down cleanly.
pub fn run_pipeline(
    source: &mut (dyn FrameSource + Send),
    backend: &dyn Segmenter,
    pp: &PostprocessConfig,
    cfg: &PipelineConfig,
    sink: &mut dyn FnMut(TrackingResult),
) -> Result<PipelineStats> {
    cfg.validate()?;
    pp.validate()?;
    let start = Instant::now();
    let q_read: BoundedQueue<Result<ReadItem>> = BoundedQueue::new(cfg.queue_capacity);
    let q_prep: BoundedQueue<Result<PrepItem>> = BoundedQueue::new(cfg.queue_capacity);
    let q_infer: BoundedQueue<Result<InferItem>> = BoundedQueue::new(cfg.queue_capacity);
    let q_out: BoundedQueue<Result<TrackingResult>> = BoundedQueue::new(cfg.queue_capacity);

    let drop_oldest =
        cfg.mode == PipelineMode::Live && cfg.live_drop_policy == DropPolicy::DropOldest;

    let mut frames_out = 0u64;
    let mut latencies = StageLatencyBuffers::default();
    let mut first_error: Option<Error> = None;
    let mut last_emit = 0.0f64;

    let report = std::thread::scope(|scope| {
        let reader = scope.spawn(|| {
            let mut report = ReaderReport {
                frames_in: 0,
                frames_dropped: 0,
                first_read_s: None,
            };
            loop {
                let t = Instant::now();
                let Some(next) = source.next_frame() else {
                    break;
                };
                let read_ms = ms(t.elapsed());
                match next {
                    Ok(frame) => {
                        report.frames_in += 1;
                        report
                            .first_read_s
                            .get_or_insert_with(|| start.elapsed().as_secs_f64());
                        let item = Ok(ReadItem { frame, read_ms });
                        if drop_oldest {
                            match q_read.push_drop_oldest(item) {
                                Ok(Some(_evicted)) => report.frames_dropped += 1,
                                Ok(None) => {}
                                Err(_) => break,
                            }
                        } else if q_read.push(item).is_err() {
                            break;
                        }
                    }
                    Err(e) => {
                        let _ = q_read.push(Err(e));
                        break;
                    }
                }
            }
            q_read.close();
            report
        });

        let preprocessor = scope.spawn(|| {
            while let Some(msg) = q_read.pop() {
                let forward = match msg {
                    Ok(item) => {
                        let t = Instant::now();
                        let (frame, letterbox) = preprocess_stage(item.frame, cfg);
                        Ok(PrepItem {
                            frame,
                            letterbox,
                            read_ms: item.read_ms,
                            preprocess_ms: ms(t.elapsed()),
                        })
                    }
                    Err(e) => Err(e),
                };
                let failed = forward.is_err();
                if q_prep.push(forward).is_err() || failed {
                    break;
                }
            }
            q_read.close();
            q_prep.close();
        });

        let inferrer = scope.spawn(|| {
            while let Some(msg) = q_prep.pop() {
                let forward = match msg {
                    Ok(item) => {
                        let t = Instant::now();
                        let sequence_id = item.frame.sequence_id;
                        match infer_stage(&item.frame, backend, &cfg.inference) {
                            Ok(labels) => Ok(InferItem {
                                labels,
                                sequence_id,
                                letterbox: item.letterbox,
                                read_ms: item.read_ms,
                                preprocess_ms: item.preprocess_ms,
                                infer_ms: ms(t.elapsed()),
                            }),
                            Err(e) => Err(Error::Pipeline {
                                sequence_id,
                                message: e.to_string(),
                            }),
                        }
                    }
                    Err(e) => Err(e),
                };
                let failed = forward.is_err();
                if q_infer.push(forward).is_err() || failed {
                    break;
                }
            }
            q_prep.close();
            q_infer.close();
        });

        let postprocessor = scope.spawn(|| {
            let mut state = PostprocessState::default();
            while let Some(msg) = q_infer.pop() {
                let forward = match msg {
                    Ok(item) => {
                        let t = Instant::now();
                        match postprocess_stage(
                            &item.labels,
                            item.sequence_id,
                            pp,
                            &item.letterbox,
                            &mut state,
                        ) {
                            Ok(tips) => Ok(TrackingResult {
                                frame_sequence_id: item.sequence_id,
                                tips,
                                stage_latencies: StageLatencies {
                                    read_ms: item.read_ms,
                                    preprocess_ms: item.preprocess_ms,
                                    infer_ms: item.infer_ms,
                                    postprocess_ms: ms(t.elapsed()),
                                },
                                wall_time_s: 0.0,
                            }),
                            Err(e) => Err(e),
                        }
                    }
                    Err(e) => Err(e),
                };
                let failed = forward.is_err();
                if q_out.push(forward).is_err() || failed {
                    break;
                }
            }
            q_infer.close();
            q_out.close();
        });

        // Coordinator: deliver results on the calling thread.
        while let Some(msg) = q_out.pop() {
            match msg {
                Ok(mut result) => {
                    frames_out += 1;
                    last_emit = start.elapsed().as_secs_f64();
                    result.wall_time_s = last_emit;
                    latencies.record(&result.stage_latencies);
                    sink(result);
                }
                Err(e) => {
                    first_error = Some(e);
                    break;
                }
            }
        }
        // Unblock any straggling stage, then join.
        q_read.close();
        q_prep.close();
        q_infer.close();
        q_out.close();
        let report = reader.join().expect("reader thread");
        preprocessor.join().expect("preprocessor thread");
        inferrer.join().expect("inference thread");
        postprocessor.join().expect("postprocess thread");
        report
    });

    if let Some(e) = first_error {
        return Err(e);
    }

    let wall = match report.first_read_s {
        Some(t0) if frames_out > 0 => last_emit - t0,
        _ => 0.0,
    };
    Ok(build_stats(
        report.frames_in,
        frames_out,
        report.frames_dropped,
        wall,
        &mut latencies,
        vec![
            q_read.max_observed(),
            q_prep.max_observed(),
            q_infer.max_observed(),
            q_out.max_observed(),
        ],
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::MemorySource;
    use crate::segmentation::OracleSegmenter;
    use std::collections::BTreeMap;

    /// A synthetic moving-line dataset: vertical line whose free end
    /// rises one row per frame.
    fn line_dataset(n: u64, size: u32) -> (Vec<Frame>, BTreeMap<u64, LabelMap>) {
        let mut frames = Vec::new();
        let mut masks = BTreeMap::new();
        for id in 0..n {
            let mut map = LabelMap::zeros(size, size, 2);
            let top = (size as i64 - 2 - id as i64).max(2) as u32;
            for y in top..size {
                map.set(size / 2, y, 1);
            }
            masks.insert(id, map);
            let frame =
                Frame::new(size, size, 1, vec![200; (size * size) as usize], id, id * 41_666_667)
                    .unwrap();
            frames.push(frame);
        }
        (frames, masks)
    }

    #[test]
    fn offline_pipeline_is_lossless_and_ordered() {
        let (frames, masks) = line_dataset(50, 64);
        let mut source = MemorySource::new(frames);
        let backend = OracleSegmenter::new(masks).unwrap();
        let mut results = Vec::new();
        let stats = run_pipeline(
            &mut source,
            &backend,
            &PostprocessConfig::default(),
            &PipelineConfig::default(),
            &mut |r| results.push(r),
        )
        .unwrap();
        assert_eq!(stats.frames_in, 50);
        assert_eq!(stats.frames_out, 50);
        assert_eq!(stats.frames_dropped, 0);
        let ids: Vec<u64> = results.iter().map(|r| r.frame_sequence_id).collect();
        assert_eq!(ids, (0..50).collect::<Vec<_>>());
        assert!(stats.max_queue_depths.iter().all(|&d| d <= 8));
    }

    #[test]
    fn pipeline_matches_sequential_composition() {
        let (frames, masks) = line_dataset(30, 48);
        let backend = OracleSegmenter::new(masks).unwrap();
        let pp = PostprocessConfig::default();
        let cfg = PipelineConfig::default();

        let mut threaded = Vec::new();
        run_pipeline(
            &mut MemorySource::new(frames.clone()),
            &backend,
            &pp,
            &cfg,
            &mut |r| threaded.push(r.tips),
        )
        .unwrap();

        let mut sequential = Vec::new();
        run_sequential(
            &mut MemorySource::new(frames),
            &backend,
            &pp,
            &cfg,
            &mut |r| sequential.push(r.tips),
        )
        .unwrap();

        assert_eq!(threaded, sequential);
    }

    #[test]
    fn rerun_is_bit_identical() {
        let (frames, masks) = line_dataset(20, 48);
        let backend = OracleSegmenter::new(masks).unwrap();
        let mut a = Vec::new();
        let mut b = Vec::new();
        for out in [&mut a, &mut b] {
            run_pipeline(
                &mut MemorySource::new(frames.clone()),
                &backend,
                &PostprocessConfig::default(),
                &PipelineConfig::default(),
                &mut |r| out.push(r.tips),
            )
            .unwrap();
        }
        assert_eq!(a, b);
    }

    /// Oracle wrapper that stalls on every call.
    struct SlowBackend {
        inner: OracleSegmenter,
        delay: Duration,
    }

    impl Segmenter for SlowBackend {
        fn num_classes(&self) -> u8 {
            self.inner.num_classes()
        }
        fn segment(&self, frame: &Frame) -> crate::Result<crate::imgproc::ProbMap> {
            std::thread::sleep(self.delay);
            self.inner.segment(frame)
        }
    }

    #[test]
    fn live_mode_drops_frames_but_keeps_order() {
        let (frames, masks) = line_dataset(100, 32);
        let backend = SlowBackend {
            inner: OracleSegmenter::new(masks).unwrap(),
            delay: Duration::from_millis(5),
        };
        let cfg = PipelineConfig {
            mode: PipelineMode::Live,
            live_drop_policy: DropPolicy::DropOldest,
            queue_capacity: 8,
            ..PipelineConfig::default()
        };
        let mut ids = Vec::new();
        let stats = run_pipeline(
            &mut MemorySource::new(frames),
            &backend,
            &PostprocessConfig::default(),
            &cfg,
            &mut |r| ids.push(r.frame_sequence_id),
        )
        .unwrap();
        assert!(stats.frames_dropped > 0, "stalled backend must drop");
        assert_eq!(stats.frames_in, 100);
        assert_eq!(stats.frames_out + stats.frames_dropped, 100);
        assert!(ids.windows(2).all(|w| w[0] < w[1]), "ids must increase");
    }

    #[test]
    fn backend_error_aborts_with_sequence_id() {
        let (frames, mut masks) = line_dataset(10, 32);
        masks.remove(&6); // oracle will fail at frame 6
        let backend = OracleSegmenter::new(masks).unwrap();
        let mut seen = Vec::new();
        let err = run_pipeline(
            &mut MemorySource::new(frames),
            &backend,
            &PostprocessConfig::default(),
            &PipelineConfig::default(),
            &mut |r| seen.push(r.frame_sequence_id),
        )
        .unwrap_err();
        match err {
            Error::Pipeline { sequence_id, .. } => assert_eq!(sequence_id, 6),
            other => panic!("expected pipeline error, got {other:?}"),
        }
        // Frames before the failure drained to the sink.
        assert_eq!(seen, vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn throughput_examples() {
        let mut stats = build_stats(240, 240, 0, 10.0, &mut StageLatencyBuffers::default(), vec![]);
        assert!((measure_throughput(&stats).unwrap() - 24.0).abs() < 1e-12);
        stats.frames_out = 1;
        stats.wall_time_s = 0.25;
        assert!((measure_throughput(&stats).unwrap() - 4.0).abs() < 1e-12);
        stats.frames_out = 0;
        assert!(matches!(
            measure_throughput(&stats),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn px_to_mm_examples() {
        assert_eq!(px_to_mm((10.0, 20.0), 0.5).unwrap(), (5.0, 10.0));
        assert_eq!(px_to_mm((0.0, 0.0), 3.0).unwrap(), (0.0, 0.0));
        assert_eq!(px_to_mm((13.0, 14.0), 1.0).unwrap(), (13.0, 14.0));
        assert!(px_to_mm((1.0, 1.0), 0.0).is_err());
    }

    #[test]
    fn letterbox_roundtrip() {
        let lb = Letterbox::fit(500, 400, 512);
        let fwd = lb.forward((250.0, 200.0));
        let back = lb.back((fwd.0.round() as u32, fwd.1.round() as u32));
        assert!((back.0 as i64 - 250).abs() <= 1);
        assert!((back.1 as i64 - 200).abs() <= 1);
        // Corners stay in-bounds after mapping back.
        assert_eq!(lb.back((0, 0)), (0, 0));
        let (bx, by) = lb.back((511, 511));
        assert!(bx < 500 && by < 400);
    }

    #[test]
    fn queue_respects_capacity_and_close() {
        let q: BoundedQueue<u32> = BoundedQueue::new(2);
        q.push(1).unwrap();
        q.push(2).unwrap();
        assert_eq!(q.push_drop_oldest(3).unwrap(), Some(1));
        assert_eq!(q.max_observed(), 2);
        assert_eq!(q.pop(), Some(2));
        q.close();
        assert!(q.push(9).is_err());
        assert_eq!(q.pop(), Some(3));
        assert_eq!(q.pop(), None);
    }
}
