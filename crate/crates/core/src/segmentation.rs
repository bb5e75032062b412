//! Pluggable segmentation backends and tiled sliding-window inference.
//!
//! The pipeline is model-agnostic: anything implementing [`Segmenter`]
//! can drive it. Two concrete backends ship with the crate — a
//! classical intensity segmenter and a ground-truth oracle — so the
//! tracking stack is exercisable end to end without trained weights.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::imgproc::{morphological_open, BinaryMask, Frame, LabelMap, ProbMap};

/// Segmentation backend contract.
///
/// Backends must tolerate concurrent invocation from multiple worker
/// threads (tile inferences within one frame may run in parallel), and
/// must emit probability maps matching the input frame's dimensions
/// with per-pixel probabilities summing to one.
pub trait Segmenter: Send + Sync {
    fn num_classes(&self) -> u8;
    fn segment(&self, frame: &Frame) -> Result<ProbMap>;
}

/// Which intensity extreme the device occupies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarity {
    /// Device darker than background (fluoroscopy).
    DarkDevice,
    /// Device brighter than background.
    BrightDevice,
}

/// Model-free two-class backend: intensity threshold plus a
/// morphological opening for speckle suppression. Emits hard
/// probabilities in {0, 1}.
#[derive(Debug, Clone)]
pub struct ClassicalSegmenter {
    pub threshold: u8,
    pub polarity: Polarity,
    pub open_radius: u32,
}

impl Default for ClassicalSegmenter {
    fn default() -> Self {
        ClassicalSegmenter {
            threshold: 100,
            polarity: Polarity::DarkDevice,
            open_radius: 1,
        }
    }
}

impl Segmenter for ClassicalSegmenter {
    fn num_classes(&self) -> u8 {
        2
    }

    fn segment(&self, frame: &Frame) -> Result<ProbMap> {
        let (w, h) = (frame.width(), frame.height());
        let mut mask = BinaryMask::zeros(w, h);
        for y in 0..h {
            for x in 0..w {
                let v = frame.luminance(x, y);
                let fg = match self.polarity {
                    Polarity::DarkDevice => v < self.threshold,
                    Polarity::BrightDevice => v > self.threshold,
                };
                mask.set(x, y, fg);
            }
        }
        let mask = morphological_open(&mask, self.open_radius);
        let labels = LabelMap::new(w, h, 2, mask.data().iter().map(|&b| b as u8).collect())?;
        Ok(ProbMap::from_labels(&labels))
    }
}

/// Ground-truth pass-through backend: returns the stored label map for
/// the frame's sequence id as a hard probability map. Isolates
/// post-processing error from segmentation error.
pub struct OracleSegmenter {
    masks: BTreeMap<u64, LabelMap>,
    num_classes: u8,
}

impl OracleSegmenter {
    pub fn new(masks: BTreeMap<u64, LabelMap>) -> Result<Self> {
        if masks.is_empty() {
            return Err(Error::InvalidArgument(
                "oracle mask store must not be empty".into(),
            ));
        }
        let num_classes = masks.values().map(|m| m.num_classes()).max().unwrap();
        Ok(OracleSegmenter { masks, num_classes })
    }

    /// Loads a mask store directory: `<sequence_id:06d>.png`, 8-bit
    /// single channel, label values in {0, 1, 2}.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let masks = crate::io::load_mask_dir(dir)?;
        OracleSegmenter::new(masks)
    }

    pub fn mask_for(&self, sequence_id: u64) -> Option<&LabelMap> {
        self.masks.get(&sequence_id)
    }
}

impl Segmenter for OracleSegmenter {
    fn num_classes(&self) -> u8 {
        self.num_classes
    }

    fn segment(&self, frame: &Frame) -> Result<ProbMap> {
        let mask = self
            .masks
            .get(&frame.sequence_id)
            .ok_or(Error::MissingAnnotation {
                sequence_id: frame.sequence_id,
            })?;
        if mask.width() != frame.width() || mask.height() != frame.height() {
            return Err(Error::InvalidArgument(format!(
                "stored mask {}x{} does not match frame {}x{} (sequence_id {})",
                mask.width(),
                mask.height(),
                frame.width(),
                frame.height(),
                frame.sequence_id
            )));
        }
        Ok(ProbMap::from_labels(mask))
    }
}

/// Tile layout for sliding-window inference.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileGrid {
    pub tile_size: u32,
    pub overlap: u32,
    /// Tile top-left corners.
    pub origins: Vec<(u32, u32)>,
}

impl TileGrid {
    /// Effective tile dimensions for an origin, clamped to the image.
    pub fn tile_dims(&self, width: u32, height: u32) -> (u32, u32) {
        (self.tile_size.min(width), self.tile_size.min(height))
    }
}

fn axis_origins(extent: u32, tile: u32, stride: u32) -> Vec<u32> {
    let mut origins = Vec::new();
    let mut pos = 0u32;
    loop {
        if pos + tile >= extent {
            origins.push(extent.saturating_sub(tile));
            break;
        }
        origins.push(pos);
        pos += stride;
    }
    origins.dedup();
    origins
}

/// Plans tile origins at stride `tile_size - overlap`, clamping the
/// final origin on each axis so the tile abuts the image edge. Every
/// pixel is covered by at least one tile.
pub fn plan_tiles(width: u32, height: u32, tile_size: u32, overlap: u32) -> Result<TileGrid> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument("image dimensions must be > 0".into()));
    }
    if tile_size == 0 || overlap >= tile_size {
        return Err(Error::InvalidArgument(format!(
            "tile_size ({tile_size}) must exceed overlap ({overlap})"
        )));
    }
    let stride = tile_size - overlap;
    let xs = axis_origins(width, tile_size, stride);
    let ys = axis_origins(height, tile_size, stride);
    let mut origins = Vec::with_capacity(xs.len() * ys.len());
    for &y in &ys {
        for &x in &xs {
            origins.push((x, y));
        }
    }
    Ok(TileGrid {
        tile_size,
        overlap,
        origins,
    })
}

/// Worker cap for tile inference: the `TIPTRACK_THREADS` environment
/// variable when set, otherwise the machine's available parallelism.
pub fn tile_worker_cap() -> usize {
    if let Ok(v) = std::env::var("TIPTRACK_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            return n.max(1);
        }
    }
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

/// Runs the backend over every tile and averages overlapping
/// predictions, then renormalizes each pixel to a unit sum.
///
/// Tiles may be inferred in parallel; the accumulation always happens
/// in tile order, so the output is independent of scheduling. Any tile
/// failure aborts the whole frame.
pub fn sliding_window_infer(
    frame: &Frame,
    backend: &dyn Segmenter,
    grid: &TileGrid,
) -> Result<ProbMap> {
    let (w, h) = (frame.width(), frame.height());
    let (tw, th) = grid.tile_dims(w, h);
    let k = backend.num_classes() as usize;

    let tile_results = infer_tiles(frame, backend, &grid.origins, tw, th)?;

    let n = w as usize * h as usize;
    let mut sums = vec![0.0f64; n * k];
    let mut counts = vec![0u32; n];
    for ((ox, oy), probs) in grid.origins.iter().zip(&tile_results) {
        if probs.width() != tw || probs.height() != th || probs.num_classes() != backend.num_classes()
        {
            return Err(Error::InvalidArgument(format!(
                "backend returned {}x{}x{} for a {}x{} tile",
                probs.width(),
                probs.height(),
                probs.num_classes(),
                tw,
                th
            )));
        }
        let data = probs.probs();
        for ty in 0..th {
            for tx in 0..tw {
                let src = (ty as usize * tw as usize + tx as usize) * k;
                let px = (oy + ty) as usize * w as usize + (ox + tx) as usize;
                for c in 0..k {
                    sums[px * k + c] += data[src + c] as f64;
                }
                counts[px] += 1;
            }
        }
    }

    let mut out = vec![0.0f32; n * k];
    for px in 0..n {
        let cover = counts[px];
        debug_assert!(cover > 0, "tile grid must cover every pixel");
        let mut total = 0.0f64;
        for c in 0..k {
            total += sums[px * k + c];
        }
        for c in 0..k {
            // Mean across covering tiles, renormalized to a unit sum.
            out[px * k + c] = if total > 0.0 {
                (sums[px * k + c] / total) as f32
            } else if c == 0 {
                1.0
            } else {
                0.0
            };
        }
    }
    ProbMap::new(w, h, backend.num_classes(), out)
}

fn infer_tiles(
    frame: &Frame,
    backend: &dyn Segmenter,
    origins: &[(u32, u32)],
    tw: u32,
    th: u32,
) -> Result<Vec<ProbMap>> {
    let workers = tile_worker_cap().min(origins.len()).max(1);
    if workers == 1 || origins.len() == 1 {
        return origins
            .iter()
            .map(|&(ox, oy)| backend.segment(&frame.crop(ox, oy, tw, th)?))
            .collect();
    }
    let mut slots: Vec<Option<Result<ProbMap>>> = Vec::new();
    slots.resize_with(origins.len(), || None);
    let slots = std::sync::Mutex::new(slots);
    let next = std::sync::atomic::AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= origins.len() {
                    break;
                }
                let (ox, oy) = origins[i];
                let result = frame
                    .crop(ox, oy, tw, th)
                    .and_then(|tile| backend.segment(&tile));
                slots.lock().unwrap()[i] = Some(result);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every tile slot filled"))
        .collect()
}
