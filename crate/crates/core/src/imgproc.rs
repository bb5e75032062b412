//! Raster types and pixel-level kernels shared by the whole stack.
//!
//! Coordinate convention: origin at the top-left, `x` grows rightward,
//! `y` grows downward. The inferior image margin is the row
//! `y = height - 1`. All intensities are 8-bit; higher bit depths are
//! rescaled at ingest.

use crate::error::{Error, Result};
use crate::union_find::UnionFind;

/// A timestamped raster entering the pipeline.
///
/// `data` is row-major; grayscale frames have one byte per pixel, RGB
/// frames three (interleaved).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    width: u32,
    height: u32,
    channels: u8,
    data: Vec<u8>,
    pub sequence_id: u64,
    pub timestamp_ns: u64,
}

impl Frame {
    pub fn new(
        width: u32,
        height: u32,
        channels: u8,
        data: Vec<u8>,
        sequence_id: u64,
        timestamp_ns: u64,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument("frame dimensions must be > 0".into()));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidArgument(format!(
                "frame channels must be 1 or 3, got {channels}"
            )));
        }
        let expected = width as usize * height as usize * channels as usize;
        if data.len() != expected {
            return Err(Error::InvalidArgument(format!(
                "frame data length {} != width*height*channels = {expected}",
                data.len()
            )));
        }
        Ok(Frame {
            width,
            height,
            channels,
            data,
            sequence_id,
            timestamp_ns,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    /// Grayscale intensity at `(x, y)`; RGB pixels use the channel mean.
    pub fn luminance(&self, x: u32, y: u32) -> u8 {
        let idx = (y as usize * self.width as usize + x as usize) * self.channels as usize;
        if self.channels == 1 {
            self.data[idx]
        } else {
            let sum =
                self.data[idx] as u16 + self.data[idx + 1] as u16 + self.data[idx + 2] as u16;
            (sum / 3) as u8
        }
    }

    /// Copies the rectangle at `(x0, y0)` with size `w x h` into a new frame
    /// that keeps this frame's sequence id and timestamp.
    pub fn crop(&self, x0: u32, y0: u32, w: u32, h: u32) -> Result<Frame> {
        if x0 + w > self.width || y0 + h > self.height || w == 0 || h == 0 {
            return Err(Error::InvalidArgument(format!(
                "crop {w}x{h}+{x0}+{y0} exceeds frame {}x{}",
                self.width, self.height
            )));
        }
        let c = self.channels as usize;
        let mut data = Vec::with_capacity(w as usize * h as usize * c);
        for y in y0..y0 + h {
            let row = (y as usize * self.width as usize + x0 as usize) * c;
            data.extend_from_slice(&self.data[row..row + w as usize * c]);
        }
        Frame::new(w, h, self.channels, data, self.sequence_id, self.timestamp_ns)
    }
}

/// Per-pixel class labels. `0` is background; `1` is the instrument in the
/// two-class task or the catheter in the three-class task; `2` is the
/// guidewire.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    width: u32,
    height: u32,
    num_classes: u8,
    labels: Vec<u8>,
}

impl LabelMap {
    pub fn new(width: u32, height: u32, num_classes: u8, labels: Vec<u8>) -> Result<Self> {
        if num_classes != 2 && num_classes != 3 {
            return Err(Error::InvalidArgument(format!(
                "num_classes must be 2 or 3, got {num_classes}"
            )));
        }
        if labels.len() != width as usize * height as usize {
            return Err(Error::InvalidArgument(format!(
                "label length {} != width*height = {}",
                labels.len(),
                width as usize * height as usize
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(LabelMap {
            width,
            height,
            num_classes,
            labels,
        })
    }

    pub fn zeros(width: u32, height: u32, num_classes: u8) -> Self {
        LabelMap {
            width,
            height,
            num_classes,
            labels: vec![0; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn num_classes(&self) -> u8 {
        self.num_classes
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.labels[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, label: u8) {
        debug_assert!(label < self.num_classes);
        self.labels[y as usize * self.width as usize + x as usize] = label;
    }

    /// Foreground class ids (everything except background 0).
    pub fn foreground_classes(&self) -> Vec<u8> {
        (1..self.num_classes).collect()
    }
}

/// Per-pixel per-class probabilities, pixel-major interleaved:
/// `probs[(y*width + x) * num_classes + c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    width: u32,
    height: u32,
    num_classes: u8,
    probs: Vec<f32>,
}

/// Max per-pixel deviation from a unit probability sum.
pub const PROB_SUM_TOLERANCE: f32 = 1e-5;

impl ProbMap {
    pub fn new(width: u32, height: u32, num_classes: u8, probs: Vec<f32>) -> Result<Self> {
        if num_classes != 2 && num_classes != 3 {
            return Err(Error::InvalidArgument(format!(
                "num_classes must be 2 or 3, got {num_classes}"
            )));
        }
        let n = width as usize * height as usize;
        if probs.len() != n * num_classes as usize {
            return Err(Error::InvalidArgument(format!(
                "probability length {} != pixels*classes = {}",
                probs.len(),
                n * num_classes as usize
            )));
        }
        for px in 0..n {
            let sum: f32 = probs[px * num_classes as usize..(px + 1) * num_classes as usize]
                .iter()
                .sum();
            if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
                return Err(Error::InvalidArgument(format!(
                    "pixel {px} probabilities sum to {sum}, expected 1"
                )));
            }
        }
        Ok(ProbMap {
            width,
            height,
            num_classes,
            probs,
        })
    }

    /// Hard one-hot encoding of a label map.
    pub fn from_labels(map: &LabelMap) -> ProbMap {
        let k = map.num_classes as usize;
        let mut probs = vec![0.0f32; map.labels.len() * k];
        for (px, &label) in map.labels.iter().enumerate() {
            probs[px * k + label as usize] = 1.0;
        }
        ProbMap {
            width: map.width,
            height: map.height,
            num_classes: map.num_classes,
            probs,
        }
    }

    /// Per-pixel argmax; ties resolve to the lowest class id.
    pub fn argmax_labels(&self) -> LabelMap {
        let k = self.num_classes as usize;
        let labels = self
            .probs
            .chunks_exact(k)
            .map(|chunk| {
                let mut best = 0u8;
                for (c, &p) in chunk.iter().enumerate().skip(1) {
                    if p > chunk[best as usize] {
                        best = c as u8;
                    }
                }
                best
            })
            .collect();
        LabelMap {
            width: self.width,
            height: self.height,
            num_classes: self.num_classes,
            labels,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn num_classes(&self) -> u8 {
        self.num_classes
    }

    pub fn probs(&self) -> &[f32] {
        &self.probs
    }

    pub fn get(&self, x: u32, y: u32, class: u8) -> f32 {
        let k = self.num_classes as usize;
        self.probs[(y as usize * self.width as usize + x as usize) * k + class as usize]
    }
}

/// Row-major binary foreground mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn zeros(width: u32, height: u32) -> Self {
        BinaryMask {
            width,
            height,
            data: vec![false; width as usize * height as usize],
        }
    }

    pub fn from_data(width: u32, height: u32, data: Vec<bool>) -> Result<Self> {
        if data.len() != width as usize * height as usize {
            return Err(Error::InvalidArgument(format!(
                "mask length {} != width*height = {}",
                data.len(),
                width as usize * height as usize
            )));
        }
        Ok(BinaryMask {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        self.data[y as usize * self.width as usize + x as usize] = value;
    }

    pub fn count_foreground(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Foreground pixels in (y, x) scan order.
    pub fn foreground_pixels(&self) -> Vec<(u32, u32)> {
        let mut out = Vec::new();
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    out.push((x, y));
                }
            }
        }
        out
    }
}

/// Inclusive bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bbox {
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
}

impl Bbox {
    /// Whether the boxes, each expanded by `margin` on all sides, intersect.
    pub fn expanded_intersects(&self, other: &Bbox, margin: u32) -> bool {
        let m = 2 * margin as i64;
        (self.x_min as i64 - m) <= other.x_max as i64
            && (other.x_min as i64 - m) <= self.x_max as i64
            && (self.y_min as i64 - m) <= other.y_max as i64
            && (other.y_min as i64 - m) <= self.y_max as i64
    }
}

/// An 8- or 4-connected foreground region.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    /// Member pixels sorted by (y, x).
    pub pixels: Vec<(u32, u32)>,
    pub area: usize,
    pub bbox: Bbox,
    pub centroid: (f64, f64),
}

impl Component {
    /// Builds a component from pixels, sorting them into (y, x) order and
    /// computing area, bounding box, and centroid.
    pub fn from_pixels(mut pixels: Vec<(u32, u32)>) -> Result<Self> {
        if pixels.is_empty() {
            return Err(Error::InvalidArgument("component must not be empty".into()));
        }
        pixels.sort_unstable_by_key(|&(x, y)| (y, x));
        pixels.dedup();
        let mut bbox = Bbox {
            x_min: u32::MAX,
            y_min: u32::MAX,
            x_max: 0,
            y_max: 0,
        };
        let (mut sx, mut sy) = (0u64, 0u64);
        for &(x, y) in &pixels {
            bbox.x_min = bbox.x_min.min(x);
            bbox.x_max = bbox.x_max.max(x);
            bbox.y_min = bbox.y_min.min(y);
            bbox.y_max = bbox.y_max.max(y);
            sx += x as u64;
            sy += y as u64;
        }
        let n = pixels.len();
        Ok(Component {
            area: n,
            bbox,
            centroid: (sx as f64 / n as f64, sy as f64 / n as f64),
            pixels,
        })
    }

    /// Paints the component into a fresh mask of the given dimensions.
    pub fn to_mask(&self, width: u32, height: u32) -> BinaryMask {
        let mut mask = BinaryMask::zeros(width, height);
        for &(x, y) in &self.pixels {
            mask.set(x, y, true);
        }
        mask
    }

    /// The pixel closest to the inferior margin (max y, tie-break min x).
    pub fn bottom_most_pixel(&self) -> (u32, u32) {
        let mut best = self.pixels[0];
        for &(x, y) in &self.pixels[1..] {
            if y > best.1 || (y == best.1 && x < best.0) {
                best = (x, y);
            }
        }
        best
    }
}

/// Pixel adjacency rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
}

/// Binarizes a label map: output is foreground wherever the label is in
/// `foreground_classes`.
pub fn to_binary(map: &LabelMap, foreground_classes: &[u8]) -> Result<BinaryMask> {
    if foreground_classes.is_empty() {
        return Err(Error::InvalidArgument(
            "foreground_classes must not be empty".into(),
        ));
    }
    if let Some(&bad) = foreground_classes.iter().find(|&&c| c >= map.num_classes) {
        return Err(Error::InvalidArgument(format!(
            "foreground class {bad} out of range for {} classes",
            map.num_classes
        )));
    }
    let mut lut = [false; 256];
    for &c in foreground_classes {
        lut[c as usize] = true;
    }
    let data = map.labels.iter().map(|&l| lut[l as usize]).collect();
    BinaryMask::from_data(map.width, map.height, data)
}

/// Labels the connected foreground regions of `mask`.
///
/// Components are returned sorted by (bbox.y_min, bbox.x_min), then by
/// their first pixel in scan order so the ordering is total.
pub fn connected_components(mask: &BinaryMask, connectivity: Connectivity) -> Vec<Component> {
    let (w, h) = (mask.width as usize, mask.height as usize);
    if w == 0 || h == 0 {
        return Vec::new();
    }

    // First pass: provisional labels, unions against already-visited
    // neighbors (W, NW, N, NE for 8-connectivity; W, N for 4).
    let foreground = mask.data.iter().filter(|&&b| b).count();
    let mut labels = vec![u32::MAX; w * h];
    let mut uf = UnionFind::new(foreground);
    let mut next = 0u32;
    for y in 0..h {
        for x in 0..w {
            if !mask.data[y * w + x] {
                continue;
            }
            let mut neighbor_label = u32::MAX;
            let mut consider = |lbl: u32, uf: &mut UnionFind| {
                if lbl == u32::MAX {
                    return;
                }
                if neighbor_label == u32::MAX {
                    neighbor_label = lbl;
                } else {
                    uf.union(neighbor_label, lbl);
                }
            };
            if x > 0 {
                consider(labels[y * w + x - 1], &mut uf);
            }
            if y > 0 {
                consider(labels[(y - 1) * w + x], &mut uf);
                if matches!(connectivity, Connectivity::Eight) {
                    if x > 0 {
                        consider(labels[(y - 1) * w + x - 1], &mut uf);
                    }
                    if x + 1 < w {
                        consider(labels[(y - 1) * w + x + 1], &mut uf);
                    }
                }
            }
            labels[y * w + x] = if neighbor_label != u32::MAX {
                neighbor_label
            } else {
                let l = next;
                next += 1;
                l
            };
        }
    }

    // Second pass: resolve roots, bucket pixels per component. Scan order
    // keeps each pixel list sorted by (y, x).
    let mut root_to_slot: Vec<u32> = vec![u32::MAX; next as usize];
    let mut buckets: Vec<Vec<(u32, u32)>> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let lbl = labels[y * w + x];
            if lbl == u32::MAX {
                continue;
            }
            let root = uf.find(lbl) as usize;
            let slot = if root_to_slot[root] == u32::MAX {
                root_to_slot[root] = buckets.len() as u32;
                buckets.push(Vec::new());
                buckets.len() - 1
            } else {
                root_to_slot[root] as usize
            };
            buckets[slot].push((x as u32, y as u32));
        }
    }

    let mut components: Vec<Component> = buckets
        .into_iter()
        .map(|pixels| Component::from_pixels(pixels).expect("buckets are non-empty"))
        .collect();
    components.sort_by_key(|c| (c.bbox.y_min, c.bbox.x_min, c.pixels[0].1, c.pixels[0].0));
    components
}

fn integral_image(mask: &BinaryMask) -> Vec<u32> {
    let (w, h) = (mask.width as usize, mask.height as usize);
    let stride = w + 1;
    let mut ii = vec![0u32; stride * (h + 1)];
    for y in 0..h {
        let mut row = 0u32;
        for x in 0..w {
            row += mask.data[y * w + x] as u32;
            ii[(y + 1) * stride + x + 1] = ii[y * stride + x + 1] + row;
        }
    }
    ii
}

fn window_sum(ii: &[u32], stride: usize, x0: i64, y0: i64, x1: i64, y1: i64, w: i64, h: i64) -> u32 {
    // Clip to the image; out-of-bounds cells contribute zero.
    let cx0 = x0.max(0) as usize;
    let cy0 = y0.max(0) as usize;
    let cx1 = (x1.min(w - 1) + 1) as usize;
    let cy1 = (y1.min(h - 1) + 1) as usize;
    if cx0 >= cx1 || cy0 >= cy1 {
        return 0;
    }
    ii[cy1 * stride + cx1] + ii[cy0 * stride + cx0]
        - ii[cy0 * stride + cx1]
        - ii[cy1 * stride + cx0]
}

/// Erosion with a square structuring element of side `2*radius + 1`.
/// Pixels whose window extends past the border are eroded (outside is
/// background).
pub fn erode(mask: &BinaryMask, radius: u32) -> BinaryMask {
    if radius == 0 {
        return mask.clone();
    }
    let (w, h) = (mask.width as i64, mask.height as i64);
    let ii = integral_image(mask);
    let stride = mask.width as usize + 1;
    let r = radius as i64;
    let full = ((2 * r + 1) * (2 * r + 1)) as u32;
    let mut out = BinaryMask::zeros(mask.width, mask.height);
    for y in 0..h {
        for x in 0..w {
            let sum = window_sum(&ii, stride, x - r, y - r, x + r, y + r, w, h);
            if sum == full {
                out.data[(y * w + x) as usize] = true;
            }
        }
    }
    out
}

/// Dilation with a square structuring element of side `2*radius + 1`.
pub fn dilate(mask: &BinaryMask, radius: u32) -> BinaryMask {
    if radius == 0 {
        return mask.clone();
    }
    let (w, h) = (mask.width as i64, mask.height as i64);
    let ii = integral_image(mask);
    let stride = mask.width as usize + 1;
    let r = radius as i64;
    let mut out = BinaryMask::zeros(mask.width, mask.height);
    for y in 0..h {
        for x in 0..w {
            if window_sum(&ii, stride, x - r, y - r, x + r, y + r, w, h) > 0 {
                out.data[(y * w + x) as usize] = true;
            }
        }
    }
    out
}

/// Morphological opening: erosion followed by dilation. `radius == 0` is
/// the identity.
pub fn morphological_open(mask: &BinaryMask, radius: u32) -> BinaryMask {
    if radius == 0 {
        return mask.clone();
    }
    dilate(&erode(mask, radius), radius)
}
