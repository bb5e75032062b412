//! Synthetic fluoroscopy-like test data with exact tip ground truth.
//!
//! Devices are smooth piecewise-cubic Bézier tubes entering from the
//! inferior image margin, rendered dark on a brighter textured
//! background. Generators are pure functions of their parameters and
//! seed; the ground-truth tip is the exact last curve sample, so there
//! is no annotation noise by construction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::imgproc::{Frame, LabelMap};

/// A smooth tube: Bézier chain control points plus rendering metadata.
///
/// `control_points` holds `3n + 1` points for an `n`-segment chain with
/// a shared tangent direction at the joins.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveSpec {
    pub control_points: Vec<(f64, f64)>,
    pub tube_width: u32,
    pub class_id: u8,
    pub seed: u64,
}

fn cubic(p: [(f64, f64); 4], t: f64) -> (f64, f64) {
    let u = 1.0 - t;
    let b0 = u * u * u;
    let b1 = 3.0 * u * u * t;
    let b2 = 3.0 * u * t * t;
    let b3 = t * t * t;
    (
        b0 * p[0].0 + b1 * p[1].0 + b2 * p[2].0 + b3 * p[3].0,
        b0 * p[0].1 + b1 * p[1].1 + b2 * p[2].1 + b3 * p[3].1,
    )
}

const FINE_STEPS_PER_SEGMENT: usize = 128;

impl CurveSpec {
    pub fn segment_count(&self) -> usize {
        (self.control_points.len() - 1) / 3
    }

    fn segment(&self, i: usize) -> [(f64, f64); 4] {
        let b = i * 3;
        [
            self.control_points[b],
            self.control_points[b + 1],
            self.control_points[b + 2],
            self.control_points[b + 3],
        ]
    }

    /// Dense parameter samples with cumulative arc length, including
    /// both curve endpoints exactly.
    fn fine_samples(&self) -> Vec<((f64, f64), f64)> {
        let mut out = Vec::with_capacity(self.segment_count() * FINE_STEPS_PER_SEGMENT + 1);
        let mut arc = 0.0f64;
        let mut prev = self.control_points[0];
        out.push((prev, 0.0));
        for seg in 0..self.segment_count() {
            let pts = self.segment(seg);
            for k in 1..=FINE_STEPS_PER_SEGMENT {
                let t = k as f64 / FINE_STEPS_PER_SEGMENT as f64;
                let p = cubic(pts, t);
                arc += ((p.0 - prev.0).powi(2) + (p.1 - prev.1).powi(2)).sqrt();
                out.push((p, arc));
                prev = p;
            }
        }
        out
    }

    pub fn total_arc(&self) -> f64 {
        self.fine_samples().last().unwrap().1
    }

    /// Curve point at arc position `s`, clamped to the curve's ends.
    pub fn point_at_arc(&self, s: f64) -> (f64, f64) {
        let samples = self.fine_samples();
        if s <= 0.0 {
            return samples[0].0;
        }
        for w in samples.windows(2) {
            let ((p0, a0), (p1, a1)) = (w[0], w[1]);
            if s <= a1 {
                let t = if a1 > a0 { (s - a0) / (a1 - a0) } else { 1.0 };
                return (p0.0 + (p1.0 - p0.0) * t, p0.1 + (p1.1 - p0.1) * t);
            }
        }
        samples.last().unwrap().0
    }

    /// Arc-length-uniform polyline up to `limit` (or the full curve),
    /// spaced `step` pixels apart, ending exactly at the cut point.
    pub fn polyline_up_to(&self, step: f64, limit: Option<f64>) -> Vec<(f64, f64)> {
        let samples = self.fine_samples();
        let end = limit
            .unwrap_or(f64::INFINITY)
            .min(samples.last().unwrap().1);
        let mut out = vec![samples[0].0];
        let mut next_emit = step;
        for w in samples.windows(2) {
            let ((p0, a0), (p1, a1)) = (w[0], w[1]);
            while next_emit <= a1 && next_emit < end {
                let t = if a1 > a0 {
                    (next_emit - a0) / (a1 - a0)
                } else {
                    1.0
                };
                out.push((p0.0 + (p1.0 - p0.0) * t, p0.1 + (p1.1 - p0.1) * t));
                next_emit += step;
            }
            if a1 >= end {
                break;
            }
        }
        let tail = self.point_at_arc(end);
        out.push(tail);
        out
    }

    pub fn polyline(&self, step: f64) -> Vec<(f64, f64)> {
        self.polyline_up_to(step, None)
    }
}

fn sub_seed(seed: u64, salt: u64) -> u64 {
    // splitmix64 round
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn pixel_hash(x: u32, y: u32, seed: u64) -> u64 {
    sub_seed(seed ^ ((x as u64) << 32) ^ y as u64, 0x517C_C1B7_2722_0A95)
}

/// Minimum allowed distance between non-neighboring polyline samples,
/// relative to the tube width.
fn clearance_ok(polyline: &[(f64, f64)], step: f64, tube_width: u32) -> bool {
    let min_dist = tube_width as f64 + 1.0;
    let skip = ((2.0 * tube_width as f64 + 2.0) / step).ceil() as usize;
    for i in 0..polyline.len() {
        for j in (i + skip + 1)..polyline.len() {
            let dx = polyline[i].0 - polyline[j].0;
            let dy = polyline[i].1 - polyline[j].1;
            if (dx * dx + dy * dy).sqrt() < min_dist {
                return false;
            }
        }
    }
    true
}

fn try_gen_curve(
    image_size: u32,
    rng: &mut ChaCha8Rng,
    class_id: u8,
    tube_width: u32,
    seed: u64,
) -> Option<CurveSpec> {
    let size = image_size as f64;
    let margin = tube_width as f64 / 2.0 + 3.0;
    let n_seg = rng.random_range(3..=6usize);
    // Shared per-curve segment length keeps the chain C1 at the joins.
    let seg_len = size * rng.random_range(0.55..0.85) / n_seg as f64;

    let up = -std::f64::consts::FRAC_PI_2;
    let mut theta = up + rng.random_range(-0.35..0.35);
    let mut anchor = (size * rng.random_range(0.30..0.70), size - 1.0);
    let mut points = vec![anchor];

    for _ in 0..n_seg {
        let mut theta_next = theta + rng.random_range(-0.7..0.7);
        theta_next = theta_next.clamp(up - 1.0, up + 1.0);
        let mid = (theta + theta_next) / 2.0;
        let end = (
            anchor.0 + mid.cos() * seg_len,
            anchor.1 + mid.sin() * seg_len,
        );
        let c1 = (
            anchor.0 + theta.cos() * seg_len / 3.0,
            anchor.1 + theta.sin() * seg_len / 3.0,
        );
        let c2 = (
            end.0 - theta_next.cos() * seg_len / 3.0,
            end.1 - theta_next.sin() * seg_len / 3.0,
        );
        points.extend([c1, c2, end]);
        anchor = end;
        theta = theta_next;
    }

    let spec = CurveSpec {
        control_points: points,
        tube_width,
        class_id,
        seed,
    };

    // The curve lies in the convex hull of its control points; checking
    // the dense samples directly also covers the entry anchor, which may
    // sit exactly on the bottom row.
    let in_bounds = |p: (f64, f64)| {
        p.0 >= margin && p.0 <= size - 1.0 - margin && p.1 >= margin && p.1 <= size - 1.0
    };
    for (i, &p) in spec.control_points.iter().enumerate() {
        if i > 0 && !in_bounds(p) {
            return None;
        }
    }
    let poly = spec.polyline(2.0);
    if !clearance_ok(&poly, 2.0, tube_width) {
        return None;
    }
    Some(spec)
}

const GEN_ATTEMPTS: u64 = 64;

/// Generates a random device curve with the given tube width:
/// a C1 piecewise-cubic Bézier chain of 3–6 segments entering from the
/// bottom image row, in-bounds and self-clear at tube width.
/// Deterministic per (image_size, seed, class_id, width).
pub fn gen_curve_with_width(
    image_size: u32,
    seed: u64,
    class_id: u8,
    tube_width: u32,
) -> Result<CurveSpec> {
    if image_size < 64 {
        return Err(Error::InvalidArgument("image_size must be >= 64".into()));
    }
    for attempt in 0..GEN_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(
            seed ^ ((class_id as u64) << 56),
            attempt,
        ));
        if let Some(spec) = try_gen_curve(image_size, &mut rng, class_id, tube_width, seed) {
            return Ok(spec);
        }
    }
    Err(Error::Generation(format!(
        "no valid curve after {GEN_ATTEMPTS} attempts (seed {seed}, class {class_id})"
    )))
}

/// [`gen_curve_with_width`] with a seed-chosen width in 3..=7.
pub fn gen_curve(image_size: u32, seed: u64, class_id: u8) -> Result<CurveSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed ^ ((class_id as u64) << 56), 0xA11CE));
    let width = rng.random_range(3..=7);
    gen_curve_with_width(image_size, seed, class_id, width)
}

/// Exact per-class ground truth: the device tip plus the curve points
/// 5 and 10 arc-pixels behind it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtTip {
    pub class_id: u8,
    pub t0: (f64, f64),
    pub t1: (f64, f64),
    pub t2: (f64, f64),
}

/// An axis-aligned opaque occluder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OccluderRect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

/// Record of the degradation applied to a frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DegradeRecord {
    pub noise_sigma: f64,
    pub contrast_scale: f64,
    pub occluders: Vec<OccluderRect>,
    pub seed: u64,
}

/// One synthetic frame with its exact ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthFrameBundle {
    pub frame: Frame,
    pub gt_mask: LabelMap,
    /// Free-end tips per device class (metadata; never erased by
    /// occlusion).
    pub gt_tips: Vec<GtTip>,
    pub degradation: DegradeRecord,
}

const DEVICE_BASE_INTENSITY: i32 = 40;
const BACKGROUND_BASE_INTENSITY: f64 = 185.0;

fn background_value(x: u32, y: u32, seed: u64) -> u8 {
    let fx = (x as f64 * 0.065 + (seed % 97) as f64).sin();
    let fy = (y as f64 * 0.083 + (seed % 61) as f64).cos();
    let noise = (pixel_hash(x, y, seed) % 11) as f64 - 5.0;
    (BACKGROUND_BASE_INTENSITY + 25.0 * fx * fy + noise).round() as u8
}

fn device_value(x: u32, y: u32, seed: u64) -> u8 {
    (DEVICE_BASE_INTENSITY + (pixel_hash(x, y, seed ^ 0xDE71CE) % 16) as i32) as u8
}

/// Rasterizes devices (optionally arc-limited) into one frame bundle.
/// Devices draw in slice order, so later classes overwrite earlier ones
/// where tubes overlap (guidewire over catheter).
pub fn rasterize_devices(
    devices: &[(CurveSpec, Option<f64>)],
    image_size: u32,
    sequence_id: u64,
    texture_seed: u64,
) -> Result<SynthFrameBundle> {
    if devices.is_empty() {
        return Err(Error::InvalidArgument("no devices to rasterize".into()));
    }
    let num_classes = if devices.iter().any(|(s, _)| s.class_id == 2) {
        3
    } else {
        2
    };
    let mut mask = LabelMap::zeros(image_size, image_size, num_classes);
    let mut gt_tips = Vec::new();

    for (spec, limit) in devices {
        if spec.class_id == 0 || spec.class_id >= num_classes {
            return Err(Error::InvalidArgument(format!(
                "device class {} out of range",
                spec.class_id
            )));
        }
        let poly = spec.polyline_up_to(0.4, *limit);
        let r = spec.tube_width as f64 / 2.0;
        for &(sx, sy) in &poly {
            let x0 = (sx - r).floor().max(0.0) as u32;
            let x1 = (sx + r).ceil().min(image_size as f64 - 1.0) as u32;
            let y0 = (sy - r).floor().max(0.0) as u32;
            let y1 = (sy + r).ceil().min(image_size as f64 - 1.0) as u32;
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let dx = x as f64 - sx;
                    let dy = y as f64 - sy;
                    if dx * dx + dy * dy <= r * r {
                        mask.set(x, y, spec.class_id);
                    }
                }
            }
        }
        let end_arc = limit.unwrap_or(f64::INFINITY).min(spec.total_arc());
        gt_tips.push(GtTip {
            class_id: spec.class_id,
            t0: *poly.last().unwrap(),
            t1: spec.point_at_arc(end_arc - 5.0),
            t2: spec.point_at_arc(end_arc - 10.0),
        });
    }

    let mut data = Vec::with_capacity(image_size as usize * image_size as usize);
    for y in 0..image_size {
        for x in 0..image_size {
            if mask.get(x, y) != 0 {
                data.push(device_value(x, y, texture_seed));
            } else {
                data.push(background_value(x, y, texture_seed));
            }
        }
    }
    let timestamp_ns = sequence_id.saturating_mul(1_000_000_000 / 24);
    let frame = Frame::new(image_size, image_size, 1, data, sequence_id, timestamp_ns)?;
    Ok(SynthFrameBundle {
        frame,
        gt_mask: mask,
        gt_tips,
        degradation: DegradeRecord::default(),
    })
}

/// Rasterizes a single full curve (frame sequence id 0).
pub fn rasterize(spec: &CurveSpec, image_size: u32) -> Result<SynthFrameBundle> {
    rasterize_devices(&[(spec.clone(), None)], image_size, 0, spec.seed)
}

/// Applies Gaussian intensity noise, contrast compression toward
/// mid-gray, and opaque occluders. Occluded pixels are erased from the
/// ground-truth mask (they are not device evidence); `gt_tips` stay
/// untouched as metadata.
pub fn degrade(
    bundle: &SynthFrameBundle,
    noise_sigma: f64,
    contrast_scale: f64,
    occluders: &[OccluderRect],
    seed: u64,
) -> Result<SynthFrameBundle> {
    if noise_sigma < 0.0 {
        return Err(Error::InvalidArgument("noise_sigma must be >= 0".into()));
    }
    if !(contrast_scale > 0.0 && contrast_scale <= 1.0) {
        return Err(Error::InvalidArgument(
            "contrast_scale must lie in (0, 1]".into(),
        ));
    }
    let frame = &bundle.frame;
    let (w, h) = (frame.width(), frame.height());
    let mut data = frame.data().to_vec();

    if noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, 0x4E01_5E));
        let normal = Normal::new(0.0, noise_sigma).expect("sigma validated");
        for v in data.iter_mut() {
            let n: f64 = normal.sample(&mut rng);
            *v = (*v as f64 + n).round().clamp(0.0, 255.0) as u8;
        }
    }
    if contrast_scale < 1.0 {
        for v in data.iter_mut() {
            *v = (128.0 + (*v as f64 - 128.0) * contrast_scale)
                .round()
                .clamp(0.0, 255.0) as u8;
        }
    }

    let mut labels = bundle.gt_mask.labels().to_vec();
    for occ in occluders {
        for y in occ.y..(occ.y + occ.h).min(h) {
            for x in occ.x..(occ.x + occ.w).min(w) {
                let idx = y as usize * w as usize + x as usize;
                data[idx] = 160; // opaque mid-bright block
                labels[idx] = 0;
            }
        }
    }

    Ok(SynthFrameBundle {
        frame: Frame::new(w, h, 1, data, frame.sequence_id, frame.timestamp_ns)?,
        gt_mask: LabelMap::new(w, h, bundle.gt_mask.num_classes(), labels)?,
        gt_tips: bundle.gt_tips.clone(),
        degradation: DegradeRecord {
            noise_sigma,
            contrast_scale,
            occluders: occluders.to_vec(),
            seed,
        },
    })
}

/// Complexity presets mapping to declared degradation levels:
/// occluder area fractions 0% / 10% / 25%.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DegradePreset {
    Clean,
    Moderate,
    Heavy,
}

impl DegradePreset {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "clean" => Ok(DegradePreset::Clean),
            "moderate" => Ok(DegradePreset::Moderate),
            "heavy" => Ok(DegradePreset::Heavy),
            other => Err(Error::InvalidArgument(format!(
                "unknown preset `{other}` (expected clean|moderate|heavy)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            DegradePreset::Clean => "clean",
            DegradePreset::Moderate => "moderate",
            DegradePreset::Heavy => "heavy",
        }
    }

    fn params(&self) -> (f64, f64, f64, usize) {
        // (noise_sigma, contrast_scale, occluder_area_fraction, n_occluders)
        match self {
            DegradePreset::Clean => (2.0, 1.0, 0.0, 0),
            DegradePreset::Moderate => (6.0, 0.85, 0.10, 3),
            DegradePreset::Heavy => (10.0, 0.70, 0.25, 4),
        }
    }

    /// Occluders for a sequence: fixed across frames (overlapping
    /// anatomy does not flicker), deterministic per seed.
    pub fn occluders(&self, image_size: u32, seed: u64) -> Vec<OccluderRect> {
        let (_, _, fraction, count) = self.params();
        if count == 0 || fraction <= 0.0 {
            return Vec::new();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, 0x0CC1_0DE5));
        let total_area = fraction * (image_size as f64) * (image_size as f64);
        let each = total_area / count as f64;
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let aspect: f64 = rng.random_range(0.5..2.0);
            let w = (each * aspect).sqrt().round().max(4.0) as u32;
            let h = (each / aspect).sqrt().round().max(4.0) as u32;
            let w = w.min(image_size - 1);
            let h = h.min(image_size - 1);
            let x = rng.random_range(0..=image_size - w);
            let y = rng.random_range(0..=image_size - h);
            out.push(OccluderRect { x, y, w, h });
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceOptions {
    pub image_size: u32,
    pub tube_width: u32,
    /// 2 = single instrument class; 3 = catheter + guidewire.
    pub classes: u8,
    pub preset: DegradePreset,
}

impl Default for SequenceOptions {
    fn default() -> Self {
        SequenceOptions {
            image_size: 500,
            tube_width: 5,
            classes: 2,
            preset: DegradePreset::Clean,
        }
    }
}

/// Generates a navigation sequence: the device advances `motion`
/// arc-pixels per frame along a fixed guide path, so the ground-truth
/// tip moves monotonically along the path (clamping at the path's end).
pub fn gen_sequence(
    n_frames: u32,
    motion: f64,
    seed: u64,
    options: &SequenceOptions,
) -> Result<Vec<SynthFrameBundle>> {
    if n_frames < 1 {
        return Err(Error::InvalidArgument("n_frames must be >= 1".into()));
    }
    if motion < 0.0 {
        return Err(Error::InvalidArgument("motion must be >= 0".into()));
    }
    if options.classes != 2 && options.classes != 3 {
        return Err(Error::InvalidArgument("classes must be 2 or 3".into()));
    }
    let mut guides: Vec<CurveSpec> = Vec::new();
    if options.classes == 3 {
        guides.push(gen_curve_with_width(
            options.image_size,
            seed,
            1,
            options.tube_width + 2,
        )?);
        guides.push(gen_curve_with_width(
            options.image_size,
            sub_seed(seed, 2),
            2,
            options.tube_width,
        )?);
    } else {
        guides.push(gen_curve_with_width(
            options.image_size,
            seed,
            1,
            options.tube_width,
        )?);
    }

    let (noise_sigma, contrast_scale, _, _) = options.preset.params();
    let occluders = options.preset.occluders(options.image_size, seed);

    let mut out = Vec::with_capacity(n_frames as usize);
    for k in 0..n_frames {
        let arc = k as f64 * motion;
        let devices: Vec<(CurveSpec, Option<f64>)> = guides
            .iter()
            .map(|g| (g.clone(), Some(arc)))
            .collect();
        let clean = rasterize_devices(&devices, options.image_size, k as u64, seed)?;
        out.push(degrade(
            &clean,
            noise_sigma,
            contrast_scale,
            &occluders,
            sub_seed(seed, 0xF7A3 ^ k as u64),
        )?);
    }
    Ok(out)
}
