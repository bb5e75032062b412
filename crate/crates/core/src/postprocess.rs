//! Mask refinement and tip extraction.
//!
//! The post-processor turns a per-frame label map into per-class tip
//! estimates: binary conversion, component merging, principal-structure
//! selection, artifact filtering, thinning to a medial axis, endpoint
//! detection, base/tip selection with a contour fallback, and greedy
//! arc-length multi-point sampling of T0/T1/T2.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::imgproc::{
    connected_components, to_binary, BinaryMask, Component, Connectivity, LabelMap, ProbMap,
};
use crate::union_find::UnionFind;

/// Tunable thresholds of the post-processor.
///
/// Defaults target 500x500 frames; `d_merge`, `a_min`, and `d_max` are
/// per-dataset tuning knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct PostprocessConfig {
    /// Bounding-box merge distance in pixels.
    pub d_merge: u32,
    /// Minimum component area in pixels² for non-principal survivors.
    pub a_min: u32,
    /// Maximum centroid distance in pixels from the principal tip hint.
    pub d_max: f64,
    /// Arc length from the tip to T1, in pixels.
    pub arc_t1: f64,
    /// Arc length from the tip to T2, in pixels.
    pub arc_t2: f64,
    /// Reach tolerance for principal selection, as a fraction of image
    /// height.
    pub reach_delta: f64,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        PostprocessConfig {
            d_merge: 10,
            a_min: 20,
            d_max: 150.0,
            arc_t1: 5.0,
            arc_t2: 10.0,
            reach_delta: 0.10,
        }
    }
}

impl PostprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_max <= 0.0 {
            return Err(Error::InvalidArgument("d_max must be > 0".into()));
        }
        if !(self.arc_t1 > 0.0 && self.arc_t1 < self.arc_t2) {
            return Err(Error::InvalidArgument(
                "arc thresholds must satisfy 0 < arc_t1 < arc_t2".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.reach_delta) {
            return Err(Error::InvalidArgument(
                "reach_delta must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// One-pixel-wide pixel set with 8-neighbor adjacency.
///
/// Produced by [`skeletonize`]; also used as the walkable graph for the
/// contour fallback (where the pixel set is a region boundary rather
/// than a medial axis).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Skeleton {
    width: u32,
    height: u32,
    mask: Vec<bool>,
    /// Member pixels sorted by (y, x).
    pixels: Vec<(u32, u32)>,
}

/// 8-neighborhood scan order used for deterministic tie-breaks:
/// N, NE, E, SE, S, SW, W, NW.
pub const NEIGHBOR_SCAN_ORDER: [(i64, i64); 8] = [
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
];

impl Skeleton {
    pub fn from_pixels(width: u32, height: u32, mut pixels: Vec<(u32, u32)>) -> Skeleton {
        pixels.sort_unstable_by_key(|&(x, y)| (y, x));
        pixels.dedup();
        let mut mask = vec![false; width as usize * height as usize];
        for &(x, y) in &pixels {
            mask[y as usize * width as usize + x as usize] = true;
        }
        Skeleton {
            width,
            height,
            mask,
            pixels,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    /// Member pixels sorted by (y, x).
    pub fn pixels(&self) -> &[(u32, u32)] {
        &self.pixels
    }

    #[inline]
    pub fn contains(&self, x: u32, y: u32) -> bool {
        x < self.width && y < self.height && self.mask[y as usize * self.width as usize + x as usize]
    }

    /// 8-neighbors of `(x, y)` that belong to the skeleton, in scan order.
    pub fn neighbors(&self, x: u32, y: u32) -> Vec<(u32, u32)> {
        let mut out = Vec::with_capacity(8);
        for (dx, dy) in NEIGHBOR_SCAN_ORDER {
            let nx = x as i64 + dx;
            let ny = y as i64 + dy;
            if nx < 0 || ny < 0 || nx >= self.width as i64 || ny >= self.height as i64 {
                continue;
            }
            if self.contains(nx as u32, ny as u32) {
                out.push((nx as u32, ny as u32));
            }
        }
        out
    }

    pub fn neighbor_count(&self, x: u32, y: u32) -> usize {
        self.neighbors(x, y).len()
    }
}

/// A tracked tip with its two downstream stabilization points.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TipMethod {
    /// Tip came from skeleton endpoint selection.
    Skeleton,
    /// Fewer than two skeleton endpoints; contour-based detection.
    ContourFallback,
    /// Empty foreground; coordinates are placeholders.
    Degenerate,
}

impl TipMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            TipMethod::Skeleton => "skeleton",
            TipMethod::ContourFallback => "contour_fallback",
            TipMethod::Degenerate => "degenerate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TipEstimate {
    pub class_id: u8,
    /// Primary tip T0.
    pub t0: (u32, u32),
    /// Downstream point at arc length >= arc_t1 from T0.
    pub t1: (u32, u32),
    /// Downstream point at arc length >= arc_t2 from T0.
    pub t2: (u32, u32),
    /// Proximal end of the device (entry side).
    pub base: (u32, u32),
    pub method: TipMethod,
    pub valid: bool,
    pub frame_sequence_id: u64,
}

impl TipEstimate {
    pub fn degenerate(class_id: u8, frame_sequence_id: u64) -> TipEstimate {
        TipEstimate {
            class_id,
            t0: (0, 0),
            t1: (0, 0),
            t2: (0, 0),
            base: (0, 0),
            method: TipMethod::Degenerate,
            valid: false,
            frame_sequence_id,
        }
    }
}

fn dist2(a: (u32, u32), b: (u32, u32)) -> u64 {
    let dx = a.0 as i64 - b.0 as i64;
    let dy = a.1 as i64 - b.1 as i64;
    (dx * dx + dy * dy) as u64
}

/// Merges components whose bounding boxes, each expanded by `d_merge` on
/// all sides, intersect — transitively, via union-find.
pub fn merge_components(components: Vec<Component>, d_merge: u32) -> Vec<Component> {
    let n = components.len();
    if n <= 1 {
        return components;
    }
    let mut uf = UnionFind::new(n);
    for i in 0..n {
        for j in i + 1..n {
            if components[i]
                .bbox
                .expanded_intersects(&components[j].bbox, d_merge)
            {
                uf.union(i as u32, j as u32);
            }
        }
    }
    let mut groups: Vec<Vec<(u32, u32)>> = vec![Vec::new(); n];
    for (i, comp) in components.into_iter().enumerate() {
        let root = uf.find(i as u32) as usize;
        groups[root].extend(comp.pixels);
    }
    let mut merged: Vec<Component> = groups
        .into_iter()
        .filter(|g| !g.is_empty())
        .map(|pixels| Component::from_pixels(pixels).expect("non-empty group"))
        .collect();
    merged.sort_by_key(|c| (c.bbox.y_min, c.bbox.x_min, c.pixels[0].1, c.pixels[0].0));
    merged
}

/// Selects the principal structure: among components whose bounding box
/// reaches within `reach_delta * image_height` of the deepest reach
/// toward the inferior margin, the one with the largest area.
///
/// Returns an index into `components`. Ties break toward larger
/// `bbox.y_max`, then earlier (y_min, x_min) order.
pub fn select_principal(
    components: &[Component],
    image_height: u32,
    reach_delta: f64,
) -> Result<usize> {
    if components.is_empty() {
        return Err(Error::NoPrincipal);
    }
    let global_reach = components.iter().map(|c| c.bbox.y_max).max().unwrap();
    let threshold = global_reach as f64 - reach_delta * image_height as f64;
    let mut best: Option<usize> = None;
    for (i, c) in components.iter().enumerate() {
        if (c.bbox.y_max as f64) < threshold {
            continue;
        }
        best = match best {
            None => Some(i),
            Some(b) => {
                let cur = &components[b];
                if c.area > cur.area || (c.area == cur.area && c.bbox.y_max > cur.bbox.y_max) {
                    Some(i)
                } else {
                    Some(b)
                }
            }
        };
    }
    Ok(best.expect("at least one component passes its own reach"))
}

/// Drops small or distant artifacts: keeps the principal component
/// unconditionally plus every other component with `area >= a_min` whose
/// centroid lies within `d_max` of the tip hint.
pub fn filter_artifacts(
    components: Vec<Component>,
    principal_idx: usize,
    tip_hint: (f64, f64),
    a_min: u32,
    d_max: f64,
) -> Vec<Component> {
    components
        .into_iter()
        .enumerate()
        .filter(|(i, c)| {
            if *i == principal_idx {
                return true;
            }
            if c.area < a_min as usize {
                return false;
            }
            let dx = c.centroid.0 - tip_hint.0;
            let dy = c.centroid.1 - tip_hint.1;
            (dx * dx + dy * dy).sqrt() <= d_max
        })
        .map(|(_, c)| c)
        .collect()
}

// Zhang-Suen neighborhood: p2..p9 clockwise from north.
#[inline]
fn zs_neighbors(grid: &[bool], gw: usize, idx: usize) -> [bool; 8] {
    [
        grid[idx - gw],     // N
        grid[idx - gw + 1], // NE
        grid[idx + 1],      // E
        grid[idx + gw + 1], // SE
        grid[idx + gw],     // S
        grid[idx + gw - 1], // SW
        grid[idx - 1],      // W
        grid[idx - gw - 1], // NW
    ]
}

#[inline]
fn zs_transitions(n: &[bool; 8]) -> u32 {
    let mut count = 0;
    for i in 0..8 {
        if !n[i] && n[(i + 1) % 8] {
            count += 1;
        }
    }
    count
}

/// Number of 8-connected groups formed by the foreground pixels of a
/// punctured 3x3 neighborhood.
fn ring_component_count(n: &[bool; 8]) -> usize {
    // Ring positions in scan order N, NE, E, SE, S, SW, W, NW with their
    // coordinates relative to the center.
    const POS: [(i64, i64); 8] = [
        (0, -1),
        (1, -1),
        (1, 0),
        (1, 1),
        (0, 1),
        (-1, 1),
        (-1, 0),
        (-1, -1),
    ];
    let mut uf = UnionFind::new(8);
    for i in 0..8 {
        if !n[i] {
            continue;
        }
        for j in i + 1..8 {
            if !n[j] {
                continue;
            }
            let (dx, dy) = (POS[i].0 - POS[j].0, POS[i].1 - POS[j].1);
            if dx.abs() <= 1 && dy.abs() <= 1 {
                uf.union(i as u32, j as u32);
            }
        }
    }
    let mut roots = HashSet::new();
    for i in 0..8u32 {
        if n[i as usize] {
            roots.insert(uf.find(i));
        }
    }
    roots.len()
}

/// Removes one pixel of every remaining 2x2 solid block, preferring
/// pixels whose deletion keeps the local neighborhood connected.
fn cleanup_2x2(grid: &mut [bool], gw: usize, gh: usize) {
    loop {
        let mut deleted = false;
        'scan: for y in 1..gh - 2 {
            for x in 1..gw - 2 {
                let idx = y * gw + x;
                if !(grid[idx] && grid[idx + 1] && grid[idx + gw] && grid[idx + gw + 1]) {
                    continue;
                }
                let members = [idx, idx + 1, idx + gw, idx + gw + 1];
                let mut victim = None;
                let mut best_rank = 0u8;
                for &m in &members {
                    let n = zs_neighbors(grid, gw, m);
                    let b = n.iter().filter(|&&v| v).count();
                    let simple = ring_component_count(&n) == 1;
                    // Prefer removable pixels that neither disconnect the
                    // neighborhood nor shorten an arc end.
                    let rank = match (simple, b > 1) {
                        (true, true) => 3,
                        (true, false) => 2,
                        _ => 1,
                    };
                    if rank > best_rank {
                        best_rank = rank;
                        victim = Some(m);
                    }
                }
                grid[victim.expect("block has members")] = false;
                deleted = true;
                break 'scan;
            }
        }
        if !deleted {
            return;
        }
    }
}

/// Thins a binary mask to a one-pixel-wide medial axis with Zhang-Suen
/// two-subiteration thinning, run to a fixed point, followed by a
/// residual 2x2-block cleanup so the unit-width invariant holds on every
/// input.
pub fn skeletonize(mask: &BinaryMask) -> Skeleton {
    let pixels = mask.foreground_pixels();
    if pixels.is_empty() {
        return Skeleton::from_pixels(mask.width(), mask.height(), Vec::new());
    }
    let x_min = pixels.iter().map(|p| p.0).min().unwrap();
    let x_max = pixels.iter().map(|p| p.0).max().unwrap();
    let y_min = pixels.iter().map(|p| p.1).min().unwrap();
    let y_max = pixels.iter().map(|p| p.1).max().unwrap();

    // Work on the padded bounding box so neighbor reads need no bounds
    // checks.
    let gw = (x_max - x_min + 3) as usize;
    let gh = (y_max - y_min + 3) as usize;
    let mut grid = vec![false; gw * gh];
    for &(x, y) in &pixels {
        grid[(y - y_min + 1) as usize * gw + (x - x_min + 1) as usize] = true;
    }

    let mut deletions = Vec::new();
    let mut changed = true;
    while changed {
        changed = false;
        for phase in 0..2 {
            deletions.clear();
            for y in 1..gh - 1 {
                for x in 1..gw - 1 {
                    let idx = y * gw + x;
                    if !grid[idx] {
                        continue;
                    }
                    let n = zs_neighbors(&grid, gw, idx);
                    let b = n.iter().filter(|&&v| v).count();
                    if !(2..=6).contains(&b) || zs_transitions(&n) != 1 {
                        continue;
                    }
                    let (p2, p4, p6, p8) = (n[0], n[2], n[4], n[6]);
                    let ok = if phase == 0 {
                        !(p2 && p4 && p6) && !(p4 && p6 && p8)
                    } else {
                        !(p2 && p4 && p8) && !(p2 && p6 && p8)
                    };
                    if ok {
                        deletions.push(idx);
                    }
                }
            }
            for &idx in &deletions {
                grid[idx] = false;
            }
            if !deletions.is_empty() {
                changed = true;
            }
        }
    }

    cleanup_2x2(&mut grid, gw, gh);

    let mut out = Vec::new();
    for y in 1..gh - 1 {
        for x in 1..gw - 1 {
            if grid[y * gw + x] {
                out.push((x as u32 - 1 + x_min, y as u32 - 1 + y_min));
            }
        }
    }
    Skeleton::from_pixels(mask.width(), mask.height(), out)
}

/// Skeleton pixels with exactly one 8-connected skeleton neighbor,
/// in (y, x) order.
pub fn detect_endpoints(skeleton: &Skeleton) -> Vec<(u32, u32)> {
    skeleton
        .pixels()
        .iter()
        .copied()
        .filter(|&(x, y)| skeleton.neighbor_count(x, y) == 1)
        .collect()
}

/// Picks the device base and tip from skeleton endpoints.
///
/// The base is the endpoint closest to the inferior margin (maximum y,
/// tie-break minimum x) — devices enter the field of view from the
/// bottom edge. The tip is the endpoint farthest from the base in
/// Euclidean distance (tie-break smaller y, then smaller x).
pub fn select_base_and_tip(endpoints: &[(u32, u32)]) -> Result<((u32, u32), (u32, u32))> {
    if endpoints.len() < 2 {
        return Err(Error::FallbackRequired);
    }
    let base = *endpoints
        .iter()
        .max_by_key(|&&(x, y)| (y, std::cmp::Reverse(x)))
        .unwrap();
    let tip = *endpoints
        .iter()
        .max_by_key(|&&p| {
            (
                dist2(p, base),
                std::cmp::Reverse(p.1),
                std::cmp::Reverse(p.0),
            )
        })
        .unwrap();
    Ok((base, tip))
}

fn boundary_pixels_of(set: &HashSet<(u32, u32)>) -> Vec<(u32, u32)> {
    let mut out: Vec<(u32, u32)> = set
        .iter()
        .copied()
        .filter(|&(x, y)| {
            NEIGHBOR_SCAN_ORDER.iter().any(|&(dx, dy)| {
                let nx = x as i64 + dx;
                let ny = y as i64 + dy;
                nx < 0 || ny < 0 || !set.contains(&(nx as u32, ny as u32))
            })
        })
        .collect();
    out.sort_unstable_by_key(|&(x, y)| (y, x));
    out
}

fn base_and_boundary_tip(pixels: &[(u32, u32)]) -> ((u32, u32), (u32, u32)) {
    let set: HashSet<(u32, u32)> = pixels.iter().copied().collect();
    let base = *pixels
        .iter()
        .max_by_key(|&&(x, y)| (y, std::cmp::Reverse(x)))
        .expect("non-empty region");
    let boundary = boundary_pixels_of(&set);
    let tip = *boundary
        .iter()
        .max_by_key(|&&p| {
            (
                dist2(p, base),
                std::cmp::Reverse(p.1),
                std::cmp::Reverse(p.0),
            )
        })
        .expect("boundary of non-empty region is non-empty");
    (base, tip)
}

/// Contour-based base/tip detection for regions whose skeleton yields
/// fewer than two endpoints (cycles, blobs, single pixels).
///
/// The base anchor is the pixel closest to the inferior margin (maximum
/// y, tie-break minimum x); the tip is the boundary pixel — a pixel with
/// fewer than eight foreground neighbors — farthest from the base, with
/// the same tie-breaks as endpoint selection.
pub fn contour_fallback_tip(component: &Component) -> ((u32, u32), (u32, u32)) {
    base_and_boundary_tip(&component.pixels)
}

/// A walk point together with the cumulative arc length at which it was
/// reached.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArcSample {
    pub point: (u32, u32),
    pub arc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultipointSample {
    pub t1: ArcSample,
    pub t2: ArcSample,
}

/// Walks greedily from `tip` along unvisited skeleton neighbors and
/// samples the first pixels at cumulative arc length `>= arc_t1` and
/// `>= arc_t2` (step cost 1 orthogonal, sqrt(2) diagonal).
///
/// At branch pixels the walk prefers the unvisited neighbor farthest
/// from the tip; remaining ties fall back to N, NE, E, SE, S, SW, W, NW
/// scan order. If the walk ends before a threshold is reached, the
/// missing samples clamp to the last visited pixel.
pub fn sample_multipoint(
    skeleton: &Skeleton,
    tip: (u32, u32),
    config: &PostprocessConfig,
) -> Result<MultipointSample> {
    if !skeleton.contains(tip.0, tip.1) {
        return Err(Error::InvalidArgument(format!(
            "tip ({}, {}) is not a skeleton pixel",
            tip.0, tip.1
        )));
    }
    let mut visited: HashSet<(u32, u32)> = HashSet::new();
    visited.insert(tip);
    let mut current = tip;
    let mut cum = 0.0f64;
    let mut t1: Option<ArcSample> = None;
    let mut t2: Option<ArcSample> = None;

    loop {
        let mut next: Option<(u32, u32)> = None;
        let mut next_d2 = 0u64;
        for (nx, ny) in skeleton.neighbors(current.0, current.1) {
            if visited.contains(&(nx, ny)) {
                continue;
            }
            let d2 = dist2((nx, ny), tip);
            // Scan order settles exact-distance ties: the first candidate
            // at a given distance wins.
            if next.is_none() || d2 > next_d2 {
                next = Some((nx, ny));
                next_d2 = d2;
            }
        }
        let Some(step_to) = next else {
            break;
        };
        let diagonal = step_to.0 != current.0 && step_to.1 != current.1;
        cum += if diagonal { std::f64::consts::SQRT_2 } else { 1.0 };
        current = step_to;
        visited.insert(current);
        if t1.is_none() && cum >= config.arc_t1 {
            t1 = Some(ArcSample {
                point: current,
                arc: cum,
            });
        }
        if t2.is_none() && cum >= config.arc_t2 {
            t2 = Some(ArcSample {
                point: current,
                arc: cum,
            });
            break;
        }
    }

    // Clamp unreached samples to the walk's far end.
    let last = ArcSample {
        point: current,
        arc: cum,
    };
    Ok(MultipointSample {
        t1: t1.unwrap_or(last),
        t2: t2.unwrap_or(last),
    })
}

fn extract_tip_for_class(
    map: &LabelMap,
    class_id: u8,
    config: &PostprocessConfig,
    previous_hint: Option<(f64, f64)>,
    sequence_id: u64,
) -> Result<TipEstimate> {
    let mask = to_binary(map, &[class_id])?;
    let comps = connected_components(&mask, Connectivity::Eight);
    if comps.is_empty() {
        return Ok(TipEstimate::degenerate(class_id, sequence_id));
    }
    let merged = merge_components(comps, config.d_merge);
    let principal_idx = select_principal(&merged, map.height(), config.reach_delta)?;
    let hint = previous_hint.unwrap_or_else(|| {
        let (x, y) = merged[principal_idx].bottom_most_pixel();
        (x as f64, y as f64)
    });
    let kept = filter_artifacts(merged, principal_idx, hint, config.a_min, config.d_max);

    // Survivors passed the proximity test; they contribute to the
    // skeletonization input together with the principal region.
    let mut region_pixels: Vec<(u32, u32)> = Vec::new();
    let mut region_mask = BinaryMask::zeros(map.width(), map.height());
    for comp in &kept {
        for &(x, y) in &comp.pixels {
            region_mask.set(x, y, true);
            region_pixels.push((x, y));
        }
    }
    region_pixels.sort_unstable_by_key(|&(x, y)| (y, x));

    let skeleton = skeletonize(&region_mask);
    let endpoints = detect_endpoints(&skeleton);

    let (base, tip, method, walk_graph) = match select_base_and_tip(&endpoints) {
        Ok((base, tip)) => (base, tip, TipMethod::Skeleton, skeleton),
        Err(Error::FallbackRequired) => {
            let (base, tip) = base_and_boundary_tip(&region_pixels);
            let set: HashSet<(u32, u32)> = region_pixels.iter().copied().collect();
            let boundary = boundary_pixels_of(&set);
            (
                base,
                tip,
                TipMethod::ContourFallback,
                Skeleton::from_pixels(map.width(), map.height(), boundary),
            )
        }
        Err(e) => return Err(e),
    };

    let sample = sample_multipoint(&walk_graph, tip, config)?;
    Ok(TipEstimate {
        class_id,
        t0: tip,
        t1: sample.t1.point,
        t2: sample.t2.point,
        base,
        method,
        valid: true,
        frame_sequence_id: sequence_id,
    })
}

/// Runs the full post-processing chain on a label map and returns one
/// tip estimate per device class (class 1 for two-class maps; classes 1
/// and 2 for three-class maps).
///
/// `previous` supplies the prior frame's estimates; a valid previous tip
/// for a class anchors that class's artifact-distance filter, otherwise
/// the principal component's bottom-most pixel is used.
pub fn extract_tips(
    map: &LabelMap,
    config: &PostprocessConfig,
    previous: &[TipEstimate],
    sequence_id: u64,
) -> Result<Vec<TipEstimate>> {
    config.validate()?;
    let classes: Vec<u8> = (1..map.num_classes()).collect();
    let mut out = Vec::with_capacity(classes.len());
    for class_id in classes {
        let hint = previous
            .iter()
            .find(|p| p.class_id == class_id && p.valid)
            .map(|p| (p.t0.0 as f64, p.t0.1 as f64));
        out.push(extract_tip_for_class(
            map,
            class_id,
            config,
            hint,
            sequence_id,
        )?);
    }
    Ok(out)
}

/// [`extract_tips`] over a probability map (argmax labels first).
pub fn extract_tips_prob(
    map: &ProbMap,
    config: &PostprocessConfig,
    previous: &[TipEstimate],
    sequence_id: u64,
) -> Result<Vec<TipEstimate>> {
    extract_tips(&map.argmax_labels(), config, previous, sequence_id)
}
