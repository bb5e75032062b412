//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line. Run with `cargo test -p tiptrack-cli --test acceptance`
//! (add `-- --nocapture` to see the lines as they print).

use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tiptrack::imgproc::{
    connected_components, BinaryMask, Component, Connectivity, Frame, LabelMap,
};
use tiptrack::io::MemorySource;
use tiptrack::metrics;
use tiptrack::pipeline::{
    measure_throughput, run_pipeline, run_sequential, DropPolicy, PipelineConfig, PipelineMode,
};
use tiptrack::postprocess::{
    detect_endpoints, merge_components, sample_multipoint, skeletonize, PostprocessConfig,
    Skeleton, TipMethod, NEIGHBOR_SCAN_ORDER,
};
use tiptrack::segmentation::{
    plan_tiles, sliding_window_infer, ClassicalSegmenter, OracleSegmenter, Polarity, Segmenter,
};
use tiptrack::synth::{gen_sequence, DegradePreset, SequenceOptions, SynthFrameBundle};

/// Serializes the criteria so timing-sensitive ones run alone.
static GATE: Mutex<()> = Mutex::new(());

fn criterion(name: &str, f: impl FnOnce() -> String + std::panic::UnwindSafe) {
    let _gate = GATE.lock().unwrap_or_else(|poisoned| poisoned.into_inner());
    let outcome = std::panic::catch_unwind(f);
    match outcome {
        Ok(detail) => println!("[acceptance] {name}: PASS ({detail})"),
        Err(e) => {
            println!("[acceptance] {name}: FAIL");
            std::panic::resume_unwind(e);
        }
    }
}

fn clean_sequence_500(frames: u32, seed: u64) -> Vec<SynthFrameBundle> {
    gen_sequence(
        frames,
        2.0,
        seed,
        &SequenceOptions {
            image_size: 500,
            tube_width: 5,
            classes: 2,
            preset: DegradePreset::Clean,
        },
    )
    .unwrap()
}

fn oracle_over(bundles: &[SynthFrameBundle]) -> (Vec<Frame>, OracleSegmenter) {
    let frames: Vec<Frame> = bundles.iter().map(|b| b.frame.clone()).collect();
    let masks: BTreeMap<u64, LabelMap> = bundles
        .iter()
        .map(|b| (b.frame.sequence_id, b.gt_mask.clone()))
        .collect();
    (frames, OracleSegmenter::new(masks).unwrap())
}

#[test]
fn criterion_01_oracle_tracking_accuracy() {
    criterion("1 oracle tracking accuracy (MAE <= 2 px, <= 60 s)", || {
        let started = Instant::now();
        let bundles = clean_sequence_500(200, 7);
        let (frames, oracle) = oracle_over(&bundles);
        let mut tips = Vec::new();
        let stats = run_pipeline(
            &mut MemorySource::new(frames),
            &oracle,
            &PostprocessConfig::default(),
            &PipelineConfig::default(),
            &mut |r| tips.push(r.tips[0]),
        )
        .unwrap();
        assert_eq!(stats.frames_out, 200);
        let gts: Vec<(f64, f64)> = bundles.iter().map(|b| b.gt_tips[0].t0).collect();
        let errors = metrics::tip_errors(&tips, &gts, 1.0).unwrap();
        let elapsed = started.elapsed();
        assert!(
            errors.mae_xy <= 2.0,
            "MAE_xy {} exceeds the 2 px pass line",
            errors.mae_xy
        );
        assert_eq!(errors.n_invalid, 0);
        assert!(
            elapsed <= Duration::from_secs(60),
            "runtime {elapsed:?} exceeds 60 s"
        );
        format!("MAE_xy {:.3} px in {:.1} s", errors.mae_xy, elapsed.as_secs_f64())
    });
}

#[test]
fn criterion_02_occlusion_robustness() {
    criterion("2 occlusion robustness (moderate preset)", || {
        let bundles = gen_sequence(
            200,
            2.0,
            7,
            &SequenceOptions {
                image_size: 500,
                tube_width: 5,
                classes: 2,
                preset: DegradePreset::Moderate,
            },
        )
        .unwrap();
        let (frames, oracle) = oracle_over(&bundles);
        let mut methods = Vec::new();
        run_pipeline(
            &mut MemorySource::new(frames),
            &oracle,
            &PostprocessConfig::default(),
            &PipelineConfig::default(),
            &mut |r| {
                for t in &r.tips {
                    for p in [t.t0, t.t1, t.t2, t.base] {
                        assert!(p.0 < 500 && p.1 < 500, "out-of-bounds point {p:?}");
                    }
                    methods.push(t.method);
                }
            },
        )
        .unwrap();
        assert_eq!(methods.len(), 200, "every frame must return an estimate");
        let tracked = methods
            .iter()
            .filter(|m| matches!(m, TipMethod::Skeleton | TipMethod::ContourFallback))
            .count();
        let fraction = tracked as f64 / methods.len() as f64;
        assert!(
            fraction >= 0.90,
            "only {:.1}% of frames tracked",
            fraction * 100.0
        );
        format!("{:.1}% frames tracked, all points in-bounds", fraction * 100.0)
    });
}

fn random_structured_mask(rng: &mut ChaCha8Rng, max_side: u32) -> BinaryMask {
    let w = rng.random_range(4..=max_side);
    let h = rng.random_range(4..=max_side);
    let mut mask = BinaryMask::zeros(w, h);
    match rng.random_range(0..3) {
        0 => {
            // Bernoulli noise.
            let density = rng.random_range(0.05..0.75);
            for y in 0..h {
                for x in 0..w {
                    if rng.random_bool(density) {
                        mask.set(x, y, true);
                    }
                }
            }
        }
        1 => {
            // A few solid rectangles.
            for _ in 0..rng.random_range(1..6) {
                let x0 = rng.random_range(0..w);
                let y0 = rng.random_range(0..h);
                let bw = rng.random_range(1..=12.min(w));
                let bh = rng.random_range(1..=12.min(h));
                for y in y0..(y0 + bh).min(h) {
                    for x in x0..(x0 + bw).min(w) {
                        mask.set(x, y, true);
                    }
                }
            }
        }
        _ => {
            // Disks plus sparse noise.
            for _ in 0..rng.random_range(1..4) {
                let cx = rng.random_range(0..w) as i64;
                let cy = rng.random_range(0..h) as i64;
                let r = rng.random_range(1..10i64);
                for y in 0..h as i64 {
                    for x in 0..w as i64 {
                        if (x - cx).pow(2) + (y - cy).pow(2) <= r * r {
                            mask.set(x as u32, y as u32, true);
                        }
                    }
                }
            }
            for _ in 0..rng.random_range(0..40) {
                mask.set(rng.random_range(0..w), rng.random_range(0..h), true);
            }
        }
    }
    mask
}

#[test]
fn criterion_03_skeleton_property_suite() {
    criterion("3 skeleton properties (1000 masks <= 128x128)", || {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5CE1E701);
        for i in 0..1000 {
            let mask = random_structured_mask(&mut rng, 128);
            let skel = skeletonize(&mask);
            for &(x, y) in skel.pixels() {
                assert!(mask.get(x, y), "case {i}: skeleton escapes component");
            }
            for y in 0..mask.height().saturating_sub(1) {
                for x in 0..mask.width().saturating_sub(1) {
                    assert!(
                        !(skel.contains(x, y)
                            && skel.contains(x + 1, y)
                            && skel.contains(x, y + 1)
                            && skel.contains(x + 1, y + 1)),
                        "case {i}: 2x2 block at ({x}, {y})"
                    );
                }
            }
            let set: HashSet<(u32, u32)> = skel.pixels().iter().copied().collect();
            let brute: Vec<(u32, u32)> = skel
                .pixels()
                .iter()
                .copied()
                .filter(|&(x, y)| {
                    NEIGHBOR_SCAN_ORDER
                        .iter()
                        .filter(|&&(dx, dy)| {
                            let nx = x as i64 + dx;
                            let ny = y as i64 + dy;
                            nx >= 0 && ny >= 0 && set.contains(&(nx as u32, ny as u32))
                        })
                        .count()
                        == 1
                })
                .collect();
            assert_eq!(detect_endpoints(&skel), brute, "case {i}: endpoint mismatch");
        }
        "1000 masks: unit width, subset, exact endpoints".into()
    });
}

fn partition_of(components: &[Component]) -> Vec<Vec<(u32, u32)>> {
    let mut out: Vec<Vec<(u32, u32)>> = components
        .iter()
        .map(|c| {
            let mut p = c.pixels.clone();
            p.sort_unstable();
            p
        })
        .collect();
    out.sort();
    out
}

#[test]
fn criterion_04_merge_closure_equivalence() {
    criterion("4 merge closure vs brute force (500 instances)", || {
        let mut rng = ChaCha8Rng::seed_from_u64(0xC105_u64);
        for i in 0..500 {
            let mut mask = BinaryMask::zeros(80, 80);
            let n = rng.random_range(1..=10);
            for _ in 0..n {
                let x0 = rng.random_range(0..72);
                let y0 = rng.random_range(0..72);
                let bw = rng.random_range(1..=8);
                let bh = rng.random_range(1..=8);
                for y in y0..(y0 + bh).min(80) {
                    for x in x0..(x0 + bw).min(80) {
                        mask.set(x, y, true);
                    }
                }
            }
            let comps = connected_components(&mask, Connectivity::Eight);
            if comps.len() > 10 {
                continue;
            }
            let d = rng.random_range(0..8);
            let merged = merge_components(comps.clone(), d);

            // Brute-force transitive closure by BFS over the pairwise
            // expanded-bbox relation.
            let m = comps.len();
            let mut adj = vec![vec![false; m]; m];
            for a in 0..m {
                for b in 0..m {
                    adj[a][b] =
                        a != b && comps[a].bbox.expanded_intersects(&comps[b].bbox, d);
                }
            }
            let mut seen = vec![false; m];
            let mut groups = Vec::new();
            for start in 0..m {
                if seen[start] {
                    continue;
                }
                seen[start] = true;
                let mut queue = vec![start];
                let mut pixels = Vec::new();
                while let Some(a) = queue.pop() {
                    pixels.extend(comps[a].pixels.iter().copied());
                    for (b, reach) in adj[a].iter().enumerate() {
                        if *reach && !seen[b] {
                            seen[b] = true;
                            queue.push(b);
                        }
                    }
                }
                pixels.sort_unstable();
                groups.push(pixels);
            }
            groups.sort();
            assert_eq!(partition_of(&merged), groups, "instance {i}");
        }
        "500 instances: exact partition match".into()
    });
}

/// Random 8-connected path whose non-consecutive pixels never touch, so
/// the greedy walk must follow it end to end.
fn random_taut_path(rng: &mut ChaCha8Rng, max_target: usize) -> Vec<(u32, u32)> {
    let target = rng.random_range(2..max_target);
    let mut path = vec![(rng.random_range(20..108u32), rng.random_range(20..108u32))];
    let mut set: HashSet<(u32, u32)> = path.iter().copied().collect();
    'grow: while path.len() < target {
        let (cx, cy) = *path.last().unwrap();
        let mut dirs = NEIGHBOR_SCAN_ORDER.to_vec();
        for i in (1..dirs.len()).rev() {
            dirs.swap(i, rng.random_range(0..=i));
        }
        for (dx, dy) in dirs {
            let nx = cx as i64 + dx;
            let ny = cy as i64 + dy;
            if nx < 1 || ny < 1 || nx > 126 || ny > 126 {
                continue;
            }
            let cand = (nx as u32, ny as u32);
            if set.contains(&cand) {
                continue;
            }
            let touches_old = NEIGHBOR_SCAN_ORDER.iter().any(|&(ax, ay)| {
                let t = ((nx + ax) as u32, (ny + ay) as u32);
                t != (cx, cy) && set.contains(&t)
            });
            if touches_old {
                continue;
            }
            path.push(cand);
            set.insert(cand);
            continue 'grow;
        }
        break;
    }
    path
}

#[test]
fn criterion_05_arc_length_contract() {
    criterion("5 arc-length sampling contract (500 skeletons)", || {
        let sqrt2 = std::f64::consts::SQRT_2;
        let cfg = PostprocessConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0xA2C5);
        let path_arc = |path: &[(u32, u32)]| -> f64 {
            path.windows(2)
                .map(|w| {
                    if w[0].0 != w[1].0 && w[0].1 != w[1].1 {
                        sqrt2
                    } else {
                        1.0
                    }
                })
                .sum()
        };

        // 500 skeletons with arc length >= 12: T1/T2 land in the stated
        // half-open windows.
        let mut long = 0;
        while long < 500 {
            let path = random_taut_path(&mut rng, 120);
            if path_arc(&path) < 12.0 {
                continue;
            }
            let skel = Skeleton::from_pixels(128, 128, path.clone());
            let sample = sample_multipoint(&skel, path[0], &cfg).unwrap();
            assert!(
                sample.t1.arc >= 5.0 && sample.t1.arc < 5.0 + sqrt2,
                "t1 arc {}",
                sample.t1.arc
            );
            assert!(
                sample.t2.arc >= 10.0 && sample.t2.arc < 10.0 + sqrt2,
                "t2 arc {}",
                sample.t2.arc
            );
            long += 1;
        }

        // Shorter skeletons clamp to the far end.
        let mut short = 0;
        while short < 50 {
            let path = random_taut_path(&mut rng, 5);
            if path_arc(&path) >= 5.0 {
                continue;
            }
            let skel = Skeleton::from_pixels(128, 128, path.clone());
            let sample = sample_multipoint(&skel, path[0], &cfg).unwrap();
            assert_eq!(sample.t1.point, *path.last().unwrap());
            assert_eq!(sample.t2.point, *path.last().unwrap());
            short += 1;
        }
        format!("{long} long skeletons in bounds, {short} short ones clamped")
    });
}

#[test]
fn criterion_06_pipeline_equivalence_and_losslessness() {
    criterion("6 pipeline equivalence, order, losslessness, live drops", || {
        // Threaded output must match the sequential composition bit for
        // bit on three seeds.
        for seed in [3u64, 11, 42] {
            let bundles = gen_sequence(
                100,
                2.0,
                seed,
                &SequenceOptions {
                    image_size: 256,
                    tube_width: 5,
                    classes: 2,
                    preset: DegradePreset::Clean,
                },
            )
            .unwrap();
            let (frames, oracle) = oracle_over(&bundles);
            let pp = PostprocessConfig::default();
            let cfg = PipelineConfig::default();

            let mut threaded = Vec::new();
            let stats = run_pipeline(
                &mut MemorySource::new(frames.clone()),
                &oracle,
                &pp,
                &cfg,
                &mut |r| threaded.push((r.frame_sequence_id, r.tips)),
            )
            .unwrap();
            assert_eq!(stats.frames_dropped, 0, "offline mode must be lossless");
            assert_eq!(stats.frames_out, stats.frames_in);
            assert!(
                threaded.windows(2).all(|w| w[0].0 < w[1].0),
                "ids must strictly increase"
            );

            let mut sequential = Vec::new();
            run_sequential(
                &mut MemorySource::new(frames),
                &oracle,
                &pp,
                &cfg,
                &mut |r| sequential.push((r.frame_sequence_id, r.tips)),
            )
            .unwrap();
            assert_eq!(threaded, sequential, "seed {seed}: outputs must be identical");
        }

        // Live-mode stall: a backend 10x slower than the source drops
        // frames while preserving order.
        struct Stalled(OracleSegmenter);
        impl Segmenter for Stalled {
            fn num_classes(&self) -> u8 {
                self.0.num_classes()
            }
            fn segment(&self, f: &Frame) -> tiptrack::Result<tiptrack::imgproc::ProbMap> {
                std::thread::sleep(Duration::from_millis(5));
                self.0.segment(f)
            }
        }
        let bundles = gen_sequence(
            100,
            2.0,
            3,
            &SequenceOptions {
                image_size: 128,
                tube_width: 3,
                classes: 2,
                preset: DegradePreset::Clean,
            },
        )
        .unwrap();
        let (frames, oracle) = oracle_over(&bundles);
        let mut ids = Vec::new();
        let stats = run_pipeline(
            &mut MemorySource::new(frames),
            &Stalled(oracle),
            &PostprocessConfig::default(),
            &PipelineConfig {
                mode: PipelineMode::Live,
                live_drop_policy: DropPolicy::DropOldest,
                queue_capacity: 8,
                ..PipelineConfig::default()
            },
            &mut |r| ids.push(r.frame_sequence_id),
        )
        .unwrap();
        assert!(stats.frames_dropped > 0, "stall test must drop frames");
        assert!(ids.windows(2).all(|w| w[0] < w[1]));
        format!(
            "3 seeds bit-identical; live stall dropped {} of {}",
            stats.frames_dropped, stats.frames_in
        )
    });
}

#[test]
fn criterion_07_throughput() {
    criterion("7 throughput (classical, 500x500, >= 24 fps)", || {
        let bundles = clean_sequence_500(100, 5);
        let frames: Vec<Frame> = bundles.iter().map(|b| b.frame.clone()).collect();
        let backend = ClassicalSegmenter {
            threshold: 100,
            polarity: Polarity::DarkDevice,
            open_radius: 1,
        };
        let deadline = Instant::now() + Duration::from_secs(3);
        let mut source = tiptrack::io::LoopingSource::new(frames, Some(deadline), None);
        let mut n = 0u64;
        let stats = run_pipeline(
            &mut source,
            &backend,
            &PostprocessConfig::default(),
            &PipelineConfig::default(),
            &mut |_r| n += 1,
        )
        .unwrap();
        let fps = measure_throughput(&stats).unwrap();
        assert!(fps >= 24.0, "sustained {fps:.1} fps is below 24");
        format!(
            "{fps:.1} fps; stage p50/p95 ms: read {:.2}/{:.2}, preprocess {:.2}/{:.2}, \
             infer {:.2}/{:.2}, postprocess {:.2}/{:.2}",
            stats.stages.read.p50_ms,
            stats.stages.read.p95_ms,
            stats.stages.preprocess.p50_ms,
            stats.stages.preprocess.p95_ms,
            stats.stages.infer.p50_ms,
            stats.stages.infer.p95_ms,
            stats.stages.postprocess.p50_ms,
            stats.stages.postprocess.p95_ms
        )
    });
}

#[test]
fn criterion_08_metric_correctness() {
    criterion("8 metric correctness (200 maps + MAE contracts)", || {
        let mut rng = ChaCha8Rng::seed_from_u64(0x3E721C5);
        for i in 0..200 {
            let w = rng.random_range(1..=32);
            let h = rng.random_range(1..=32);
            let k: u8 = if rng.random_bool(0.5) { 2 } else { 3 };
            let mk = |rng: &mut ChaCha8Rng| {
                let labels = (0..w as usize * h as usize)
                    .map(|_| rng.random_range(0..k))
                    .collect();
                LabelMap::new(w, h, k, labels).unwrap()
            };
            let pred = mk(&mut rng);
            let gt = mk(&mut rng);
            let scores = metrics::seg_scores(&pred, &gt).unwrap();
            for &(c, got) in &scores.per_class {
                // Brute-force confusion counts.
                let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
                for y in 0..h {
                    for x in 0..w {
                        match (pred.get(x, y) == c, gt.get(x, y) == c) {
                            (true, true) => tp += 1,
                            (true, false) => fp += 1,
                            (false, true) => fn_ += 1,
                            _ => {}
                        }
                    }
                }
                if tp + fp + fn_ == 0 {
                    assert_eq!(got.dice, 1.0, "case {i}");
                } else if tp == 0 && (fp == 0 || fn_ == 0) {
                    assert_eq!(got.dice, 0.0, "case {i}");
                } else {
                    let dice = 2.0 * tp as f64 / (2.0 * tp as f64 + (fp + fn_) as f64);
                    let iou = tp as f64 / (tp + fp + fn_) as f64;
                    assert_eq!(got.dice, dice, "case {i} class {c}");
                    assert_eq!(got.iou, iou, "case {i} class {c}");
                    assert_eq!(got.precision, tp as f64 / (tp + fp) as f64);
                    assert_eq!(got.recall, tp as f64 / (tp + fn_) as f64);
                }
            }
        }

        // 3-4-5 example.
        let e = metrics::tip_errors_from_points(&[((13.0, 14.0), true)], &[(10.0, 10.0)], 1.0)
            .unwrap();
        assert!((e.mae_x, e.mae_y, e.mae_xy) == (3.0, 4.0, 5.0));

        // Bound chain on random inputs.
        for _ in 0..200 {
            let n = rng.random_range(1..=16);
            let preds: Vec<((f64, f64), bool)> = (0..n)
                .map(|_| {
                    (
                        (rng.random_range(0.0..100.0), rng.random_range(0.0..100.0)),
                        true,
                    )
                })
                .collect();
            let gts: Vec<(f64, f64)> = (0..n)
                .map(|_| (rng.random_range(0.0..100.0), rng.random_range(0.0..100.0)))
                .collect();
            let e = metrics::tip_errors_from_points(&preds, &gts, 1.0).unwrap();
            assert!(e.mae_x.max(e.mae_y) <= e.mae_xy + 1e-9);
            assert!(e.mae_xy <= e.mae_x + e.mae_y + 1e-9);
        }
        "200 maps exact; 3-4-5 and bound chain hold".into()
    });
}

#[test]
fn criterion_09_tiling() {
    criterion("9 tiling coverage, 3x3 grid, overlap averaging", || {
        let mut rng = ChaCha8Rng::seed_from_u64(0x711E5);
        for _ in 0..300 {
            let w = rng.random_range(1..=2048);
            let h = rng.random_range(1..=2048);
            let tile = rng.random_range(2..=700);
            let overlap = rng.random_range(0..tile);
            let grid = plan_tiles(w, h, tile, overlap).unwrap();
            let (tw, th) = grid.tile_dims(w, h);
            let mut covered = vec![false; (w as usize) * (h as usize)];
            for &(ox, oy) in &grid.origins {
                assert!(ox + tw <= w && oy + th <= h);
                for y in oy..oy + th {
                    let row = y as usize * w as usize;
                    for x in ox..ox + tw {
                        covered[row + x as usize] = true;
                    }
                }
            }
            assert!(covered.iter().all(|&c| c), "{w}x{h}/{tile}/{overlap}");
        }

        let grid = plan_tiles(1024, 1024, 512, 256).unwrap();
        assert_eq!(grid.origins.len(), 9);

        // Disagreement averaging: 1.0 vs 0.0 -> 0.5 on the overlap.
        struct ByOrigin;
        impl Segmenter for ByOrigin {
            fn num_classes(&self) -> u8 {
                2
            }
            fn segment(&self, f: &Frame) -> tiptrack::Result<tiptrack::imgproc::ProbMap> {
                let fg = if f.luminance(0, 0) > 0 { 1.0f32 } else { 0.0 };
                let n = f.width() as usize * f.height() as usize;
                let mut probs = Vec::with_capacity(n * 2);
                for _ in 0..n {
                    probs.push(1.0 - fg);
                    probs.push(fg);
                }
                tiptrack::imgproc::ProbMap::new(f.width(), f.height(), 2, probs)
            }
        }
        let mut data = vec![0u8; 8 * 4];
        data[0] = 255;
        let frame = Frame::new(8, 4, 1, data, 0, 0).unwrap();
        let grid = plan_tiles(8, 4, 6, 4).unwrap();
        let probs = sliding_window_infer(&frame, &ByOrigin, &grid).unwrap();
        for x in 2..6 {
            assert!((probs.get(x, 1, 1) - 0.5).abs() < 1e-6);
        }
        "300 geometries covered; 9-tile grid; 0.5 averaging".into()
    });
}

fn tree_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

#[test]
fn criterion_10_reproducibility() {
    criterion("10 reproducibility of synth and track artifacts", || {
        let bin = env!("CARGO_BIN_EXE_tiptrack");
        let root = tempfile::tempdir().unwrap();
        let ds_a = root.path().join("ds_a");
        let ds_b = root.path().join("ds_b");
        for out in [&ds_a, &ds_b] {
            let status = std::process::Command::new(bin)
                .args([
                    "synth", "--preset", "moderate", "--frames", "25", "--seed", "9",
                    "--size", "256", "--width", "5",
                ])
                .arg("--out")
                .arg(out)
                .status()
                .unwrap();
            assert!(status.success());
        }
        let a = tree_bytes(&ds_a);
        let b = tree_bytes(&ds_b);
        assert_eq!(
            a.keys().collect::<Vec<_>>(),
            b.keys().collect::<Vec<_>>(),
            "dataset layouts differ"
        );
        for (name, bytes) in &a {
            assert_eq!(bytes, &b[name], "{name} differs between runs");
        }

        // Track twice over the same dataset with the oracle backend.
        let tips_a = root.path().join("tips_a.csv");
        let tips_b = root.path().join("tips_b.csv");
        for tips in [&tips_a, &tips_b] {
            let status = std::process::Command::new(bin)
                .arg("track")
                .arg("--input")
                .arg(ds_a.join("frames"))
                .arg("--masks")
                .arg(ds_a.join("masks"))
                .args(["--backend", "oracle"])
                .arg("--output")
                .arg(tips)
                .arg("--stats")
                .arg(root.path().join("stats.json"))
                .status()
                .unwrap();
            assert!(status.success());
        }
        assert_eq!(
            std::fs::read(&tips_a).unwrap(),
            std::fs::read(&tips_b).unwrap(),
            "tips.csv differs between identical runs"
        );
        format!("{} dataset files and tips.csv byte-identical", a.len())
    });
}
