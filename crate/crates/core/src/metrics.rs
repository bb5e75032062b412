//! Segmentation and tracking evaluation, plus report emission.

use std::collections::BTreeMap;

use serde_json::json;

use crate::error::{Error, Result};
use crate::imgproc::LabelMap;
use crate::pipeline::PipelineStats;
use crate::postprocess::TipEstimate;

/// Overlap metrics for one class (all in [0, 1]).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassScores {
    pub dice: f64,
    pub iou: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ClassScores {
    fn all(v: f64) -> ClassScores {
        ClassScores {
            dice: v,
            iou: v,
            precision: v,
            recall: v,
            f1: v,
        }
    }
}

/// Per-class scores plus their macro mean over foreground classes.
#[derive(Debug, Clone, PartialEq)]
pub struct SegScores {
    /// (class_id, scores) for every foreground class.
    pub per_class: Vec<(u8, ClassScores)>,
    pub mean: ClassScores,
}

/// Pixel-set overlap metrics per foreground class.
///
/// Conventions: a class empty in both masks scores 1.0 across the
/// board (keeps per-video means defined); empty in exactly one mask
/// scores 0.0.
pub fn seg_scores(pred: &LabelMap, gt: &LabelMap) -> Result<SegScores> {
    if pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(Error::InvalidArgument(format!(
            "dimension mismatch: pred {}x{} vs gt {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    if pred.num_classes() != gt.num_classes() {
        return Err(Error::InvalidArgument(format!(
            "class count mismatch: pred {} vs gt {}",
            pred.num_classes(),
            gt.num_classes()
        )));
    }
    let k = pred.num_classes();
    let mut tp = vec![0u64; k as usize];
    let mut fp = vec![0u64; k as usize];
    let mut fn_ = vec![0u64; k as usize];
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        if p == g {
            tp[p as usize] += 1;
        } else {
            fp[p as usize] += 1;
            fn_[g as usize] += 1;
        }
    }

    let mut per_class = Vec::new();
    for c in 1..k {
        let (tp, fp, fn_) = (tp[c as usize], fp[c as usize], fn_[c as usize]);
        let scores = if tp + fp + fn_ == 0 {
            ClassScores::all(1.0)
        } else if tp == 0 && (fp == 0 || fn_ == 0) {
            // Class present in exactly one of the masks.
            ClassScores::all(0.0)
        } else {
            let dice = 2.0 * tp as f64 / (2.0 * tp as f64 + fp as f64 + fn_ as f64);
            ClassScores {
                dice,
                iou: tp as f64 / (tp + fp + fn_) as f64,
                precision: tp as f64 / (tp + fp) as f64,
                recall: tp as f64 / (tp + fn_) as f64,
                f1: dice,
            }
        };
        per_class.push((c, scores));
    }

    let n = per_class.len() as f64;
    let mean = ClassScores {
        dice: per_class.iter().map(|(_, s)| s.dice).sum::<f64>() / n,
        iou: per_class.iter().map(|(_, s)| s.iou).sum::<f64>() / n,
        precision: per_class.iter().map(|(_, s)| s.precision).sum::<f64>() / n,
        recall: per_class.iter().map(|(_, s)| s.recall).sum::<f64>() / n,
        f1: per_class.iter().map(|(_, s)| s.f1).sum::<f64>() / n,
    };
    Ok(SegScores { per_class, mean })
}

/// Tip localization error summary. Units follow the pixel spacing used
/// (millimeters, or pixels at spacing 1.0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TipErrors {
    pub mae_x: f64,
    pub mae_y: f64,
    pub mae_xy: f64,
    /// Aligned prediction/reference pairs examined.
    pub n_frames: usize,
    /// Degenerate predictions excluded from the means.
    pub n_invalid: usize,
}

/// Core MAE computation over aligned (prediction, validity) / reference
/// pairs.
pub fn tip_errors_from_points(
    preds: &[((f64, f64), bool)],
    gts: &[(f64, f64)],
    spacing_mm: f64,
) -> Result<TipErrors> {
    if preds.len() != gts.len() {
        return Err(Error::InvalidArgument(format!(
            "prediction/reference length mismatch: {} vs {}",
            preds.len(),
            gts.len()
        )));
    }
    if spacing_mm <= 0.0 {
        return Err(Error::InvalidArgument("pixel spacing must be > 0".into()));
    }
    let mut n_valid = 0usize;
    let (mut sx, mut sy, mut sxy) = (0.0f64, 0.0f64, 0.0f64);
    for (&(p, valid), &g) in preds.iter().zip(gts) {
        if !valid {
            continue;
        }
        let dx = (p.0 - g.0).abs();
        let dy = (p.1 - g.1).abs();
        sx += dx;
        sy += dy;
        sxy += (dx * dx + dy * dy).sqrt();
        n_valid += 1;
    }
    if n_valid == 0 {
        return Err(Error::UndefinedMetric(
            "no valid prediction/reference pairs".into(),
        ));
    }
    let n = n_valid as f64;
    Ok(TipErrors {
        mae_x: sx / n * spacing_mm,
        mae_y: sy / n * spacing_mm,
        mae_xy: sxy / n * spacing_mm,
        n_frames: preds.len(),
        n_invalid: preds.len() - n_valid,
    })
}

/// MAE between estimated tips and reference tip positions, aligned by
/// index. Degenerate estimates are excluded from the means and counted
/// in `n_invalid`.
pub fn tip_errors(
    preds: &[TipEstimate],
    gts: &[(f64, f64)],
    spacing_mm: f64,
) -> Result<TipErrors> {
    let points: Vec<((f64, f64), bool)> = preds
        .iter()
        .map(|e| ((e.t0.0 as f64, e.t0.1 as f64), e.valid))
        .collect();
    tip_errors_from_points(&points, gts, spacing_mm)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl ReportFormat {
    pub fn parse(s: &str) -> Result<ReportFormat> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::InvalidArgument(format!(
                "unsupported report format `{other}`"
            ))),
        }
    }
}

/// Everything a report can carry; absent sections are omitted.
#[derive(Debug, Clone, Default)]
pub struct Report {
    pub seg: Option<SegScores>,
    pub tips: Option<TipErrors>,
    pub stats: Option<PipelineStats>,
    pub config_echo: BTreeMap<String, String>,
}

fn r4(v: f64) -> f64 {
    (v * 10_000.0).round() / 10_000.0
}

/// Renders a report with deterministic field order and 4-decimal
/// floats. The same input always yields byte-identical output.
pub fn emit_report(report: &Report, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Csv => Ok(emit_csv(report)),
        ReportFormat::Json => Ok(emit_json(report)),
    }
}

fn emit_csv(report: &Report) -> String {
    let mut out = String::new();
    for (key, value) in &report.config_echo {
        out.push_str(&format!("# {key}={value}\n"));
    }
    if let Some(seg) = &report.seg {
        out.push_str("class,dice,iou,precision,recall,f1\n");
        for (class_id, s) in &seg.per_class {
            out.push_str(&format!(
                "{},{:.4},{:.4},{:.4},{:.4},{:.4}\n",
                class_id, s.dice, s.iou, s.precision, s.recall, s.f1
            ));
        }
        let m = &seg.mean;
        out.push_str(&format!(
            "mean,{:.4},{:.4},{:.4},{:.4},{:.4}\n",
            m.dice, m.iou, m.precision, m.recall, m.f1
        ));
    }
    if let Some(t) = &report.tips {
        out.push_str("mae_x,mae_y,mae_xy\n");
        out.push_str(&format!("{:.4},{:.4},{:.4}\n", t.mae_x, t.mae_y, t.mae_xy));
        out.push_str(&format!(
            "# n_frames={} n_invalid={}\n",
            t.n_frames, t.n_invalid
        ));
    }
    if let Some(s) = &report.stats {
        out.push_str(&format!(
            "# stats frames_in={} frames_out={} frames_dropped={} throughput_fps={:.4}\n",
            s.frames_in, s.frames_out, s.frames_dropped, s.throughput_fps
        ));
    }
    out
}

fn scores_json(s: &ClassScores) -> serde_json::Value {
    json!({
        "dice": r4(s.dice),
        "iou": r4(s.iou),
        "precision": r4(s.precision),
        "recall": r4(s.recall),
        "f1": r4(s.f1),
    })
}

fn emit_json(report: &Report) -> String {
    let mut root = serde_json::Map::new();
    if !report.config_echo.is_empty() {
        root.insert("config".into(), json!(report.config_echo));
    }
    if let Some(seg) = &report.seg {
        let per_class: Vec<serde_json::Value> = seg
            .per_class
            .iter()
            .map(|(c, s)| {
                let mut v = scores_json(s);
                v.as_object_mut()
                    .unwrap()
                    .insert("class_id".into(), json!(c));
                v
            })
            .collect();
        root.insert(
            "seg_scores".into(),
            json!({ "per_class": per_class, "mean": scores_json(&seg.mean) }),
        );
    }
    if let Some(t) = &report.tips {
        root.insert(
            "tip_errors".into(),
            json!({
                "mae_x": r4(t.mae_x),
                "mae_y": r4(t.mae_y),
                "mae_xy": r4(t.mae_xy),
                "n_frames": t.n_frames,
                "n_invalid": t.n_invalid,
            }),
        );
    }
    if let Some(s) = &report.stats {
        let mut v = serde_json::to_value(s).expect("stats serialize");
        round_floats(&mut v);
        root.insert("stats".into(), v);
    }
    serde_json::to_string_pretty(&serde_json::Value::Object(root)).expect("report serializes")
        + "\n"
}

fn round_floats(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Number(n) => {
            if let Some(f) = n.as_f64() {
                if n.as_i64().is_none() {
                    *v = json!(r4(f));
                }
            }
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(round_floats),
        serde_json::Value::Object(map) => map.values_mut().for_each(round_floats),
        _ => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::postprocess::{TipEstimate, TipMethod};
    use rand::{Rng, SeedableRng};

    fn map_from(w: u32, h: u32, k: u8, fg: &[(u32, u32, u8)]) -> LabelMap {
        let mut m = LabelMap::zeros(w, h, k);
        for &(x, y, c) in fg {
            m.set(x, y, c);
        }
        m
    }

    #[test]
    fn identical_nonempty_masks_score_one() {
        let m = map_from(8, 8, 2, &[(1, 1, 1), (2, 2, 1)]);
        let s = seg_scores(&m, &m).unwrap();
        assert_eq!(s.per_class[0].1.dice, 1.0);
        assert_eq!(s.per_class[0].1.iou, 1.0);
        assert_eq!(s.mean.f1, 1.0);
    }

    #[test]
    fn disjoint_equal_sets_score_zero() {
        let a = map_from(8, 8, 2, &[(1, 1, 1), (1, 2, 1)]);
        let b = map_from(8, 8, 2, &[(5, 5, 1), (5, 6, 1)]);
        let s = seg_scores(&a, &b).unwrap();
        assert_eq!(s.per_class[0].1.dice, 0.0);
        assert_eq!(s.per_class[0].1.iou, 0.0);
    }

    #[test]
    fn shifted_block_example() {
        // 2x2 block vs the same block shifted one pixel right:
        // overlap 2 px, dice = 2*2/(4+4) = 0.5, iou = 2/6.
        let a = map_from(8, 8, 2, &[(2, 2, 1), (3, 2, 1), (2, 3, 1), (3, 3, 1)]);
        let b = map_from(8, 8, 2, &[(3, 2, 1), (4, 2, 1), (3, 3, 1), (4, 3, 1)]);
        let s = seg_scores(&a, &b).unwrap();
        assert!((s.per_class[0].1.dice - 0.5).abs() < 1e-12);
        assert!((s.per_class[0].1.iou - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_class_conventions() {
        let empty = LabelMap::zeros(8, 8, 2);
        let s = seg_scores(&empty, &empty).unwrap();
        assert_eq!(s.per_class[0].1.dice, 1.0);
        let nonempty = map_from(8, 8, 2, &[(1, 1, 1)]);
        let s = seg_scores(&empty, &nonempty).unwrap();
        assert_eq!(s.per_class[0].1, ClassScores::all(0.0));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let a = LabelMap::zeros(8, 8, 2);
        let b = LabelMap::zeros(9, 8, 2);
        assert!(seg_scores(&a, &b).is_err());
    }

    /// Dumb per-class double loop; the independent confusion oracle.
    fn brute_scores(pred: &LabelMap, gt: &LabelMap, class: u8) -> ClassScores {
        let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
        for y in 0..pred.height() {
            for x in 0..pred.width() {
                let p = pred.get(x, y) == class;
                let g = gt.get(x, y) == class;
                match (p, g) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    _ => {}
                }
            }
        }
        if tp + fp + fn_ == 0 {
            return ClassScores::all(1.0);
        }
        if tp == 0 && (fp == 0 || fn_ == 0) {
            return ClassScores::all(0.0);
        }
        let dice = 2.0 * tp as f64 / (2.0 * tp as f64 + (fp + fn_) as f64);
        ClassScores {
            dice,
            iou: tp as f64 / (tp + fp + fn_) as f64,
            precision: tp as f64 / (tp + fp) as f64,
            recall: tp as f64 / (tp + fn_) as f64,
            f1: dice,
        }
    }

    fn random_map(rng: &mut rand_chacha::ChaCha8Rng, w: u32, h: u32, k: u8) -> LabelMap {
        let labels = (0..w as usize * h as usize)
            .map(|_| rng.random_range(0..k))
            .collect();
        LabelMap::new(w, h, k, labels).unwrap()
    }

    #[test]
    fn matches_brute_force_confusion_and_symmetry() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..60 {
            let w = rng.random_range(1..=32);
            let h = rng.random_range(1..=32);
            let k = if rng.random_bool(0.5) { 2 } else { 3 };
            let a = random_map(&mut rng, w, h, k);
            let b = random_map(&mut rng, w, h, k);
            let s = seg_scores(&a, &b).unwrap();
            let s_rev = seg_scores(&b, &a).unwrap();
            for (i, &(c, got)) in s.per_class.iter().enumerate() {
                let want = brute_scores(&a, &b, c);
                assert_eq!(got, want, "class {c}");
                assert_eq!(got.dice, s_rev.per_class[i].1.dice, "dice symmetry");
                assert_eq!(got.iou, s_rev.per_class[i].1.iou, "iou symmetry");
                assert!(got.iou <= got.dice + 1e-15);
            }
        }
    }

    fn estimate(x: u32, y: u32, valid: bool) -> TipEstimate {
        TipEstimate {
            class_id: 1,
            t0: (x, y),
            t1: (x, y),
            t2: (x, y),
            base: (x, y),
            method: if valid {
                TipMethod::Skeleton
            } else {
                TipMethod::Degenerate
            },
            valid,
            frame_sequence_id: 0,
        }
    }

    #[test]
    fn three_four_five_triangle() {
        let e = tip_errors(&[estimate(13, 14, true)], &[(10.0, 10.0)], 1.0).unwrap();
        assert!((e.mae_x - 3.0).abs() < 1e-12);
        assert!((e.mae_y - 4.0).abs() < 1e-12);
        assert!((e.mae_xy - 5.0).abs() < 1e-12);
        assert_eq!(e.n_frames, 1);
        assert_eq!(e.n_invalid, 0);
    }

    #[test]
    fn exact_predictions_have_zero_error() {
        let preds = vec![estimate(5, 6, true), estimate(9, 2, true)];
        let gts = vec![(5.0, 6.0), (9.0, 2.0)];
        let e = tip_errors(&preds, &gts, 1.0).unwrap();
        assert_eq!((e.mae_x, e.mae_y, e.mae_xy), (0.0, 0.0, 0.0));
    }

    #[test]
    fn mean_over_frames() {
        // Euclidean errors 5 and 0 average to 2.5.
        let preds = vec![estimate(13, 14, true), estimate(4, 4, true)];
        let gts = vec![(10.0, 10.0), (4.0, 4.0)];
        let e = tip_errors(&preds, &gts, 1.0).unwrap();
        assert!((e.mae_xy - 2.5).abs() < 1e-12);
    }

    #[test]
    fn invalid_estimates_excluded_but_counted() {
        let preds = vec![estimate(13, 14, true), estimate(0, 0, false)];
        let gts = vec![(10.0, 10.0), (50.0, 50.0)];
        let e = tip_errors(&preds, &gts, 1.0).unwrap();
        assert_eq!(e.n_frames, 2);
        assert_eq!(e.n_invalid, 1);
        assert!((e.mae_xy - 5.0).abs() < 1e-12);
        // All invalid → undefined metric.
        let only_invalid = vec![estimate(0, 0, false)];
        assert!(matches!(
            tip_errors(&only_invalid, &[(1.0, 1.0)], 1.0),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn bound_chain_and_scaling_on_random_inputs() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let n = rng.random_range(1..=20);
            let preds: Vec<TipEstimate> = (0..n)
                .map(|_| estimate(rng.random_range(0..100), rng.random_range(0..100), true))
                .collect();
            let gts: Vec<(f64, f64)> = (0..n)
                .map(|_| (rng.random_range(0.0..100.0), rng.random_range(0.0..100.0)))
                .collect();
            let e1 = tip_errors(&preds, &gts, 1.0).unwrap();
            assert!(e1.mae_x.max(e1.mae_y) <= e1.mae_xy + 1e-9);
            assert!(e1.mae_xy <= e1.mae_x + e1.mae_y + 1e-9);
            let s = 0.37;
            let es = tip_errors(&preds, &gts, s).unwrap();
            assert!((es.mae_x - e1.mae_x * s).abs() < 1e-9);
            assert!((es.mae_xy - e1.mae_xy * s).abs() < 1e-9);
        }
    }

    #[test]
    fn csv_report_matches_contract() {
        let report = Report {
            tips: Some(TipErrors {
                mae_x: 3.0,
                mae_y: 4.0,
                mae_xy: 5.0,
                n_frames: 1,
                n_invalid: 0,
            }),
            ..Report::default()
        };
        let csv = emit_report(&report, ReportFormat::Csv).unwrap();
        assert!(csv.contains("mae_x,mae_y,mae_xy\n3.0000,4.0000,5.0000\n"));
        // Byte-identical on repeat.
        assert_eq!(csv, emit_report(&report, ReportFormat::Csv).unwrap());
    }

    #[test]
    fn json_report_roundtrips() {
        let mut echo = BTreeMap::new();
        echo.insert("pipeline.mode".to_string(), "offline".to_string());
        let report = Report {
            tips: Some(TipErrors {
                mae_x: 1.23456,
                mae_y: 0.5,
                mae_xy: 1.33021,
                n_frames: 10,
                n_invalid: 2,
            }),
            config_echo: echo,
            ..Report::default()
        };
        let a = emit_report(&report, ReportFormat::Json).unwrap();
        let b = emit_report(&report, ReportFormat::Json).unwrap();
        assert_eq!(a, b);
        let v: serde_json::Value = serde_json::from_str(&a).unwrap();
        assert_eq!(v["tip_errors"]["mae_x"], 1.2346);
        assert_eq!(v["tip_errors"]["n_invalid"], 2);
        assert_eq!(v["config"]["pipeline.mode"], "offline");
    }
}
