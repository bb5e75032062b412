//! Python bindings: the label-map type plus the main tracking,
//! evaluation, tiling, and synthetic-data entry points.
//!
//! Build `libtiptrack_py.so` with `cargo build -p tiptrack-py --release`
//! and import it as `tiptrack_py` (see `python/smoke_test.py`).

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyFileNotFoundError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use tiptrack::error::{Error, ErrorCategory};
use tiptrack::imgproc;
use tiptrack::io::{FrameSource, MemorySource};
use tiptrack::metrics;
use tiptrack::pipeline::{run_pipeline, PipelineConfig};
use tiptrack::postprocess::{self, PostprocessConfig};
use tiptrack::segmentation::{ClassicalSegmenter, OracleSegmenter, Polarity, Segmenter};
use tiptrack::synth::{self, DegradePreset, SequenceOptions};

fn to_py_err(e: Error) -> PyErr {
    match e.category() {
        ErrorCategory::Ingest => PyFileNotFoundError::new_err(e.to_string()),
        ErrorCategory::Config | ErrorCategory::Evaluation => PyValueError::new_err(e.to_string()),
        _ => match e {
            Error::InvalidArgument(_) => PyValueError::new_err(e.to_string()),
            other => PyRuntimeError::new_err(other.to_string()),
        },
    }
}

/// Per-pixel class labels (0 background, 1 catheter/instrument,
/// 2 guidewire), row-major.
#[pyclass(name = "LabelMap", skip_from_py_object)]
#[derive(Clone)]
struct PyLabelMap {
    inner: imgproc::LabelMap,
}

#[pymethods]
impl PyLabelMap {
    #[new]
    fn new(width: u32, height: u32, num_classes: u8, labels: Vec<u8>) -> PyResult<Self> {
        Ok(PyLabelMap {
            inner: imgproc::LabelMap::new(width, height, num_classes, labels).map_err(to_py_err)?,
        })
    }

    #[getter]
    fn width(&self) -> u32 {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> u32 {
        self.inner.height()
    }

    #[getter]
    fn num_classes(&self) -> u8 {
        self.inner.num_classes()
    }

    /// Row-major label bytes.
    fn labels(&self) -> Vec<u8> {
        self.inner.labels().to_vec()
    }

    fn __repr__(&self) -> String {
        format!(
            "LabelMap({}x{}, {} classes)",
            self.inner.width(),
            self.inner.height(),
            self.inner.num_classes()
        )
    }
}

/// Post-processor thresholds; defaults target 500x500 frames.
#[pyclass(name = "PostprocessConfig", skip_from_py_object)]
#[derive(Clone)]
struct PyPostprocessConfig {
    inner: PostprocessConfig,
}

#[pymethods]
impl PyPostprocessConfig {
    #[new]
    #[pyo3(signature = (d_merge=10, a_min=20, d_max=150.0, arc_t1=5.0, arc_t2=10.0, reach_delta=0.10))]
    fn new(
        d_merge: u32,
        a_min: u32,
        d_max: f64,
        arc_t1: f64,
        arc_t2: f64,
        reach_delta: f64,
    ) -> PyResult<Self> {
        let inner = PostprocessConfig {
            d_merge,
            a_min,
            d_max,
            arc_t1,
            arc_t2,
            reach_delta,
        };
        inner.validate().map_err(to_py_err)?;
        Ok(PyPostprocessConfig { inner })
    }
}

/// One tracked tip: T0 plus the downstream stabilization points.
#[pyclass(name = "TipEstimate", skip_from_py_object)]
#[derive(Clone)]
struct PyTipEstimate {
    #[pyo3(get)]
    class_id: u8,
    #[pyo3(get)]
    t0: (u32, u32),
    #[pyo3(get)]
    t1: (u32, u32),
    #[pyo3(get)]
    t2: (u32, u32),
    #[pyo3(get)]
    base: (u32, u32),
    #[pyo3(get)]
    method: String,
    #[pyo3(get)]
    valid: bool,
    #[pyo3(get)]
    frame_id: u64,
}

impl From<&postprocess::TipEstimate> for PyTipEstimate {
    fn from(e: &postprocess::TipEstimate) -> Self {
        PyTipEstimate {
            class_id: e.class_id,
            t0: e.t0,
            t1: e.t1,
            t2: e.t2,
            base: e.base,
            method: e.method.as_str().to_string(),
            valid: e.valid,
            frame_id: e.frame_sequence_id,
        }
    }
}

#[pymethods]
impl PyTipEstimate {
    fn __repr__(&self) -> String {
        format!(
            "TipEstimate(class={}, t0={:?}, method={}, valid={})",
            self.class_id, self.t0, self.method, self.valid
        )
    }
}

/// Runs the full post-processing chain on a label map; returns one
/// estimate per device class.
#[pyfunction]
#[pyo3(signature = (labels, config=None, frame_id=0))]
fn extract_tips(
    labels: &PyLabelMap,
    config: Option<&PyPostprocessConfig>,
    frame_id: u64,
) -> PyResult<Vec<PyTipEstimate>> {
    let cfg = config.map_or_else(PostprocessConfig::default, |c| c.inner.clone());
    let tips =
        postprocess::extract_tips(&labels.inner, &cfg, &[], frame_id).map_err(to_py_err)?;
    Ok(tips.iter().map(PyTipEstimate::from).collect())
}

/// Thins one class of a label map to its medial axis; returns the
/// skeleton pixels in (y, x) scan order.
#[pyfunction]
#[pyo3(signature = (labels, class_id=1))]
fn skeletonize(labels: &PyLabelMap, class_id: u8) -> PyResult<Vec<(u32, u32)>> {
    let mask = imgproc::to_binary(&labels.inner, &[class_id]).map_err(to_py_err)?;
    Ok(postprocess::skeletonize(&mask).pixels().to_vec())
}

/// Dice/IoU/precision/recall/F1 per class plus macro means.
#[pyfunction]
fn seg_scores(py: Python<'_>, pred: &PyLabelMap, gt: &PyLabelMap) -> PyResult<Py<pyo3::types::PyDict>> {
    let scores = metrics::seg_scores(&pred.inner, &gt.inner).map_err(to_py_err)?;
    let dict = pyo3::types::PyDict::new(py);
    let class_scores = |s: &metrics::ClassScores| -> PyResult<Py<pyo3::types::PyDict>> {
        let d = pyo3::types::PyDict::new(py);
        d.set_item("dice", s.dice)?;
        d.set_item("iou", s.iou)?;
        d.set_item("precision", s.precision)?;
        d.set_item("recall", s.recall)?;
        d.set_item("f1", s.f1)?;
        Ok(d.unbind())
    };
    let per_class = pyo3::types::PyDict::new(py);
    for (c, s) in &scores.per_class {
        per_class.set_item(c, class_scores(s)?)?;
    }
    dict.set_item("per_class", per_class)?;
    dict.set_item("mean", class_scores(&scores.mean)?)?;
    Ok(dict.unbind())
}

/// Tip MAE along each axis and in 2D: predictions are
/// (x, y, valid) triples aligned with (x, y) references.
#[pyfunction]
#[pyo3(signature = (pred, gt, spacing_mm=1.0))]
fn tip_errors(
    py: Python<'_>,
    pred: Vec<(f64, f64, bool)>,
    gt: Vec<(f64, f64)>,
    spacing_mm: f64,
) -> PyResult<Py<pyo3::types::PyDict>> {
    let points: Vec<((f64, f64), bool)> =
        pred.into_iter().map(|(x, y, v)| ((x, y), v)).collect();
    let e = metrics::tip_errors_from_points(&points, &gt, spacing_mm).map_err(to_py_err)?;
    let dict = pyo3::types::PyDict::new(py);
    dict.set_item("mae_x", e.mae_x)?;
    dict.set_item("mae_y", e.mae_y)?;
    dict.set_item("mae_xy", e.mae_xy)?;
    dict.set_item("n_frames", e.n_frames)?;
    dict.set_item("n_invalid", e.n_invalid)?;
    Ok(dict.unbind())
}

/// Sliding-window tile origins for an image.
#[pyfunction]
#[pyo3(signature = (width, height, tile_size=512, overlap=256))]
fn plan_tiles(width: u32, height: u32, tile_size: u32, overlap: u32) -> PyResult<Vec<(u32, u32)>> {
    Ok(tiptrack::segmentation::plan_tiles(width, height, tile_size, overlap)
        .map_err(to_py_err)?
        .origins)
}

/// Generates a synthetic dataset on disk
/// (frames/, masks/, tips.csv, manifest.json).
#[pyfunction]
#[pyo3(signature = (out_dir, preset="clean", frames=100, seed=7, size=500, width=5, classes=2, motion=2.0, force=false))]
#[allow(clippy::too_many_arguments)]
fn synth_dataset(
    out_dir: PathBuf,
    preset: &str,
    frames: u32,
    seed: u64,
    size: u32,
    width: u32,
    classes: u8,
    motion: f64,
    force: bool,
) -> PyResult<()> {
    let preset = DegradePreset::parse(preset).map_err(to_py_err)?;
    let bundles = synth::gen_sequence(
        frames,
        motion,
        seed,
        &SequenceOptions {
            image_size: size,
            tube_width: width,
            classes,
            preset,
        },
    )
    .map_err(to_py_err)?;
    let manifest = tiptrack::io::DatasetManifest {
        version: 1,
        generator: "tiptrack-synth".into(),
        preset: preset.as_str().into(),
        image_size: size,
        n_frames: frames,
        seed,
        tube_width: width,
        classes,
        motion_px: motion,
    };
    tiptrack::io::write_dataset(&out_dir, &bundles, &manifest, force).map_err(to_py_err)
}

/// Tracks an image directory through the full pipeline and returns the
/// per-frame tip estimates.
///
/// `backend` is "classical" or "oracle"; the oracle needs `masks`, a
/// directory of `<frame_id:06d>.png` label images.
#[pyfunction]
#[pyo3(signature = (input_dir, backend="classical", masks=None, threshold=100, pattern="*.png"))]
fn track_image_dir(
    py: Python<'_>,
    input_dir: PathBuf,
    backend: &str,
    masks: Option<PathBuf>,
    threshold: u8,
    pattern: &str,
) -> PyResult<Vec<PyTipEstimate>> {
    let backend: Box<dyn Segmenter> = match backend {
        "classical" => Box::new(ClassicalSegmenter {
            threshold,
            polarity: Polarity::DarkDevice,
            open_radius: 1,
        }),
        "oracle" => {
            let dir = masks.ok_or_else(|| {
                PyValueError::new_err("oracle backend needs a masks directory")
            })?;
            Box::new(OracleSegmenter::from_dir(&dir).map_err(to_py_err)?)
        }
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown backend `{other}` (expected classical|oracle)"
            )))
        }
    };

    // Pre-load frames so the GIL can be released for the whole run.
    let mut source = tiptrack::io::open_image_dir(&input_dir, pattern).map_err(to_py_err)?;
    let mut frames = Vec::new();
    while let Some(frame) = source.next_frame() {
        frames.push(frame.map_err(to_py_err)?);
    }

    let tips = py
        .detach(move || -> tiptrack::Result<Vec<postprocess::TipEstimate>> {
            let mut out = Vec::new();
            run_pipeline(
                &mut MemorySource::new(frames),
                backend.as_ref(),
                &PostprocessConfig::default(),
                &PipelineConfig::default(),
                &mut |r| out.extend(r.tips),
            )?;
            Ok(out)
        })
        .map_err(to_py_err)?;
    Ok(tips.iter().map(PyTipEstimate::from).collect())
}

/// Loads a mask directory as LabelMap objects keyed by frame id.
#[pyfunction]
fn load_mask_dir(dir: PathBuf) -> PyResult<BTreeMap<u64, PyLabelMap>> {
    let store = tiptrack::io::load_mask_dir(&dir).map_err(to_py_err)?;
    Ok(store
        .into_iter()
        .map(|(id, inner)| (id, PyLabelMap { inner }))
        .collect())
}

#[pymodule]
fn tiptrack_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyLabelMap>()?;
    m.add_class::<PyPostprocessConfig>()?;
    m.add_class::<PyTipEstimate>()?;
    m.add_function(wrap_pyfunction!(extract_tips, m)?)?;
    m.add_function(wrap_pyfunction!(skeletonize, m)?)?;
    m.add_function(wrap_pyfunction!(seg_scores, m)?)?;
    m.add_function(wrap_pyfunction!(tip_errors, m)?)?;
    m.add_function(wrap_pyfunction!(plan_tiles, m)?)?;
    m.add_function(wrap_pyfunction!(synth_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(track_image_dir, m)?)?;
    m.add_function(wrap_pyfunction!(load_mask_dir, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
