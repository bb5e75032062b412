//! Real-time catheter/guidewire tip tracking.
//!
//! The crate is organized around a four-stage frame pipeline
//! (read → preprocess → infer → postprocess) plus the supporting pieces
//! needed to exercise it end to end without a trained network:
//!
//! - [`imgproc`]: raster types (frames, label/probability maps, binary
//!   masks) and pixel kernels (thresholding, connected components,
//!   morphology).
//! - [`postprocess`]: mask refinement and tip extraction — component
//!   merging, principal-structure selection, artifact filtering,
//!   Zhang-Suen skeletonization, endpoint detection, and greedy
//!   arc-length multi-point sampling (T0/T1/T2).
//! - [`segmentation`]: the pluggable segmenter contract with a classical
//!   intensity backend and a ground-truth oracle backend, plus tiled
//!   sliding-window inference with overlap averaging.
//! - [`pipeline`]: the bounded-queue asynchronous pipeline with
//!   per-stage latency accounting and offline/live flow control.
//! - [`metrics`]: Dice/IoU/precision/recall/F1 and tip MAE evaluation,
//!   with CSV/JSON report emission.
//! - [`synth`]: deterministic synthetic fluoroscopy-like sequences with
//!   exact tip ground truth, noise, and occlusion.
//! - [`io`]: frame sources, mask and annotation readers/writers,
//!   dataset layout, and configuration loading.

pub mod error;
pub mod imgproc;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod postprocess;
pub mod segmentation;
pub mod synth;

mod union_find;

pub use error::{Error, ErrorCategory, Result};
