//! Metric-scale volumetric heatmap decoding for 3D human pose.
//!
//! The library covers the numerical core of a metric-heatmap pose pipeline:
//! pinhole geometry with perspective-correct cropping, soft-argmax decoding
//! of volumetric heatmaps with analytic gradients, root-relative and
//! alignment-based losses, bone-length scale recovery, receptive-field
//! planning for strided backbones, evaluation metrics, a deterministic
//! synthetic dataset generator and a small hand-differentiated training
//! loop that exercises everything end to end.

pub mod error;
pub mod geometry;
pub mod heatmaps;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod scale_recovery;
pub mod striding;
pub mod synthdata;
pub mod toytrain;

pub use error::{MetroError, Result};
