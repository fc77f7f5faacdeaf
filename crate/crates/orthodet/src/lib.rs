//! Unified tooth enumeration and dental disease detection on panoramic
//! radiographs.
//!
//! The pipeline detects every tooth on a panoramic X-ray, classifies it into
//! one of the 32 FDI codes, and predicts four independent disease attributes
//! (impacted, caries, deep caries, periapical lesion) per tooth. It trains
//! from heterogeneous partial annotations (quadrant-only, enumeration, and
//! full disease tiers) by masking loss terms per tier, and enforces a valid
//! tooth layout at inference time with a linear-sum-assignment relabeling
//! that gives each FDI code to at most one detection.
//!
//! Module map:
//! - [`fdi`], [`geometry`], [`attributes`], [`records`] — domain types.
//! - [`dataio`] — annotation import/export, duplicate-box merging, pseudo
//!   label fusion.
//! - [`augment`] — label-consistent augmentation (horizontal flip remaps
//!   quadrants).
//! - [`autodiff`] — a small reverse-mode tape used by the detector.
//! - [`network`] — CoordConv backbone, extra-upsampling pyramid, decoupled
//!   multi-attribute head.
//! - [`training`] — task-aligned assignment, tier-masked composite loss,
//!   SGD training loop.
//! - [`postprocess`] — NMS and the assignment-based enumeration correction.
//! - [`evaluation`] — three-axis (quadrant / diagnosis / enumeration) AP.
//! - [`config`] — run configuration shared by the CLI stages.
//! - [`synth`] — procedural panoramic-like fixtures for smoke tests and demos.
//!
//! All numeric code is generic over the scalar type through [`Scalar`];
//! `f64` aliases for the common pipeline live at the crate root.

pub mod attributes;
pub mod augment;
pub mod autodiff;
pub mod config;
pub mod dataio;
pub mod error;
pub mod evaluation;
pub mod fdi;
pub mod geometry;
pub mod imagebuf;
pub mod network;
pub mod postprocess;
pub mod records;
pub mod synth;
pub mod training;

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, NumAssignOps};

pub use error::Error;
pub use fdi::FdiLabel;

/// Floating point scalar the numeric pipeline is generic over: f32 or f64.
pub trait Scalar:
    Float
    + FromPrimitive
    + NumAssignOps
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + serde::Serialize
    + serde::de::DeserializeOwned
    + 'static
{
    /// Lossy conversion from `f64`; panics only for values outside the
    /// target type's range, which never occurs for the constants used here.
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("f64 constant representable in scalar type")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("scalar representable as f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Double precision aliases for the standard pipeline (training, the CLI and
/// the JSON interchange formats all run in f64).
pub type BoundingBox64 = geometry::BoundingBox<f64>;
pub type Detection64 = records::Detection<f64>;
pub type ToothRecord64 = records::ToothRecord<f64>;
pub type DatasetIndex64 = dataio::DatasetIndex<f64>;
pub type Image64 = imagebuf::Image<f64>;
pub type Sample64 = augment::Sample<f64>;
