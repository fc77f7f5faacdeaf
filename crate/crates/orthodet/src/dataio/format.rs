//! On-disk annotation schema: a multi-category variant of the common
//! detection-dataset JSON format.
//!
//! Top level: `images`, `annotations` and up to three category name tables
//! (`categories_1` quadrant, `categories_2` position, `categories_3`
//! diagnosis). Category ids are resolved through the tables, so files may
//! use 0- or 1-based ids as long as the tables declare them.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawImage {
    pub id: u64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawAnnotation {
    pub id: u64,
    pub image_id: u64,
    /// `[x, y, w, h]` in pixels.
    pub bbox: [f64; 4],
    pub category_id_1: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category_id_2: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category_id_3: Option<i64>,
    /// Provenance marker carried through prepared datasets; absent means
    /// human-annotated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawCategory {
    pub id: i64,
    pub name: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct RawDataset {
    pub images: Vec<RawImage>,
    pub annotations: Vec<RawAnnotation>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories_1: Vec<RawCategory>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories_2: Vec<RawCategory>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories_3: Vec<RawCategory>,
}

/// Canonical diagnosis names in canonical id order (0-based).
pub const DIAGNOSIS_NAMES: [&str; 4] = ["caries", "deep caries", "periapical lesion", "impacted"];

/// Attribute slot for each canonical diagnosis id
/// (attribute order is impacted, caries, deep caries, lesion).
pub const DIAGNOSIS_ATTRIBUTE_SLOT: [usize; 4] = [1, 2, 3, 0];
