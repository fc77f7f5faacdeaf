//! Annotation import/export across the three tiers, duplicate-box merging,
//! and pseudo-label fusion.
//!
//! Disease-tier sources mark a multi-disease tooth with several co-located
//! boxes, one per disease; [`merge_colocated_boxes`] collapses each such
//! cluster into a single multi-attribute record. Disease-tier sources also
//! annotate only the diseased teeth; [`fuse_pseudo_labels`] completes the
//! image with machine-detected healthy teeth whose attributes are all false.

pub mod format;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attributes::AttributeFlags;
use crate::error::{Error, Result};
use crate::fdi::FdiLabel;
use crate::geometry::{box_iou, BoundingBox};
use crate::records::{Detection, RecordSource, ToothRecord};
use crate::Scalar;
use format::{RawAnnotation, RawCategory, RawDataset, RawImage, DIAGNOSIS_ATTRIBUTE_SLOT, DIAGNOSIS_NAMES};

/// Which label fields an image carries. Every image belongs to exactly one tier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, Hash)]
#[serde(rename_all = "lowercase")]
pub enum AnnotationTier {
    Quadrant,
    Enumeration,
    Disease,
}

impl std::fmt::Display for AnnotationTier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AnnotationTier::Quadrant => write!(f, "quadrant"),
            AnnotationTier::Enumeration => write!(f, "enumeration"),
            AnnotationTier::Disease => write!(f, "disease"),
        }
    }
}

impl std::str::FromStr for AnnotationTier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "quadrant" => Ok(AnnotationTier::Quadrant),
            "enumeration" => Ok(AnnotationTier::Enumeration),
            "disease" => Ok(AnnotationTier::Disease),
            other => Err(Error::InvalidTier(other.to_string())),
        }
    }
}

/// Per-image metadata.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageInfo {
    pub id: u64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
    pub tier: AnnotationTier,
}

/// An imported dataset: image table plus per-image tooth records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex<T> {
    pub images: Vec<ImageInfo>,
    /// Keyed by image id; iteration order is deterministic.
    pub records: BTreeMap<u64, Vec<ToothRecord<T>>>,
}

impl<T: Scalar> DatasetIndex<T> {
    pub fn record_count(&self) -> usize {
        self.records.values().map(Vec::len).sum()
    }

    pub fn image(&self, id: u64) -> Option<&ImageInfo> {
        self.images.iter().find(|im| im.id == id)
    }
}

fn category_name_table(table: &[RawCategory]) -> BTreeMap<i64, String> {
    table
        .iter()
        .map(|c| (c.id, c.name.trim().to_ascii_lowercase()))
        .collect()
}

/// Resolve a quadrant/position category name (a small integer, possibly with
/// a word prefix such as "quadrant 3") to its numeric value.
fn parse_indexed_name(name: &str, max: u8) -> Option<u8> {
    let digits: String = name.chars().filter(|c| c.is_ascii_digit()).collect();
    let v: u8 = digits.parse().ok()?;
    (1..=max).contains(&v).then_some(v)
}

fn lookup(
    table: &BTreeMap<i64, String>,
    table_name: &str,
    id: i64,
    path: &str,
) -> Result<String> {
    table.get(&id).cloned().ok_or_else(|| {
        Error::malformed(
            path,
            format!("annotation references id {id} missing from {table_name}"),
        )
    })
}

/// Infer the tier of a file from which category tables it declares.
pub fn infer_tier(raw: &RawDataset) -> AnnotationTier {
    if !raw.categories_3.is_empty() {
        AnnotationTier::Disease
    } else if !raw.categories_2.is_empty() {
        AnnotationTier::Enumeration
    } else {
        AnnotationTier::Quadrant
    }
}

/// Import one annotation file. When `tier` is `None` it is inferred from the
/// category tables present in the file.
///
/// Produces one [`ToothRecord`] per raw annotation (no merging). Boxes are
/// converted from `(x, y, w, h)` to corner form and clipped to the image
/// bounds. Diagnosis names are matched case-insensitively with whitespace
/// normalization.
pub fn import_annotations<T: Scalar>(
    path: impl AsRef<Path>,
    tier: Option<AnnotationTier>,
) -> Result<DatasetIndex<T>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    import_annotations_str(&text, tier, &path.display().to_string())
}

/// [`import_annotations`] over an in-memory JSON string.
pub fn import_annotations_str<T: Scalar>(
    text: &str,
    tier: Option<AnnotationTier>,
    path: &str,
) -> Result<DatasetIndex<T>> {
    let raw: RawDataset =
        serde_json::from_str(text).map_err(|e| Error::malformed(path, e.to_string()))?;
    let tier = tier.unwrap_or_else(|| infer_tier(&raw));

    let quadrant_names = category_name_table(&raw.categories_1);
    let position_names = category_name_table(&raw.categories_2);
    let diagnosis_names = category_name_table(&raw.categories_3);

    if quadrant_names.is_empty() {
        return Err(Error::malformed(path, "missing categories_1 table"));
    }
    match tier {
        AnnotationTier::Quadrant => {
            if !position_names.is_empty() || !diagnosis_names.is_empty() {
                return Err(Error::TierMismatch(format!(
                    "{path}: quadrant-tier file declares position/diagnosis tables"
                )));
            }
        }
        AnnotationTier::Enumeration => {
            if position_names.is_empty() {
                return Err(Error::TierMismatch(format!(
                    "{path}: enumeration-tier file lacks a categories_2 table"
                )));
            }
            if !diagnosis_names.is_empty() {
                return Err(Error::TierMismatch(format!(
                    "{path}: enumeration-tier file declares a diagnosis table"
                )));
            }
        }
        AnnotationTier::Disease => {
            if position_names.is_empty() || diagnosis_names.is_empty() {
                return Err(Error::TierMismatch(format!(
                    "{path}: disease-tier file lacks categories_2/categories_3 tables"
                )));
            }
        }
    }

    let mut images = Vec::with_capacity(raw.images.len());
    let mut records: BTreeMap<u64, Vec<ToothRecord<T>>> = BTreeMap::new();
    let mut dims: BTreeMap<u64, (f64, f64)> = BTreeMap::new();
    for im in &raw.images {
        if dims.contains_key(&im.id) {
            return Err(Error::malformed(path, format!("duplicate image id {}", im.id)));
        }
        dims.insert(im.id, (im.width as f64, im.height as f64));
        images.push(ImageInfo {
            id: im.id,
            file_name: im.file_name.clone(),
            width: im.width,
            height: im.height,
            tier,
        });
        records.insert(im.id, Vec::new());
    }

    for ann in &raw.annotations {
        let (img_w, img_h) = *dims.get(&ann.image_id).ok_or_else(|| {
            Error::malformed(path, format!("annotation {} references unknown image {}", ann.id, ann.image_id))
        })?;

        match tier {
            AnnotationTier::Quadrant => {
                if ann.category_id_2.is_some() || ann.category_id_3.is_some() {
                    return Err(Error::TierMismatch(format!(
                        "{path}: annotation {} carries position/diagnosis on a quadrant-tier file",
                        ann.id
                    )));
                }
            }
            AnnotationTier::Enumeration => {
                if ann.category_id_2.is_none() {
                    return Err(Error::TierMismatch(format!(
                        "{path}: annotation {} lacks a position on an enumeration-tier file",
                        ann.id
                    )));
                }
                if ann.category_id_3.is_some() {
                    return Err(Error::TierMismatch(format!(
                        "{path}: annotation {} carries a diagnosis on an enumeration-tier file",
                        ann.id
                    )));
                }
            }
            AnnotationTier::Disease => {
                if ann.category_id_2.is_none() {
                    return Err(Error::TierMismatch(format!(
                        "{path}: annotation {} lacks a position on a disease-tier file",
                        ann.id
                    )));
                }
            }
        }

        let qname = lookup(&quadrant_names, "categories_1", ann.category_id_1, path)?;
        let quadrant = parse_indexed_name(&qname, 4).ok_or_else(|| Error::UnknownCategory {
            table: "categories_1".into(),
            name: qname.clone(),
        })?;

        let fdi = match ann.category_id_2 {
            Some(id2) => {
                let pname = lookup(&position_names, "categories_2", id2, path)?;
                let position =
                    parse_indexed_name(&pname, 8).ok_or_else(|| Error::UnknownCategory {
                        table: "categories_2".into(),
                        name: pname.clone(),
                    })?;
                Some(FdiLabel::new(quadrant, position).unwrap())
            }
            None => None,
        };

        let attributes = match tier {
            AnnotationTier::Disease => {
                let mut flags = AttributeFlags::all_false();
                if let Some(id3) = ann.category_id_3 {
                    let dname = lookup(&diagnosis_names, "categories_3", id3, path)?;
                    let slot = diagnosis_slot(&dname).ok_or_else(|| Error::UnknownCategory {
                        table: "categories_3".into(),
                        name: dname.clone(),
                    })?;
                    flags = AttributeFlags::single(slot);
                }
                Some(flags)
            }
            _ => None,
        };

        let clipped = clip_xywh(ann.bbox, img_w, img_h).ok_or_else(|| {
            Error::malformed(
                path,
                format!("annotation {} box {:?} degenerate after clipping", ann.id, ann.bbox),
            )
        })?;
        let bbox = BoundingBox::new(
            T::from_f64_lossy(clipped.0),
            T::from_f64_lossy(clipped.1),
            T::from_f64_lossy(clipped.2),
            T::from_f64_lossy(clipped.3),
        )
        .unwrap();

        let source = match ann.source.as_deref() {
            Some("pseudo") => RecordSource::Pseudo,
            _ => RecordSource::Annotated,
        };

        records
            .get_mut(&ann.image_id)
            .unwrap()
            .push(ToothRecord {
                bbox,
                quadrant,
                fdi,
                attributes,
                source,
            });
    }

    Ok(DatasetIndex { images, records })
}

/// Normalized diagnosis name to attribute slot.
fn diagnosis_slot(normalized: &str) -> Option<usize> {
    let squeezed = normalized.split_whitespace().collect::<Vec<_>>().join(" ");
    DIAGNOSIS_NAMES
        .iter()
        .position(|n| *n == squeezed)
        .map(|id| DIAGNOSIS_ATTRIBUTE_SLOT[id])
}

fn clip_xywh(bbox: [f64; 4], img_w: f64, img_h: f64) -> Option<(f64, f64, f64, f64)> {
    let [x, y, w, h] = bbox;
    if !(x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite()) {
        return None;
    }
    let x0 = x.max(0.0).min(img_w);
    let y0 = y.max(0.0).min(img_h);
    let x1 = (x + w).max(0.0).min(img_w);
    let y1 = (y + h).max(0.0).min(img_h);
    (x0 < x1 && y0 < y1).then_some((x0, y0, x1, y1))
}

/// Serialize a dataset back to the canonical JSON layout.
///
/// Records with several true attribute flags expand into one annotation per
/// flag at the same box (the source convention for multi-disease teeth);
/// all-false disease-tier records export without a `category_id_3`. Category
/// tables are written 0-based.
pub fn export_annotations<T: Scalar>(index: &DatasetIndex<T>) -> RawDataset {
    let tier = index
        .images
        .first()
        .map(|im| im.tier)
        .unwrap_or(AnnotationTier::Disease);

    let mut raw = RawDataset {
        images: index
            .images
            .iter()
            .map(|im| RawImage {
                id: im.id,
                file_name: im.file_name.clone(),
                width: im.width,
                height: im.height,
            })
            .collect(),
        ..Default::default()
    };

    raw.categories_1 = (0..4)
        .map(|i| RawCategory {
            id: i,
            name: format!("{}", i + 1),
        })
        .collect();
    if tier != AnnotationTier::Quadrant {
        raw.categories_2 = (0..8)
            .map(|i| RawCategory {
                id: i,
                name: format!("{}", i + 1),
            })
            .collect();
    }
    if tier == AnnotationTier::Disease {
        raw.categories_3 = DIAGNOSIS_NAMES
            .iter()
            .enumerate()
            .map(|(i, n)| RawCategory {
                id: i as i64,
                name: (*n).to_string(),
            })
            .collect();
    }

    let mut next_id = 1u64;
    for (&image_id, recs) in &index.records {
        for rec in recs {
            let bbox = [
                rec.bbox.x_min.to_f64_lossy(),
                rec.bbox.y_min.to_f64_lossy(),
                rec.bbox.width().to_f64_lossy(),
                rec.bbox.height().to_f64_lossy(),
            ];
            let category_id_1 = rec.quadrant as i64 - 1;
            let category_id_2 = rec.fdi.map(|f| f.position() as i64 - 1);
            let source = match rec.source {
                RecordSource::Pseudo => Some("pseudo".to_string()),
                RecordSource::Annotated => None,
            };
            let diag_ids: Vec<Option<i64>> = match rec.attributes {
                Some(flags) if flags.any() => (0..4)
                    .filter(|diag| flags.get(DIAGNOSIS_ATTRIBUTE_SLOT[*diag]))
                    .map(|diag| Some(diag as i64))
                    .collect(),
                _ => vec![None],
            };
            for category_id_3 in diag_ids {
                raw.annotations.push(RawAnnotation {
                    id: next_id,
                    image_id,
                    bbox,
                    category_id_1,
                    category_id_2,
                    category_id_3,
                    source: source.clone(),
                });
                next_id += 1;
            }
        }
    }
    raw
}

/// Write a dataset as canonical JSON.
pub fn write_annotations<T: Scalar>(index: &DatasetIndex<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let raw = export_annotations(index);
    let text = serde_json::to_string_pretty(&raw)
        .map_err(|e| Error::malformed(path.display().to_string(), e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Cluster co-located boxes (single-linkage on `box_iou >= iou_min`) and
/// collapse each cluster to one record: coordinate-wise union box,
/// element-wise OR of attributes. All cluster members must agree on
/// quadrant and FDI. Idempotent.
pub fn merge_colocated_boxes<T: Scalar>(
    records: &[ToothRecord<T>],
    iou_min: T,
) -> Result<Vec<ToothRecord<T>>> {
    let n = records.len();
    // Union-find over records; single linkage.
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, i: usize) -> usize {
        if parent[i] != i {
            let root = find(parent, parent[i]);
            parent[i] = root;
        }
        parent[i]
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if box_iou(&records[i].bbox, &records[j].bbox) >= iou_min {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[rj.max(ri)] = rj.min(ri);
                }
            }
        }
    }

    let mut clusters: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let root = find(&mut parent, i);
        clusters.entry(root).or_default().push(i);
    }

    let mut out = Vec::with_capacity(clusters.len());
    for members in clusters.values() {
        let first = &records[members[0]];
        let mut bbox = first.bbox;
        let mut attributes = first.attributes;
        let mut source = first.source;
        for &m in &members[1..] {
            let rec = &records[m];
            if rec.fdi != first.fdi || rec.quadrant != first.quadrant {
                return Err(Error::ConflictingFdi(
                    label_of(first),
                    label_of(rec),
                ));
            }
            bbox = bbox.union_hull(&rec.bbox);
            attributes = match (attributes, rec.attributes) {
                (Some(a), Some(b)) => Some(a.or(&b)),
                (a, b) => a.or(b),
            };
            if rec.source == RecordSource::Annotated {
                source = RecordSource::Annotated;
            }
        }
        out.push(ToothRecord {
            bbox,
            quadrant: first.quadrant,
            fdi: first.fdi,
            attributes,
            source,
        });
    }
    Ok(out)
}

fn label_of<T: Scalar>(rec: &ToothRecord<T>) -> String {
    match rec.fdi {
        Some(fdi) => fdi.to_string(),
        None => format!("quadrant {}", rec.quadrant),
    }
}

/// Outcome counters for [`fuse_pseudo_labels`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct FuseSummary {
    pub accepted: usize,
    pub below_confidence: usize,
    pub overlaps_annotated: usize,
    pub duplicate_fdi: usize,
}

/// Complete a merged disease-tier image with pseudo-labeled healthy teeth.
///
/// A pseudo detection is accepted when its confidence is at least `conf_min`,
/// its IoU against every annotated box stays below `iou_max`, and its argmax
/// FDI is not already taken by an annotated or earlier-accepted (higher
/// confidence) pseudo record. Accepted teeth get all-false attributes and
/// `source = pseudo`; annotated records pass through unchanged.
pub fn fuse_pseudo_labels<T: Scalar>(
    annotated: &[ToothRecord<T>],
    pseudo: &[Detection<T>],
    conf_min: T,
    iou_max: T,
) -> (Vec<ToothRecord<T>>, FuseSummary) {
    let mut summary = FuseSummary::default();
    let mut out: Vec<ToothRecord<T>> = annotated.to_vec();
    let mut used_fdi: Vec<FdiLabel> = annotated.iter().filter_map(|r| r.fdi).collect();

    // Highest confidence first; stable so equal confidences keep input order.
    let mut order: Vec<usize> = (0..pseudo.len()).collect();
    order.sort_by(|&a, &b| {
        pseudo[b]
            .confidence
            .partial_cmp(&pseudo[a].confidence)
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    for idx in order {
        let det = &pseudo[idx];
        if det.confidence < conf_min {
            summary.below_confidence += 1;
            continue;
        }
        if annotated
            .iter()
            .any(|r| box_iou(&r.bbox, &det.bbox) >= iou_max)
        {
            summary.overlaps_annotated += 1;
            continue;
        }
        let fdi = det.argmax_fdi();
        if used_fdi.contains(&fdi) {
            summary.duplicate_fdi += 1;
            continue;
        }
        used_fdi.push(fdi);
        out.push(ToothRecord {
            bbox: det.bbox,
            quadrant: fdi.quadrant(),
            fdi: Some(fdi),
            attributes: Some(AttributeFlags::all_false()),
            source: RecordSource::Pseudo,
        });
        summary.accepted += 1;
    }

    (out, summary)
}

#[cfg(test)]
mod tests;
