use proptest::prelude::*;

use super::*;
use crate::attributes::Attributes;

fn disease_json() -> String {
    r#"{
        "images": [{"id": 1, "file_name": "a.png", "width": 100, "height": 100}],
        "annotations": [
            {"id": 1, "image_id": 1, "bbox": [10, 20, 30, 40],
             "category_id_1": 0, "category_id_2": 0, "category_id_3": 0}
        ],
        "categories_1": [{"id": 0, "name": "1"}, {"id": 1, "name": "2"},
                         {"id": 2, "name": "3"}, {"id": 3, "name": "4"}],
        "categories_2": [{"id": 0, "name": "1"}, {"id": 1, "name": "2"},
                         {"id": 2, "name": "3"}, {"id": 3, "name": "4"},
                         {"id": 4, "name": "5"}, {"id": 5, "name": "6"},
                         {"id": 6, "name": "7"}, {"id": 7, "name": "8"}],
        "categories_3": [{"id": 0, "name": "Caries"}, {"id": 1, "name": "Deep Caries"},
                         {"id": 2, "name": "Periapical Lesion"}, {"id": 3, "name": "Impacted"}]
    }"#
    .to_string()
}

fn bb(x0: f64, y0: f64, x1: f64, y1: f64) -> BoundingBox<f64> {
    BoundingBox::new(x0, y0, x1, y1).unwrap()
}

fn det(bbox: BoundingBox<f64>, class: usize, conf: f64) -> Detection<f64> {
    let mut probs = vec![0.01; 32];
    probs[class] = 0.95;
    Detection::new(bbox, probs, Attributes::zeros(), conf)
}

#[test]
fn import_disease_annotation_maps_caries() {
    let idx: DatasetIndex<f64> = import_annotations_str(&disease_json(), None, "test").unwrap();
    assert_eq!(idx.images.len(), 1);
    assert_eq!(idx.images[0].tier, AnnotationTier::Disease);
    let recs = &idx.records[&1];
    assert_eq!(recs.len(), 1);
    let rec = &recs[0];
    assert_eq!(rec.fdi.unwrap().code(), 11);
    let flags = rec.attributes.unwrap();
    assert_eq!(flags.as_array(), [false, true, false, false]);
    assert_eq!(rec.bbox, bb(10.0, 20.0, 40.0, 60.0));
}

#[test]
fn import_one_based_category_ids_resolve_through_tables() {
    // Same file with 1-based ids; the tables declare the base.
    let text = disease_json()
        .replace(r#""category_id_1": 0"#, r#""category_id_1": 1"#)
        .replace(r#"{"id": 0, "name": "1"}, {"id": 1, "name": "2"},
                         {"id": 2, "name": "3"}, {"id": 3, "name": "4"}],
        "categories_2""#, r#"{"id": 1, "name": "1"}, {"id": 2, "name": "2"},
                         {"id": 3, "name": "3"}, {"id": 4, "name": "4"}],
        "categories_2""#);
    let idx: DatasetIndex<f64> = import_annotations_str(&text, None, "test").unwrap();
    assert_eq!(idx.records[&1][0].quadrant, 1);
}

#[test]
fn import_enumeration_tier_has_unset_attributes() {
    let text = r#"{
        "images": [{"id": 7, "file_name": "b.png", "width": 50, "height": 50}],
        "annotations": [
            {"id": 1, "image_id": 7, "bbox": [1, 1, 5, 5], "category_id_1": 1, "category_id_2": 2}
        ],
        "categories_1": [{"id": 0, "name": "1"}, {"id": 1, "name": "2"},
                         {"id": 2, "name": "3"}, {"id": 3, "name": "4"}],
        "categories_2": [{"id": 0, "name": "1"}, {"id": 1, "name": "2"}, {"id": 2, "name": "3"},
                         {"id": 3, "name": "4"}, {"id": 4, "name": "5"}, {"id": 5, "name": "6"},
                         {"id": 6, "name": "7"}, {"id": 7, "name": "8"}]
    }"#;
    let idx: DatasetIndex<f64> = import_annotations_str(text, None, "test").unwrap();
    assert_eq!(idx.images[0].tier, AnnotationTier::Enumeration);
    let rec = &idx.records[&7][0];
    assert_eq!(rec.fdi.unwrap().code(), 23);
    assert!(rec.attributes.is_none());
}

#[test]
fn import_clips_boxes_to_image_bounds() {
    let text = disease_json().replace("[10, 20, 30, 40]", "[-5, 10, 50, 40]");
    let idx: DatasetIndex<f64> = import_annotations_str(&text, None, "test").unwrap();
    assert_eq!(idx.records[&1][0].bbox, bb(0.0, 10.0, 45.0, 50.0));
}

#[test]
fn import_rejects_malformed_json() {
    let err = import_annotations_str::<f64>("{not json", None, "test").unwrap_err();
    assert!(matches!(err, Error::MalformedFile { .. }));
}

#[test]
fn import_rejects_unknown_diagnosis() {
    let text = disease_json().replace("Caries", "Gingivitis");
    let err = import_annotations_str::<f64>(&text, None, "test").unwrap_err();
    assert!(matches!(err, Error::UnknownCategory { .. }));
}

#[test]
fn import_rejects_tier_mismatch() {
    // Declared quadrant tier but the file carries positions and diagnoses.
    let err =
        import_annotations_str::<f64>(&disease_json(), Some(AnnotationTier::Quadrant), "test")
            .unwrap_err();
    assert!(matches!(err, Error::TierMismatch(_)));
}

#[test]
fn diagnosis_names_normalize_case_and_whitespace() {
    let text = disease_json().replace("Deep Caries", "  DEEP   cAries ");
    let text = text.replace(r#""category_id_3": 0"#, r#""category_id_3": 1"#);
    let idx: DatasetIndex<f64> = import_annotations_str(&text, None, "test").unwrap();
    let flags = idx.records[&1][0].attributes.unwrap();
    assert!(flags.has_deepcaries);
}

#[test]
fn round_trip_import_export_import() {
    let idx: DatasetIndex<f64> = import_annotations_str(&disease_json(), None, "test").unwrap();
    let raw = export_annotations(&idx);
    let text = serde_json::to_string(&raw).unwrap();
    let again: DatasetIndex<f64> = import_annotations_str(&text, None, "test").unwrap();
    assert_eq!(idx, again);
}

#[test]
fn merge_combines_duplicate_boxes_with_different_diseases() {
    let fdi = FdiLabel::from_code(36).unwrap();
    let a = ToothRecord::disease(bb(10.0, 10.0, 20.0, 30.0), fdi, AttributeFlags::single(1));
    let b = ToothRecord::disease(bb(10.0, 10.0, 20.0, 30.0), fdi, AttributeFlags::single(0));
    let merged = merge_colocated_boxes(&[a, b], 0.9).unwrap();
    assert_eq!(merged.len(), 1);
    let flags = merged[0].attributes.unwrap();
    assert!(flags.has_caries && flags.is_impacted);
    assert!(!flags.has_deepcaries && !flags.has_lesion);
    assert_eq!(merged[0].bbox, bb(10.0, 10.0, 20.0, 30.0));
}

#[test]
fn merge_keeps_singletons_and_low_iou_pairs() {
    let fdi = FdiLabel::from_code(11).unwrap();
    let a = ToothRecord::disease(bb(0.0, 0.0, 10.0, 10.0), fdi, AttributeFlags::single(1));
    let merged = merge_colocated_boxes(&[a], 0.9).unwrap();
    assert_eq!(merged, vec![a]);

    // IoU 0.5 < 0.9: both kept.
    let b = ToothRecord::disease(
        bb(0.0, 0.0, 10.0, 5.0),
        FdiLabel::from_code(12).unwrap(),
        AttributeFlags::single(0),
    );
    let both = merge_colocated_boxes(&[a, b], 0.9).unwrap();
    assert_eq!(both.len(), 2);
}

#[test]
fn merge_rejects_conflicting_fdi() {
    let a = ToothRecord::disease(
        bb(10.0, 10.0, 20.0, 30.0),
        FdiLabel::from_code(36).unwrap(),
        AttributeFlags::single(1),
    );
    let b = ToothRecord::disease(
        bb(10.0, 10.0, 20.0, 30.0),
        FdiLabel::from_code(37).unwrap(),
        AttributeFlags::single(0),
    );
    let err = merge_colocated_boxes(&[a, b], 0.9).unwrap_err();
    assert!(matches!(err, Error::ConflictingFdi(..)));
}

#[test]
fn merge_unions_slightly_offset_duplicates() {
    let fdi = FdiLabel::from_code(41).unwrap();
    let a = ToothRecord::disease(bb(10.0, 10.0, 20.0, 30.0), fdi, AttributeFlags::single(2));
    let b = ToothRecord::disease(bb(10.5, 10.0, 20.5, 30.0), fdi, AttributeFlags::single(3));
    let merged = merge_colocated_boxes(&[a, b], 0.9).unwrap();
    assert_eq!(merged.len(), 1);
    assert_eq!(merged[0].bbox, bb(10.0, 10.0, 20.5, 30.0));
}

proptest! {
    /// Merging never increases the record count, never loses a true flag,
    /// and is idempotent.
    #[test]
    fn merge_is_idempotent_and_monotone(
        seeds in proptest::collection::vec((0u8..32, 0.0..80.0f64, 0.0..80.0f64, 0usize..4), 1..8)
    ) {
        let records: Vec<ToothRecord<f64>> = seeds
            .iter()
            .map(|(cls, x, y, slot)| {
                ToothRecord::disease(
                    BoundingBox::from_xywh(*x, *y, 12.0, 18.0).unwrap(),
                    FdiLabel::from_class_index(*cls as usize).unwrap(),
                    AttributeFlags::single(*slot),
                )
            })
            .collect();
        // Conflicting FDI inside a cluster is a data error, not a property
        // failure; skip those draws.
        let merged = match merge_colocated_boxes(&records, 0.9) {
            Ok(m) => m,
            Err(_) => return Ok(()),
        };
        prop_assert!(merged.len() <= records.len());
        let true_flags = |rs: &[ToothRecord<f64>]| -> usize {
            rs.iter()
                .filter_map(|r| r.attributes)
                .map(|f| f.as_array().iter().filter(|v| **v).count())
                .sum()
        };
        // OR is monotone: at least one true flag per distinct slot survives.
        prop_assert!(true_flags(&merged) >= 1);
        let twice = merge_colocated_boxes(&merged, 0.9).unwrap();
        prop_assert_eq!(merged, twice);
    }
}

#[test]
fn fuse_drops_overlapping_and_duplicate_pseudo_teeth() {
    let fdi = FdiLabel::from_code(36).unwrap();
    let annotated = vec![ToothRecord::disease(
        bb(10.0, 10.0, 30.0, 40.0),
        fdi,
        AttributeFlags::single(1),
    )];

    // Overlaps the annotated box at IoU 0.8: dropped.
    let overlapping = det(bb(10.0, 10.0, 30.0, 34.0), 20, 0.9);
    // Disjoint, accepted (class 22 = FDI 37).
    let fresh = det(bb(50.0, 10.0, 70.0, 40.0), 22, 0.8);
    // Same argmax FDI as `fresh` but lower confidence: dropped.
    let dup = det(bb(80.0, 10.0, 95.0, 40.0), 22, 0.6);
    // Below confidence threshold: dropped.
    let weak = det(bb(50.0, 60.0, 70.0, 90.0), 23, 0.3);

    let (out, summary) =
        fuse_pseudo_labels(&annotated, &[weak.clone(), dup, fresh.clone(), overlapping], 0.5, 0.5);

    assert_eq!(summary.accepted, 1);
    assert_eq!(summary.overlaps_annotated, 1);
    assert_eq!(summary.duplicate_fdi, 1);
    assert_eq!(summary.below_confidence, 1);

    assert_eq!(out.len(), 2);
    // Annotated records pass through unchanged, in order.
    assert_eq!(out[0], annotated[0]);
    let accepted = &out[1];
    assert_eq!(accepted.bbox, fresh.bbox);
    assert_eq!(accepted.fdi.unwrap().class_index(), 22);
    assert_eq!(accepted.attributes.unwrap(), AttributeFlags::all_false());
    assert_eq!(accepted.source, RecordSource::Pseudo);
}

#[test]
fn fuse_keeps_highest_confidence_on_fdi_ties() {
    // Two pseudo detections argmax FDI 36 (class 21), confidences 0.9 and 0.6.
    let lo = det(bb(0.0, 0.0, 10.0, 10.0), 21, 0.6);
    let hi = det(bb(40.0, 0.0, 50.0, 10.0), 21, 0.9);
    let (out, summary) = fuse_pseudo_labels::<f64>(&[], &[lo, hi.clone()], 0.5, 0.5);
    assert_eq!(summary.accepted, 1);
    assert_eq!(out.len(), 1);
    assert_eq!(out[0].bbox, hi.bbox);
    // Brute-force scan: no duplicate FDI in the output.
    let mut seen = std::collections::BTreeSet::new();
    for rec in &out {
        assert!(seen.insert(rec.fdi.unwrap().code()));
    }
}

proptest! {
    /// Fusion keeps every annotated record unchanged and never emits a
    /// duplicate FDI.
    #[test]
    fn fuse_no_duplicate_fdi(
        classes in proptest::collection::vec(0usize..32, 0..40),
        confs in proptest::collection::vec(0.0..1.0f64, 40),
    ) {
        let fdi = FdiLabel::from_code(11).unwrap();
        let annotated = vec![ToothRecord::disease(
            bb(0.0, 0.0, 10.0, 10.0),
            fdi,
            AttributeFlags::single(0),
        )];
        let pseudo: Vec<Detection<f64>> = classes
            .iter()
            .enumerate()
            .map(|(i, cls)| det(
                BoundingBox::from_xywh(20.0 + 11.0 * (i % 10) as f64, 20.0 + 11.0 * (i / 10) as f64, 10.0, 10.0).unwrap(),
                *cls,
                confs[i],
            ))
            .collect();
        let (out, _) = fuse_pseudo_labels(&annotated, &pseudo, 0.5, 0.5);
        prop_assert_eq!(&out[..1], &annotated[..]);
        let codes: Vec<u8> = out.iter().map(|r| r.fdi.unwrap().code()).collect();
        let mut dedup = codes.clone();
        dedup.sort_unstable();
        dedup.dedup();
        prop_assert_eq!(dedup.len(), codes.len());
    }
}
