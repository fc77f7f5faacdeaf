//! Ground-truth tooth records and predicted detections.

use serde::{Deserialize, Serialize};

use crate::attributes::{AttributeFlags, Attributes};
use crate::fdi::{FdiLabel, NUM_CLASSES};
use crate::geometry::BoundingBox;
use crate::Scalar;

/// Where a ground-truth record came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RecordSource {
    #[default]
    Annotated,
    /// Produced by fusing pseudo-labeled healthy teeth into a disease-tier
    /// image; attributes are all false by construction.
    Pseudo,
}

/// One annotated tooth (or, on the quadrant tier, one whole-quadrant region).
///
/// Field population follows the annotation tier: quadrant-tier records carry
/// only `quadrant`; enumeration-tier records add `fdi`; disease-tier records
/// also populate `attributes`. When `fdi` is present its quadrant digit
/// agrees with `quadrant`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToothRecord<T> {
    pub bbox: BoundingBox<T>,
    pub quadrant: u8,
    pub fdi: Option<FdiLabel>,
    pub attributes: Option<AttributeFlags>,
    #[serde(default)]
    pub source: RecordSource,
}

impl<T: Scalar> ToothRecord<T> {
    /// Fully populated disease-tier record.
    pub fn disease(bbox: BoundingBox<T>, fdi: FdiLabel, attributes: AttributeFlags) -> Self {
        Self {
            bbox,
            quadrant: fdi.quadrant(),
            fdi: Some(fdi),
            attributes: Some(attributes),
            source: RecordSource::Annotated,
        }
    }

    /// Enumeration-tier record (no disease information).
    pub fn enumeration(bbox: BoundingBox<T>, fdi: FdiLabel) -> Self {
        Self {
            bbox,
            quadrant: fdi.quadrant(),
            fdi: Some(fdi),
            attributes: None,
            source: RecordSource::Annotated,
        }
    }

    /// Quadrant-tier record: a whole-quadrant region box.
    pub fn quadrant_region(bbox: BoundingBox<T>, quadrant: u8) -> Self {
        Self {
            bbox,
            quadrant,
            fdi: None,
            attributes: None,
            source: RecordSource::Annotated,
        }
    }

    /// Tier-consistency check used by importers and the loss.
    pub fn fields_consistent(&self) -> bool {
        match self.fdi {
            Some(fdi) => fdi.quadrant() == self.quadrant,
            None => self.attributes.is_none(),
        }
    }
}

/// A predicted tooth: box, 32 independent per-class sigmoid scores, four
/// attribute probabilities and an objectness-style confidence.
///
/// `assigned_fdi` is populated by the enumeration post-process; upstream
/// stages leave it `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(
    serialize = "T: Serialize + Copy",
    deserialize = "T: Deserialize<'de> + Copy"
))]
pub struct Detection<T> {
    pub bbox: BoundingBox<T>,
    pub class_probs: Vec<T>,
    pub attribute_probs: Attributes<T>,
    pub confidence: T,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assigned_fdi: Option<FdiLabel>,
}

impl<T: Scalar> Detection<T> {
    pub fn new(
        bbox: BoundingBox<T>,
        class_probs: Vec<T>,
        attribute_probs: Attributes<T>,
        confidence: T,
    ) -> Self {
        debug_assert_eq!(class_probs.len(), NUM_CLASSES);
        Self {
            bbox,
            class_probs,
            attribute_probs,
            confidence,
            assigned_fdi: None,
        }
    }

    /// Class with the highest sigmoid score (first index on ties).
    pub fn argmax_class(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.class_probs.iter().enumerate() {
            if *p > self.class_probs[best] {
                best = i;
            }
        }
        best
    }

    pub fn argmax_fdi(&self) -> FdiLabel {
        FdiLabel::from_class_index(self.argmax_class()).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tier_field_consistency() {
        let bbox = BoundingBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
        let fdi = FdiLabel::from_code(23).unwrap();
        assert!(ToothRecord::disease(bbox, fdi, AttributeFlags::all_false()).fields_consistent());
        assert!(ToothRecord::enumeration(bbox, fdi).fields_consistent());
        assert!(ToothRecord::quadrant_region(bbox, 3).fields_consistent());

        let broken = ToothRecord {
            bbox,
            quadrant: 1,
            fdi: Some(fdi),
            attributes: None,
            source: RecordSource::Annotated,
        };
        assert!(!broken.fields_consistent());
    }

    #[test]
    fn argmax_prefers_first_on_ties() {
        let bbox = BoundingBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
        let mut probs = vec![0.1; NUM_CLASSES];
        probs[5] = 0.9;
        probs[7] = 0.9;
        let det = Detection::new(bbox, probs, Attributes::zeros(), 0.5);
        assert_eq!(det.argmax_class(), 5);
        assert_eq!(det.argmax_fdi().code(), 16);
    }
}
