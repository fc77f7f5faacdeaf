//! FDI two-digit tooth numbering and its 32-way class index algebra.
//!
//! An FDI code is `10 * quadrant + position` with quadrant 1–4 (1 upper
//! right, 2 upper left, 3 lower left, 4 lower right, patient's perspective)
//! and position 1–8 counted from the midline. Class indices are
//! quadrant-major so each quadrant owns a contiguous 8-slot slice, which the
//! quadrant-tier loss and the quadrant evaluation axis rely on.

use serde::{Deserialize, Serialize};

/// Number of valid permanent-dentition FDI codes.
pub const NUM_CLASSES: usize = 32;

/// Teeth per quadrant.
pub const POSITIONS_PER_QUADRANT: usize = 8;

/// A tooth identity in FDI notation. Always valid by construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FdiLabel {
    quadrant: u8,
    position: u8,
}

impl FdiLabel {
    /// Build from quadrant 1–4 and position 1–8. Returns `None` out of range.
    pub fn new(quadrant: u8, position: u8) -> Option<Self> {
        if (1..=4).contains(&quadrant) && (1..=8).contains(&position) {
            Some(Self { quadrant, position })
        } else {
            None
        }
    }

    /// Parse a two-digit code such as 11, 28 or 48.
    pub fn from_code(code: u8) -> Option<Self> {
        Self::new(code / 10, code % 10)
    }

    pub fn quadrant(self) -> u8 {
        self.quadrant
    }

    pub fn position(self) -> u8 {
        self.position
    }

    /// The two-digit FDI code, `10 * quadrant + position`.
    pub fn code(self) -> u8 {
        10 * self.quadrant + self.position
    }

    /// Dense class index 0..32, quadrant-major: `8 * (quadrant - 1) + (position - 1)`.
    pub fn class_index(self) -> usize {
        POSITIONS_PER_QUADRANT * (self.quadrant as usize - 1) + (self.position as usize - 1)
    }

    /// Inverse of [`FdiLabel::class_index`].
    pub fn from_class_index(index: usize) -> Option<Self> {
        if index < NUM_CLASSES {
            Some(Self {
                quadrant: (index / POSITIONS_PER_QUADRANT) as u8 + 1,
                position: (index % POSITIONS_PER_QUADRANT) as u8 + 1,
            })
        } else {
            None
        }
    }

    /// Quadrant remapping under a horizontal image flip: 1↔2, 3↔4.
    /// Position is unchanged. Involution.
    pub fn flipped(self) -> Self {
        Self {
            quadrant: flip_quadrant(self.quadrant),
            position: self.position,
        }
    }

    /// All 32 codes in class-index order (11..18, 21..28, 31..38, 41..48).
    pub fn all() -> impl Iterator<Item = FdiLabel> {
        (0..NUM_CLASSES).map(|i| FdiLabel::from_class_index(i).unwrap())
    }
}

/// Quadrant remapping under a horizontal flip: 1↔2, 3↔4.
pub fn flip_quadrant(quadrant: u8) -> u8 {
    match quadrant {
        1 => 2,
        2 => 1,
        3 => 4,
        4 => 3,
        q => q,
    }
}

impl std::fmt::Display for FdiLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.code())
    }
}

impl Serialize for FdiLabel {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_u8(self.code())
    }
}

impl<'de> Deserialize<'de> for FdiLabel {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let code = u8::deserialize(deserializer)?;
        FdiLabel::from_code(code)
            .ok_or_else(|| serde::de::Error::custom(format!("invalid FDI code {code}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_index_examples() {
        assert_eq!(FdiLabel::new(1, 1).unwrap().class_index(), 0);
        assert_eq!(FdiLabel::new(4, 8).unwrap().class_index(), 31);
        assert_eq!(FdiLabel::new(2, 3).unwrap().class_index(), 10);
    }

    #[test]
    fn class_index_is_a_bijection() {
        for i in 0..NUM_CLASSES {
            let fdi = FdiLabel::from_class_index(i).unwrap();
            assert_eq!(fdi.class_index(), i);
        }
        for fdi in FdiLabel::all() {
            assert_eq!(FdiLabel::from_class_index(fdi.class_index()), Some(fdi));
        }
        assert_eq!(FdiLabel::from_class_index(32), None);
    }

    #[test]
    fn code_covers_exactly_the_valid_range() {
        let codes: Vec<u8> = FdiLabel::all().map(|f| f.code()).collect();
        assert_eq!(codes.len(), 32);
        for q in 1..=4u8 {
            for p in 1..=8u8 {
                assert!(codes.contains(&(10 * q + p)));
            }
        }
        assert_eq!(FdiLabel::from_code(19), None);
        assert_eq!(FdiLabel::from_code(50), None);
        assert_eq!(FdiLabel::from_code(0), None);
    }

    #[test]
    fn flip_examples_and_involution() {
        assert_eq!(FdiLabel::from_code(11).unwrap().flipped().code(), 21);
        assert_eq!(FdiLabel::from_code(38).unwrap().flipped().code(), 48);
        for fdi in FdiLabel::all() {
            assert_eq!(fdi.flipped().flipped(), fdi);
            assert_eq!(fdi.flipped().position(), fdi.position());
            // 1↔2 and 3↔4 pair by toggling the low bit of (quadrant - 1).
            assert_eq!((fdi.flipped().quadrant() - 1) ^ 1, fdi.quadrant() - 1);
        }
    }

    #[test]
    fn flip_exhaustive_table() {
        let expected: [(u8, u8); 8] = [
            (11, 21),
            (18, 28),
            (21, 11),
            (28, 18),
            (31, 41),
            (38, 48),
            (41, 31),
            (48, 38),
        ];
        for (a, b) in expected {
            assert_eq!(FdiLabel::from_code(a).unwrap().flipped().code(), b);
        }
    }
}
