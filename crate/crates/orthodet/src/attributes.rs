//! The four per-tooth disease attributes, in fixed order.
//!
//! Order everywhere: `is_impacted, has_caries, has_deepcaries, has_lesion`.
//! Ground truth uses the boolean form, the network head and detections the
//! probability form.

use serde::{Deserialize, Serialize};

use crate::Scalar;

/// Number of disease attributes.
pub const NUM_ATTRIBUTES: usize = 4;

/// Attribute slot names in canonical order.
pub const ATTRIBUTE_NAMES: [&str; NUM_ATTRIBUTES] =
    ["is_impacted", "has_caries", "has_deepcaries", "has_lesion"];

/// Fixed-order vector of the four attributes; `V` is `bool` for ground truth
/// and a scalar probability for predictions. Serializes as a 4-element array.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Attributes<V> {
    pub is_impacted: V,
    pub has_caries: V,
    pub has_deepcaries: V,
    pub has_lesion: V,
}

impl<V: Serialize + Copy> Serialize for Attributes<V> {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.as_array().serialize(serializer)
    }
}

impl<'de, V: Deserialize<'de> + Copy> Deserialize<'de> for Attributes<V> {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let arr = <[V; NUM_ATTRIBUTES]>::deserialize(deserializer)?;
        Ok(Self::from_array(arr))
    }
}

pub type AttributeFlags = Attributes<bool>;

impl<V: Copy> Attributes<V> {
    pub fn from_array(a: [V; NUM_ATTRIBUTES]) -> Self {
        Self {
            is_impacted: a[0],
            has_caries: a[1],
            has_deepcaries: a[2],
            has_lesion: a[3],
        }
    }

    pub fn as_array(&self) -> [V; NUM_ATTRIBUTES] {
        [
            self.is_impacted,
            self.has_caries,
            self.has_deepcaries,
            self.has_lesion,
        ]
    }

    pub fn get(&self, slot: usize) -> V {
        self.as_array()[slot]
    }
}

impl<V: Copy> From<[V; NUM_ATTRIBUTES]> for Attributes<V> {
    fn from(a: [V; NUM_ATTRIBUTES]) -> Self {
        Self::from_array(a)
    }
}

impl<V: Clone + Copy> From<Attributes<V>> for [V; NUM_ATTRIBUTES] {
    fn from(a: Attributes<V>) -> Self {
        a.as_array()
    }
}

impl AttributeFlags {
    pub fn all_false() -> Self {
        Self::from_array([false; NUM_ATTRIBUTES])
    }

    /// Element-wise logical OR; used when merging co-located disease boxes.
    pub fn or(&self, other: &Self) -> Self {
        let a = self.as_array();
        let b = other.as_array();
        Self::from_array([a[0] || b[0], a[1] || b[1], a[2] || b[2], a[3] || b[3]])
    }

    pub fn any(&self) -> bool {
        self.as_array().iter().any(|v| *v)
    }

    /// One flag set in the given slot.
    pub fn single(slot: usize) -> Self {
        let mut a = [false; NUM_ATTRIBUTES];
        a[slot] = true;
        Self::from_array(a)
    }
}

impl<T: Scalar> Attributes<T> {
    pub fn zeros() -> Self {
        Self::from_array([T::zero(); NUM_ATTRIBUTES])
    }

    pub fn in_unit_interval(&self) -> bool {
        self.as_array()
            .iter()
            .all(|p| p.is_finite() && *p >= T::zero() && *p <= T::one())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn array_round_trip_preserves_order() {
        let a = Attributes::from_array([true, false, true, false]);
        assert!(a.is_impacted);
        assert!(!a.has_caries);
        assert!(a.has_deepcaries);
        assert!(!a.has_lesion);
        assert_eq!(a.as_array(), [true, false, true, false]);
    }

    #[test]
    fn or_is_monotone() {
        let a = AttributeFlags::single(1);
        let b = AttributeFlags::single(0);
        let m = a.or(&b);
        assert_eq!(m.as_array(), [true, true, false, false]);
        // No true flag is ever lost.
        for i in 0..NUM_ATTRIBUTES {
            assert!(m.get(i) >= a.get(i) && m.get(i) >= b.get(i));
        }
    }

    #[test]
    fn serializes_as_fixed_length_array() {
        let p: Attributes<f64> = Attributes::from_array([0.1, 0.2, 0.3, 0.4]);
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(json, "[0.1,0.2,0.3,0.4]");
        let back: Attributes<f64> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, p);
    }
}
