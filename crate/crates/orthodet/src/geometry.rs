//! Axis-aligned boxes in pixel corner form and IoU arithmetic.
//!
//! Boxes are stored as corners (`x_min, y_min, x_max, y_max`); center or
//! width/height forms are converted at the boundaries where they appear
//! (annotation files, the network head).

use serde::{Deserialize, Serialize};

use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox<T> {
    pub x_min: T,
    pub y_min: T,
    pub x_max: T,
    pub y_max: T,
}

impl<T: Scalar> BoundingBox<T> {
    /// Corner-form constructor; returns `None` unless
    /// `x_min < x_max`, `y_min < y_max` and all coordinates are finite and ≥ 0.
    pub fn new(x_min: T, y_min: T, x_max: T, y_max: T) -> Option<Self> {
        let b = Self {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        b.is_valid().then_some(b)
    }

    /// Convert from `(x, y, w, h)` top-left form.
    pub fn from_xywh(x: T, y: T, w: T, h: T) -> Option<Self> {
        Self::new(x, y, x + w, y + h)
    }

    pub fn is_valid(&self) -> bool {
        [self.x_min, self.y_min, self.x_max, self.y_max]
            .iter()
            .all(|v| v.is_finite() && *v >= T::zero())
            && self.x_min < self.x_max
            && self.y_min < self.y_max
    }

    pub fn width(&self) -> T {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> T {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> T {
        self.width() * self.height()
    }

    pub fn center(&self) -> (T, T) {
        let half = T::from_f64_lossy(0.5);
        (
            (self.x_min + self.x_max) * half,
            (self.y_min + self.y_max) * half,
        )
    }

    /// Intersection area with `other`; zero when disjoint.
    pub fn intersection_area(&self, other: &Self) -> T {
        let ix = (self.x_max.min(other.x_max) - self.x_min.max(other.x_min)).max(T::zero());
        let iy = (self.y_max.min(other.y_max) - self.y_min.max(other.y_min)).max(T::zero());
        ix * iy
    }

    /// Smallest box containing both.
    pub fn union_hull(&self, other: &Self) -> Self {
        Self {
            x_min: self.x_min.min(other.x_min),
            y_min: self.y_min.min(other.y_min),
            x_max: self.x_max.max(other.x_max),
            y_max: self.y_max.max(other.y_max),
        }
    }

    /// Clip to `[0, w] x [0, h]`. Returns `None` when nothing remains.
    pub fn clipped(&self, w: T, h: T) -> Option<Self> {
        Self::new(
            self.x_min.max(T::zero()).min(w),
            self.y_min.max(T::zero()).min(h),
            self.x_max.max(T::zero()).min(w),
            self.y_max.max(T::zero()).min(h),
        )
    }
}

/// Intersection over union of two boxes, in `[0, 1]`; 0 when disjoint.
pub fn box_iou<T: Scalar>(a: &BoundingBox<T>, b: &BoundingBox<T>) -> T {
    let inter = a.intersection_area(b);
    if inter <= T::zero() {
        return T::zero();
    }
    let union = a.area() + b.area() - inter;
    inter / union
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bb(x0: f64, y0: f64, x1: f64, y1: f64) -> BoundingBox<f64> {
        BoundingBox::new(x0, y0, x1, y1).unwrap()
    }

    #[test]
    fn iou_identical_is_one() {
        let a = bb(1.0, 2.0, 5.0, 7.0);
        assert_eq!(box_iou(&a, &a), 1.0);
    }

    #[test]
    fn iou_disjoint_is_zero() {
        let a = bb(0.0, 0.0, 1.0, 1.0);
        let b = bb(2.0, 2.0, 3.0, 3.0);
        assert_eq!(box_iou(&a, &b), 0.0);
        // Touching edges count as disjoint (zero-area intersection).
        let c = bb(1.0, 0.0, 2.0, 1.0);
        assert_eq!(box_iou(&a, &c), 0.0);
    }

    #[test]
    fn iou_overlap_hand_computed() {
        // inter = 1 * 2 = 2, union = 4 + 4 - 2 = 6 -> 1/3
        let a = bb(0.0, 0.0, 2.0, 2.0);
        let b = bb(1.0, 0.0, 3.0, 2.0);
        let iou = box_iou(&a, &b);
        assert!((iou - 1.0 / 3.0).abs() < 1e-12, "{iou}");
    }

    #[test]
    fn rejects_invalid_corners() {
        assert!(BoundingBox::new(2.0, 0.0, 1.0, 1.0).is_none());
        assert!(BoundingBox::new(0.0, 0.0, 1.0, 0.0).is_none());
        assert!(BoundingBox::new(-1.0, 0.0, 1.0, 1.0).is_none());
        assert!(BoundingBox::new(0.0, 0.0, f64::NAN, 1.0).is_none());
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(
            ax in 0.0..100.0f64, ay in 0.0..100.0f64, aw in 0.1..50.0f64, ah in 0.1..50.0f64,
            bx in 0.0..100.0f64, by in 0.0..100.0f64, bw in 0.1..50.0f64, bh in 0.1..50.0f64,
        ) {
            let a = BoundingBox::from_xywh(ax, ay, aw, ah).unwrap();
            let b = BoundingBox::from_xywh(bx, by, bw, bh).unwrap();
            let ab = box_iou(&a, &b);
            let ba = box_iou(&b, &a);
            prop_assert_eq!(ab, ba);
            prop_assert!((0.0..=1.0).contains(&ab));
            // IoU of 1 only for identical boxes.
            if ab == 1.0 {
                prop_assert_eq!(a, b);
            }
        }
    }
}
