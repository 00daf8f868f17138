//! Axis-aligned box arithmetic and non-maximum suppression.
//!
//! Boxes are in corner form, normalized to the image: `x` grows rightward,
//! `y` downward, `(x1, y1)` is the top-left corner and `(x2, y2)` the
//! bottom-right one.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BBox<T> {
    pub x1: T,
    pub y1: T,
    pub x2: T,
    pub y2: T,
}

impl<T: Real> BBox<T> {
    pub fn new(x1: T, y1: T, x2: T, y2: T) -> Self {
        Self { x1, y1, x2, y2 }
    }

    /// Box from center and size, without clipping.
    pub fn from_center(cx: T, cy: T, w: T, h: T) -> Self {
        let two = T::lit(2.0);
        Self::new(cx - w / two, cy - h / two, cx + w / two, cy + h / two)
    }

    pub fn width(&self) -> T {
        (self.x2 - self.x1).max(T::zero())
    }

    pub fn height(&self) -> T {
        (self.y2 - self.y1).max(T::zero())
    }

    pub fn area(&self) -> T {
        self.width() * self.height()
    }

    pub fn center(&self) -> (T, T) {
        let two = T::lit(2.0);
        ((self.x1 + self.x2) / two, (self.y1 + self.y2) / two)
    }

    pub fn is_finite(&self) -> bool {
        self.x1.is_finite() && self.y1.is_finite() && self.x2.is_finite() && self.y2.is_finite()
    }

    /// Ordered corners, finite, inside the unit square.
    pub fn is_valid(&self) -> bool {
        let unit = |v: T| v >= T::zero() && v <= T::one();
        self.is_finite()
            && self.x1 <= self.x2
            && self.y1 <= self.y2
            && unit(self.x1)
            && unit(self.y1)
            && unit(self.x2)
            && unit(self.y2)
    }

    pub fn intersection_area(&self, other: &Self) -> T {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        if w <= T::zero() || h <= T::zero() {
            T::zero()
        } else {
            w * h
        }
    }

    /// Intersection over union; zero when the union is empty.
    pub fn iou(&self, other: &Self) -> T {
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        if union <= T::zero() {
            T::zero()
        } else {
            (inter / union).min(T::one())
        }
    }

    /// Clamps every coordinate to `[0, 1]` and restores corner ordering.
    pub fn clip_to_unit(&self) -> Result<Self> {
        if !self.is_finite() {
            return Err(Error::InvalidGeometry(format!("non-finite box coordinates {self:?}")));
        }
        let clamp = |v: T| v.max(T::zero()).min(T::one());
        let (x1, x2) = (clamp(self.x1), clamp(self.x2));
        let (y1, y2) = (clamp(self.y1), clamp(self.y2));
        Ok(Self::new(x1.min(x2), y1.min(y2), x1.max(x2), y1.max(y2)))
    }

    /// Lexicographic comparison of `(x1, y1, x2, y2)`.
    pub fn lex_cmp(&self, other: &Self) -> Ordering {
        [self.x1, self.y1, self.x2, self.y2]
            .iter()
            .zip([other.x1, other.y1, other.x2, other.y2].iter())
            .map(|(a, b)| a.partial_cmp(b).unwrap_or(Ordering::Equal))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    }

    pub fn cast<U: Real>(&self) -> BBox<U> {
        BBox::new(
            U::lit(self.x1.as_f64()),
            U::lit(self.y1.as_f64()),
            U::lit(self.x2.as_f64()),
            U::lit(self.y2.as_f64()),
        )
    }
}

pub fn iou<T: Real>(a: &BBox<T>, b: &BBox<T>) -> T {
    a.iou(b)
}

pub fn clip_to_unit<T: Real>(b: &BBox<T>) -> Result<BBox<T>> {
    b.clip_to_unit()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection<T> {
    #[serde(flatten)]
    pub bbox: BBox<T>,
    pub confidence: T,
    pub class_id: usize,
}

impl<T: Real> Detection<T> {
    pub fn new(bbox: BBox<T>, confidence: T, class_id: usize) -> Self {
        Self {
            bbox,
            confidence,
            class_id,
        }
    }

    pub fn is_valid(&self, num_classes: usize) -> bool {
        self.bbox.is_valid()
            && self.confidence >= T::zero()
            && self.confidence <= T::one()
            && self.class_id < num_classes
    }

    pub fn cast<U: Real>(&self) -> Detection<U> {
        Detection::new(self.bbox.cast(), U::lit(self.confidence.as_f64()), self.class_id)
    }
}

/// Total order used wherever detections are ranked: descending confidence,
/// then ascending class id, then lexicographic box coordinates.
pub fn rank_order<T: Real>(a: &Detection<T>, b: &Detection<T>) -> Ordering {
    b.confidence
        .partial_cmp(&a.confidence)
        .unwrap_or(Ordering::Equal)
        .then(a.class_id.cmp(&b.class_id))
        .then_with(|| a.bbox.lex_cmp(&b.bbox))
}

/// Greedy non-maximum suppression.
///
/// Detections are visited in [`rank_order`]; one is dropped when its IoU
/// with an already kept detection exceeds `iou_threshold` (restricted to
/// the same class when `class_aware`). The output is in rank order.
pub fn nms<T: Real>(dets: &[Detection<T>], iou_threshold: T, class_aware: bool) -> Vec<Detection<T>> {
    let mut ranked = dets.to_vec();
    ranked.sort_by(rank_order);

    let mut kept: Vec<Detection<T>> = Vec::with_capacity(ranked.len());
    for det in ranked {
        let suppressed = kept
            .iter()
            .any(|k| (!class_aware || k.class_id == det.class_id) && k.bbox.iou(&det.bbox) > iou_threshold);
        if !suppressed {
            kept.push(det);
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox<f64> {
        BBox::new(x1, y1, x2, y2)
    }

    #[test]
    fn iou_examples() {
        assert_eq!(iou(&b(0., 0., 0.2, 0.2), &b(0., 0., 0.2, 0.2)), 1.0);
        assert_eq!(iou(&b(0., 0., 0.1, 0.1), &b(0.5, 0.5, 0.6, 0.6)), 0.0);
        // intersection 0.02, union 0.06
        let v = iou(&b(0., 0., 0.2, 0.2), &b(0.1, 0., 0.3, 0.2));
        assert!((v - 1.0 / 3.0).abs() < 1e-12, "{v}");
    }

    #[test]
    fn degenerate_boxes_have_zero_iou() {
        let p = b(0.3, 0.3, 0.3, 0.3);
        assert_eq!(iou(&p, &p), 0.0);
        let line = b(0.1, 0.1, 0.1, 0.5);
        assert_eq!(iou(&line, &b(0., 0., 1., 1.)), 0.0);
    }

    #[test]
    fn clip_examples() {
        assert_eq!(clip_to_unit(&b(-0.1, 0., 0.5, 0.5)).unwrap(), b(0., 0., 0.5, 0.5));
        assert_eq!(clip_to_unit(&b(0.2, 0.2, 0.1, 0.3)).unwrap(), b(0.1, 0.2, 0.2, 0.3));
        assert_eq!(clip_to_unit(&b(0., 0., 1., 1.)).unwrap(), b(0., 0., 1., 1.));
        assert!(matches!(
            clip_to_unit(&b(f64::NAN, 0., 1., 1.)),
            Err(Error::InvalidGeometry(_))
        ));
        assert!(clip_to_unit(&b(0., 0., f64::INFINITY, 1.)).is_err());
    }

    #[test]
    fn nms_examples() {
        let one = vec![Detection::new(b(0.1, 0.1, 0.4, 0.4), 0.7, 0)];
        assert_eq!(nms(&one, 0.5, true), one);

        let a = Detection::new(b(0.1, 0.1, 0.4, 0.4), 0.8, 0);
        let hi = Detection::new(b(0.1, 0.1, 0.4, 0.4), 0.9, 0);
        assert_eq!(nms(&[a, hi], 0.5, true), vec![hi]);

        let far = Detection::new(b(0.6, 0.6, 0.9, 0.9), 0.8, 0);
        assert_eq!(nms(&[far, hi], 0.5, true), vec![hi, far]);
    }

    #[test]
    fn class_aware_keeps_overlapping_other_class() {
        let a = Detection::new(b(0.1, 0.1, 0.4, 0.4), 0.9, 0);
        let c = Detection::new(b(0.1, 0.1, 0.4, 0.4), 0.8, 1);
        assert_eq!(nms(&[a, c], 0.5, true).len(), 2);
        assert_eq!(nms(&[a, c], 0.5, false), vec![a]);
    }

    #[test]
    fn ties_break_by_class_then_coordinates() {
        let a = Detection::new(b(0.5, 0.5, 0.6, 0.6), 0.5, 1);
        let c = Detection::new(b(0.0, 0.0, 0.1, 0.1), 0.5, 1);
        let d = Detection::new(b(0.7, 0.7, 0.8, 0.8), 0.5, 0);
        let out = nms(&[a, c, d], 0.5, true);
        assert_eq!(out, vec![d, c, a]);
    }

    #[test]
    fn works_in_single_precision() {
        let a = BBox::<f32>::new(0., 0., 0.2, 0.2);
        let c = BBox::<f32>::new(0.1, 0., 0.3, 0.2);
        assert!((a.iou(&c) - 1.0 / 3.0).abs() < 1e-6);
    }

    fn arb_box() -> impl Strategy<Value = BBox<f64>> {
        (0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64)
            .prop_map(|(a, b, c, d)| BBox::new(a.min(c), b.min(d), a.max(c), b.max(d)))
    }

    fn arb_dets() -> impl Strategy<Value = Vec<Detection<f64>>> {
        prop::collection::vec(
            (arb_box(), 0.0..1.0f64, 0usize..3).prop_map(|(b, c, k)| Detection::new(b, c, k)),
            0..24,
        )
    }

    proptest! {
        #[test]
        fn iou_is_symmetric(a in arb_box(), c in arb_box()) {
            prop_assert_eq!(a.iou(&c), c.iou(&a));
        }

        #[test]
        fn iou_self_is_one(a in arb_box()) {
            prop_assume!(a.area() > 1e-12);
            prop_assert!((a.iou(&a) - 1.0).abs() < 1e-12);
        }

        #[test]
        fn nms_is_idempotent(dets in arb_dets(), t in 0.0..1.0f64, aware in any::<bool>()) {
            let once = nms(&dets, t, aware);
            prop_assert_eq!(nms(&once, t, aware), once);
        }

        #[test]
        fn nms_output_is_subset(dets in arb_dets(), t in 0.0..1.0f64) {
            for k in nms(&dets, t, true) {
                prop_assert!(dets.contains(&k));
            }
        }
    }
}
