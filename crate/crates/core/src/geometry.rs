//! 2-D affine transforms and bounding boxes in continuous pixel
//! coordinates (pixel `i` covers `[i, i+1)`, center at `i + 0.5`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `p' = A·p + t`, stored row-major as `[a, b, tx, c, d, ty]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Affine(pub [f64; 6]);

impl Affine {
    pub const IDENTITY: Affine = Affine([1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);

    pub fn translation(dx: f64, dy: f64) -> Self {
        Affine([1.0, 0.0, dx, 0.0, 1.0, dy])
    }

    pub fn scaling(sx: f64, sy: f64) -> Self {
        Affine([sx, 0.0, 0.0, 0.0, sy, 0.0])
    }

    /// Counter-clockwise rotation by `theta` radians (in image coordinates,
    /// with y pointing down, this appears clockwise).
    pub fn rotation(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Affine([c, -s, 0.0, s, c, 0.0])
    }

    /// `self ∘ other`: apply `other` first.
    pub fn then_after(&self, other: &Affine) -> Affine {
        let [a, b, tx, c, d, ty] = self.0;
        let [e, f, ux, g, h, uy] = other.0;
        Affine([
            a * e + b * g,
            a * f + b * h,
            a * ux + b * uy + tx,
            c * e + d * g,
            c * f + d * h,
            c * ux + d * uy + ty,
        ])
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let [a, b, tx, c, d, ty] = self.0;
        (a * x + b * y + tx, c * x + d * y + ty)
    }

    pub fn inverse(&self) -> Result<Affine> {
        let [a, b, tx, c, d, ty] = self.0;
        let det = a * d - b * c;
        if det.abs() < 1e-300 || !det.is_finite() {
            return Err(Error::Numeric("singular affine transform".into()));
        }
        let (ia, ib, ic, id) = (d / det, -b / det, -c / det, a / det);
        Ok(Affine([ia, ib, -(ia * tx + ib * ty), ic, id, -(ic * tx + id * ty)]))
    }
}

/// Axis-aligned box by center and extent, in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        BBox {
            cx: (x0 + x1) / 2.0,
            cy: (y0 + y1) / 2.0,
            w: x1 - x0,
            h: y1 - y0,
        }
    }

    pub fn corners(&self) -> (f64, f64, f64, f64) {
        (
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )
    }

    /// True when `other` lies within `self` (with a small tolerance).
    pub fn contains(&self, other: &BBox) -> bool {
        let (a0, b0, a1, b1) = self.corners();
        let (c0, d0, c1, d1) = other.corners();
        let eps = 1e-9;
        c0 >= a0 - eps && d0 >= b0 - eps && c1 <= a1 + eps && d1 <= b1 + eps
    }

    /// Intersection with the image rectangle `[0, w] × [0, h]`; `None` when
    /// nothing remains.
    pub fn clip(&self, img_w: f64, img_h: f64) -> Option<BBox> {
        let (x0, y0, x1, y1) = self.corners();
        let (x0, y0) = (x0.max(0.0), y0.max(0.0));
        let (x1, y1) = (x1.min(img_w), y1.min(img_h));
        (x1 > x0 && y1 > y0).then(|| BBox::from_corners(x0, y0, x1, y1))
    }
}

/// Scales width and height by `delta` about the box center.
pub fn enlarge_bbox(b: BBox, delta: f64) -> Result<BBox> {
    if !(b.w > 0.0 && b.h > 0.0) {
        return Err(Error::Usage(format!("bounding box must have positive extent, got {b:?}")));
    }
    if !(delta >= 1.0) || !delta.is_finite() {
        return Err(Error::Usage(format!("enlargement factor must be ≥ 1, got {delta}")));
    }
    Ok(BBox {
        w: b.w * delta,
        h: b.h * delta,
        ..b
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enlarge_examples() {
        let b = BBox { cx: 50.0, cy: 50.0, w: 40.0, h: 80.0 };
        assert_eq!(enlarge_bbox(b, 1.0).unwrap(), b);
        assert_eq!(
            enlarge_bbox(b, 1.25).unwrap(),
            BBox { cx: 50.0, cy: 50.0, w: 50.0, h: 100.0 }
        );
        assert!(enlarge_bbox(BBox { w: 0.0, ..b }, 1.25).is_err());
        assert!(enlarge_bbox(b, 0.5).is_err());
    }

    #[test]
    fn clipped_box_contains_original_intersection() {
        let b = BBox { cx: 5.0, cy: 90.0, w: 20.0, h: 30.0 };
        let e = enlarge_bbox(b, 1.25).unwrap().clip(96.0, 100.0).unwrap();
        let inter = b.clip(96.0, 100.0).unwrap();
        assert!(e.contains(&inter));
        let (x0, y0, x1, y1) = e.corners();
        assert!(x0 >= 0.0 && y0 >= 0.0 && x1 <= 96.0 && y1 <= 100.0);
    }

    #[test]
    fn affine_inverse_roundtrip() {
        let a = Affine::translation(3.0, -2.0)
            .then_after(&Affine::rotation(0.7))
            .then_after(&Affine::scaling(1.3, 0.8));
        let inv = a.inverse().unwrap();
        let (x, y) = a.apply(12.25, -4.5);
        let (bx, by) = inv.apply(x, y);
        assert!((bx - 12.25).abs() < 1e-12 && (by + 4.5).abs() < 1e-12);
        assert!(Affine::scaling(0.0, 1.0).inverse().is_err());
    }
}
