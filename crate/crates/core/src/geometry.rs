//! Axis-aligned boxes in continuous image coordinates.
//!
//! The origin is the top-left corner of the image and `y` grows downward.
//! Coordinates are never rounded: the adaptive shrink multiplies an extent by
//! `1 - alpha` on every step and rounding would break that decay.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid box [{0}, {1}, {2}, {3}]: need finite coordinates with x_tl < x_br and y_tl < y_br")]
    InvalidBox(f64, f64, f64, f64),
    #[error("invalid frame {0}x{1}: width and height must be positive and finite")]
    InvalidFrame(f64, f64),
    #[error("shrink factor {0} outside the open interval (0, 1)")]
    BadAlpha(f64),
    #[error("shrink amount {0} would collapse the box")]
    BadStride(f64),
    #[error("box {0:?} is not contained in the {1}x{2} frame")]
    OutsideFrame([f64; 4], f64, f64),
}

/// Axis-aligned rectangle `[x_tl, y_tl, x_br, y_br]`.
///
/// Serialized as a 4-element array everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    x_tl: f64,
    y_tl: f64,
    x_br: f64,
    y_br: f64,
}

impl BBox {
    pub fn new(x_tl: f64, y_tl: f64, x_br: f64, y_br: f64) -> Result<Self, GeometryError> {
        let finite = [x_tl, y_tl, x_br, y_br].iter().all(|v| v.is_finite());
        if !finite || x_tl >= x_br || y_tl >= y_br {
            return Err(GeometryError::InvalidBox(x_tl, y_tl, x_br, y_br));
        }
        Ok(Self { x_tl, y_tl, x_br, y_br })
    }

    pub fn x_tl(&self) -> f64 {
        self.x_tl
    }

    pub fn y_tl(&self) -> f64 {
        self.y_tl
    }

    pub fn x_br(&self) -> f64 {
        self.x_br
    }

    pub fn y_br(&self) -> f64 {
        self.y_br
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x_tl, self.y_tl, self.x_br, self.y_br]
    }

    pub fn width(&self) -> f64 {
        self.x_br - self.x_tl
    }

    pub fn height(&self) -> f64 {
        self.y_br - self.y_tl
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x_tl + self.x_br), 0.5 * (self.y_tl + self.y_br))
    }

    /// Area of the overlap with `other`; zero when the boxes only touch.
    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x_br.min(other.x_br) - self.x_tl.max(other.x_tl);
        let h = self.y_br.min(other.y_br) - self.y_tl.max(other.y_tl);
        if w > 0.0 && h > 0.0 {
            w * h
        } else {
            0.0
        }
    }

    /// Overlapping region, or `None` for disjoint or touching boxes.
    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        BBox::new(
            self.x_tl.max(other.x_tl),
            self.y_tl.max(other.y_tl),
            self.x_br.min(other.x_br),
            self.y_br.min(other.y_br),
        )
        .ok()
    }

    pub fn overlaps(&self, other: &BBox) -> bool {
        self.intersection_area(other) > 0.0
    }

    /// True when `other` lies inside `self` (boundaries may coincide).
    pub fn contains(&self, other: &BBox) -> bool {
        self.x_tl <= other.x_tl
            && self.y_tl <= other.y_tl
            && other.x_br <= self.x_br
            && other.y_br <= self.y_br
    }

    /// Clamp into the frame. Returns `None` if nothing of positive area is left.
    pub fn clamp_to(&self, frame: &ImageFrame) -> Option<BBox> {
        BBox::new(
            self.x_tl.max(0.0),
            self.y_tl.max(0.0),
            self.x_br.min(frame.width()),
            self.y_br.min(frame.height()),
        )
        .ok()
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = GeometryError;

    fn try_from(v: [f64; 4]) -> Result<Self, Self::Error> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.to_array()
    }
}

/// Image dimensions in the same units as [`BBox`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FrameRepr", into = "FrameRepr")]
pub struct ImageFrame {
    width: f64,
    height: f64,
}

#[derive(Serialize, Deserialize)]
struct FrameRepr {
    width: f64,
    height: f64,
}

impl TryFrom<FrameRepr> for ImageFrame {
    type Error = GeometryError;

    fn try_from(r: FrameRepr) -> Result<Self, Self::Error> {
        ImageFrame::new(r.width, r.height)
    }
}

impl From<ImageFrame> for FrameRepr {
    fn from(f: ImageFrame) -> Self {
        FrameRepr {
            width: f.width,
            height: f.height,
        }
    }
}

impl ImageFrame {
    pub fn new(width: f64, height: f64) -> Result<Self, GeometryError> {
        if !(width.is_finite() && height.is_finite() && width > 0.0 && height > 0.0) {
            return Err(GeometryError::InvalidFrame(width, height));
        }
        Ok(Self { width, height })
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn height(&self) -> f64 {
        self.height
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    /// The whole image as a box, `[0, 0, W, H]`.
    pub fn full_box(&self) -> BBox {
        BBox {
            x_tl: 0.0,
            y_tl: 0.0,
            x_br: self.width,
            y_br: self.height,
        }
    }

    pub fn contains(&self, b: &BBox) -> bool {
        self.full_box().contains(b)
    }
}

/// Which side of a box moves inward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Top,
    Bottom,
    Left,
    Right,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::Top, Side::Bottom, Side::Left, Side::Right];

    fn is_vertical_axis(self) -> bool {
        matches!(self, Side::Top | Side::Bottom)
    }
}

/// Intersection over union; 0 for disjoint or touching boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Move one side inward by `alpha` times the current extent along its axis.
pub fn shrink(p: &BBox, side: Side, alpha: f64) -> Result<BBox, GeometryError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(GeometryError::BadAlpha(alpha));
    }
    let extent = if side.is_vertical_axis() {
        p.height()
    } else {
        p.width()
    };
    shrink_by(p, side, alpha * extent)
}

/// Move one side inward by an absolute amount (the fixed-stride variant).
pub fn shrink_by(p: &BBox, side: Side, amount: f64) -> Result<BBox, GeometryError> {
    if !(amount.is_finite() && amount > 0.0) {
        return Err(GeometryError::BadStride(amount));
    }
    let mut out = *p;
    match side {
        Side::Top => out.y_tl = p.y_tl + amount,
        Side::Bottom => out.y_br = p.y_br - amount,
        Side::Left => out.x_tl = p.x_tl + amount,
        Side::Right => out.x_br = p.x_br - amount,
    }
    if out.x_tl >= out.x_br || out.y_tl >= out.y_br || out == *p {
        return Err(GeometryError::BadStride(amount));
    }
    Ok(out)
}

/// Normalized position and relative area of a box inside the image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialFeature(pub [f64; 5]);

impl SpatialFeature {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// `[x_tl/W, y_tl/H, x_br/W, y_br/H, w*h/(W*H)]`.
pub fn spatial_feature(p: &BBox, frame: &ImageFrame) -> Result<SpatialFeature, GeometryError> {
    if !frame.contains(p) {
        return Err(GeometryError::OutsideFrame(
            p.to_array(),
            frame.width(),
            frame.height(),
        ));
    }
    let (w, h) = (frame.width(), frame.height());
    Ok(SpatialFeature([
        p.x_tl / w,
        p.y_tl / h,
        p.x_br / w,
        p.y_br / h,
        p.area() / frame.area(),
    ]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bx(a: f64, b: f64, c: f64, d: f64) -> BBox {
        BBox::new(a, b, c, d).unwrap()
    }

    #[test]
    fn iou_examples() {
        assert_eq!(iou(&bx(0., 0., 10., 10.), &bx(0., 0., 10., 10.)), 1.0);
        assert_eq!(iou(&bx(0., 0., 1., 1.), &bx(5., 5., 6., 6.)), 0.0);
        // inter = 1, union = 4 + 4 - 1
        let v = iou(&bx(0., 0., 2., 2.), &bx(1., 1., 3., 3.));
        assert!((v - 1.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn touching_boxes_have_zero_iou() {
        assert_eq!(iou(&bx(0., 0., 1., 1.), &bx(1., 0., 2., 1.)), 0.0);
        assert_eq!(iou(&bx(0., 0., 1., 1.), &bx(1., 1., 2., 2.)), 0.0);
    }

    #[test]
    fn shrink_examples() {
        let p = bx(0., 0., 100., 100.);
        assert_eq!(shrink(&p, Side::Top, 0.2).unwrap(), bx(0., 20., 100., 100.));
        assert_eq!(shrink(&p, Side::Right, 0.2).unwrap(), bx(0., 0., 80., 100.));
        let once = shrink(&p, Side::Left, 0.2).unwrap();
        assert_eq!(once, bx(20., 0., 100., 100.));
        let twice = shrink(&once, Side::Left, 0.2).unwrap();
        assert_eq!(twice, bx(36., 0., 100., 100.));
        assert_eq!(shrink(&p, Side::Bottom, 0.2).unwrap(), bx(0., 0., 100., 80.));
    }

    #[test]
    fn shrink_rejects_bad_alpha() {
        let p = bx(0., 0., 10., 10.);
        for a in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(shrink(&p, Side::Top, a), Err(GeometryError::BadAlpha(_))));
        }
    }

    #[test]
    fn shrink_by_rejects_collapse() {
        let p = bx(0., 0., 10., 10.);
        assert!(shrink_by(&p, Side::Left, 10.0).is_err());
        assert!(shrink_by(&p, Side::Left, 0.0).is_err());
        assert_eq!(shrink_by(&p, Side::Left, 4.0).unwrap(), bx(4., 0., 10., 10.));
    }

    #[test]
    fn spatial_feature_examples() {
        let f = ImageFrame::new(100., 100.).unwrap();
        assert_eq!(
            spatial_feature(&f.full_box(), &f).unwrap().0,
            [0., 0., 1., 1., 1.]
        );
        let s = spatial_feature(&bx(10., 20., 30., 60.), &f).unwrap().0;
        for (a, b) in s.iter().zip([0.1, 0.2, 0.3, 0.6, 0.08]) {
            assert!((a - b).abs() < 1e-12);
        }
        let f2 = ImageFrame::new(100., 200.).unwrap();
        let s = spatial_feature(&bx(50., 50., 60., 60.), &f2).unwrap().0;
        for (a, b) in s.iter().zip([0.5, 0.25, 0.6, 0.3, 0.005]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(spatial_feature(&bx(50., 50., 160., 60.), &f).is_err());
    }

    #[test]
    fn invalid_inputs_rejected() {
        assert!(BBox::new(1., 0., 1., 2.).is_err());
        assert!(BBox::new(0., 0., f64::INFINITY, 2.).is_err());
        assert!(ImageFrame::new(0., 5.).is_err());
        assert!(serde_json::from_str::<BBox>("[3,0,1,1]").is_err());
    }

    #[test]
    fn serializes_as_four_array() {
        let b = bx(1.5, 2., 3., 4.25);
        let s = serde_json::to_string(&b).unwrap();
        assert_eq!(s, "[1.5,2.0,3.0,4.25]");
        assert_eq!(serde_json::from_str::<BBox>(&s).unwrap(), b);
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (0.0..90.0f64, 0.0..90.0f64, 0.5..50.0f64, 0.5..50.0f64)
            .prop_map(|(x, y, w, h)| bx(x, y, x + w, y + h))
    }

    fn arb_side() -> impl Strategy<Value = Side> {
        prop::sample::select(Side::ALL.to_vec())
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let ab = iou(&a, &b);
            prop_assert_eq!(ab, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(iou(&a, &a), 1.0);
        }

        #[test]
        fn shrink_strictly_inside_and_other_sides_fixed(p in arb_box(), side in arb_side(), alpha in 0.01..0.99f64) {
            let q = shrink(&p, side, alpha).unwrap();
            prop_assert!(p.contains(&q));
            prop_assert!(q.area() < p.area());
            let (pa, qa) = (p.to_array(), q.to_array());
            let moved = match side { Side::Left => 0, Side::Top => 1, Side::Right => 2, Side::Bottom => 3 };
            for i in 0..4 {
                if i != moved {
                    prop_assert_eq!(pa[i].to_bits(), qa[i].to_bits());
                }
            }
        }

        #[test]
        fn repeated_shrink_decays_geometrically(p in arb_box(), side in arb_side(), k in 1usize..=20) {
            let alpha = 0.2;
            let extent = |b: &BBox| if matches!(side, Side::Top | Side::Bottom) { b.height() } else { b.width() };
            let mut q = p;
            for _ in 0..k {
                q = shrink(&q, side, alpha).unwrap();
            }
            let expected = extent(&p) * (1.0 - alpha).powi(k as i32);
            prop_assert!((extent(&q) - expected).abs() < 1e-9);
        }

        #[test]
        fn spatial_area_component_consistent(p in arb_box()) {
            let frame = ImageFrame::new(140.0, 140.0).unwrap();
            let s = spatial_feature(&p, &frame).unwrap().0;
            prop_assert!(s.iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert!((s[4] - (s[2] - s[0]) * (s[3] - s[1])).abs() < 1e-9);
        }
    }
}
