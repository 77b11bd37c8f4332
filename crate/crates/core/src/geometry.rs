//! Point clouds, axis-aligned boxes and the overlap math built on them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub type Point3 = [f64; 3];

/// `N×3` coordinates in meters, plus optional per-point channels
/// (colour in `[0,1]`, for instance).
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
    extra: Option<Matrix>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>, extra: Option<Matrix>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Geometry("point cloud needs at least one point".into()));
        }
        if points.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Geometry("non-finite point coordinate".into()));
        }
        if let Some(e) = &extra {
            if e.rows() != points.len() {
                return Err(Error::Geometry(format!(
                    "extra channels have {} rows for {} points",
                    e.rows(),
                    points.len()
                )));
            }
        }
        Ok(PointCloud { points, extra })
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn extra(&self) -> Option<&Matrix> {
        self.extra.as_ref()
    }

    pub fn extra_channels(&self) -> usize {
        self.extra.as_ref().map_or(0, Matrix::cols)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Keeps only the points at `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        let points = idx.iter().map(|&i| self.points[i]).collect();
        let extra = self.extra.as_ref().map(|e| e.select_rows(idx));
        PointCloud::new(points, extra)
    }

    pub fn translated(&self, t: Point3) -> Self {
        let points = self.points.iter().map(|p| add(*p, t)).collect();
        PointCloud { points, extra: self.extra.clone() }
    }

    /// Tight bounding region `(min, max)`.
    pub fn bounds(&self) -> (Point3, Point3) {
        bounds_of(&self.points)
    }
}

/// Center/size box; the minimum corner is `center - size/2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisAlignedBox {
    pub center: Point3,
    pub size: Point3,
}

impl AxisAlignedBox {
    pub fn new(center: Point3, size: Point3) -> Result<Self> {
        if center.iter().chain(&size).any(|x| !x.is_finite()) {
            return Err(Error::Geometry("non-finite box parameter".into()));
        }
        if size.iter().any(|&s| s <= 0.0) {
            return Err(Error::Geometry(format!("box size must be positive, got {size:?}")));
        }
        Ok(AxisAlignedBox { center, size })
    }

    pub fn from_min_max(min: Point3, max: Point3) -> Result<Self> {
        let center = [0, 1, 2].map(|i| 0.5 * (min[i] + max[i]));
        let size = [0, 1, 2].map(|i| max[i] - min[i]);
        AxisAlignedBox::new(center, size)
    }

    pub fn min(&self) -> Point3 {
        [0, 1, 2].map(|i| self.center[i] - 0.5 * self.size[i])
    }

    pub fn max(&self) -> Point3 {
        [0, 1, 2].map(|i| self.center[i] + 0.5 * self.size[i])
    }

    pub fn volume(&self) -> f64 {
        self.size.iter().product()
    }

    /// Closed containment test.
    pub fn contains(&self, p: Point3) -> bool {
        let (lo, hi) = (self.min(), self.max());
        (0..3).all(|i| p[i] >= lo[i] && p[i] <= hi[i])
    }

    pub fn translated(&self, t: Point3) -> Self {
        AxisAlignedBox { center: add(self.center, t), size: self.size }
    }

    pub fn is_valid(&self) -> bool {
        self.size.iter().all(|&s| s > 0.0) && self.center.iter().chain(&self.size).all(|x| x.is_finite())
    }
}

/// Intersection over union of two boxes. Touching faces overlap with zero
/// volume, so the result is exactly 0.
pub fn iou(a: &AxisAlignedBox, b: &AxisAlignedBox) -> f64 {
    let (amin, amax, bmin, bmax) = (a.min(), a.max(), b.min(), b.max());
    let mut inter = 1.0;
    for i in 0..3 {
        let lo = amin[i].max(bmin[i]);
        let hi = amax[i].min(bmax[i]);
        if hi <= lo {
            return 0.0;
        }
        inter *= hi - lo;
    }
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// The eight corners. Corner `i` takes the maximum along x when bit 0 of `i`
/// is set, along y for bit 1 and along z for bit 2; otherwise the minimum.
pub fn box_corners(b: &AxisAlignedBox) -> [Point3; 8] {
    let (lo, hi) = (b.min(), b.max());
    std::array::from_fn(|i| {
        [
            if i & 1 != 0 { hi[0] } else { lo[0] },
            if i & 2 != 0 { hi[1] } else { lo[1] },
            if i & 4 != 0 { hi[2] } else { lo[2] },
        ]
    })
}

/// Tightest axis-aligned box around a set of corner points.
pub fn box_from_corners(corners: &[Point3]) -> Result<AxisAlignedBox> {
    if corners.is_empty() {
        return Err(Error::Geometry("no corners".into()));
    }
    let (lo, hi) = bounds_of(corners);
    AxisAlignedBox::from_min_max(lo, hi)
}

/// Rotation matrix `Rz(γ)·Ry(β)·Rx(α)` for `angles = [α, β, γ]`: points are
/// rotated about x first, then y, then z, all about the origin.
pub fn rotation_matrix(angles: [f64; 3]) -> [[f64; 3]; 3] {
    let (sa, ca) = angles[0].sin_cos();
    let (sb, cb) = angles[1].sin_cos();
    let (sg, cg) = angles[2].sin_cos();
    let rx = [[1.0, 0.0, 0.0], [0.0, ca, -sa], [0.0, sa, ca]];
    let ry = [[cb, 0.0, sb], [0.0, 1.0, 0.0], [-sb, 0.0, cb]];
    let rz = [[cg, -sg, 0.0], [sg, cg, 0.0], [0.0, 0.0, 1.0]];
    mat3_mul(&rz, &mat3_mul(&ry, &rx))
}

pub fn apply_rotation(r: &[[f64; 3]; 3], p: Point3) -> Point3 {
    [0, 1, 2].map(|i| r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2])
}

pub fn rotate_points(pc: &PointCloud, angles: [f64; 3]) -> PointCloud {
    let r = rotation_matrix(angles);
    let points = pc.points.iter().map(|&p| apply_rotation(&r, p)).collect();
    PointCloud { points, extra: pc.extra.clone() }
}

/// Axis-aligned hull of a rotated box.
pub fn rotate_box(b: &AxisAlignedBox, r: &[[f64; 3]; 3]) -> AxisAlignedBox {
    let corners = box_corners(b).map(|c| apply_rotation(r, c));
    box_from_corners(&corners).expect("rotation preserves a valid box")
}

fn mat3_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    std::array::from_fn(|i| std::array::from_fn(|j| (0..3).map(|k| a[i][k] * b[k][j]).sum()))
}

pub fn add(a: Point3, b: Point3) -> Point3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn dist2(a: Point3, b: Point3) -> f64 {
    let d = sub(a, b);
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

pub fn bounds_of(points: &[Point3]) -> (Point3, Point3) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for i in 0..3 {
            lo[i] = lo[i].min(p[i]);
            hi[i] = hi[i].max(p[i]);
        }
    }
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn unit(c: Point3) -> AxisAlignedBox {
        AxisAlignedBox::new(c, [1.0; 3]).unwrap()
    }

    #[test]
    fn iou_worked_examples() {
        assert_eq!(iou(&unit([0.0; 3]), &unit([0.0; 3])), 1.0);
        assert_eq!(iou(&unit([0.0; 3]), &unit([2.0, 0.0, 0.0])), 0.0);
        // Side-2 boxes offset by one meter on every axis: overlap 1, union 15.
        let a = AxisAlignedBox::new([0.5; 3], [2.0; 3]).unwrap();
        let b = AxisAlignedBox::new([1.5; 3], [2.0; 3]).unwrap();
        assert_eq!(iou(&a, &b), 1.0 / 15.0);
        // With side 1 the same centers only touch at a corner.
        assert_eq!(iou(&unit([0.5; 3]), &unit([1.5; 3])), 0.0);
    }

    #[test]
    fn touching_boxes_have_zero_iou() {
        assert_eq!(iou(&unit([0.0; 3]), &unit([1.0, 0.0, 0.0])), 0.0);
    }

    #[test]
    fn invalid_boxes_rejected() {
        assert!(AxisAlignedBox::new([0.0; 3], [1.0, 0.0, 1.0]).is_err());
        assert!(AxisAlignedBox::new([f64::NAN, 0.0, 0.0], [1.0; 3]).is_err());
        assert!(PointCloud::new(vec![], None).is_err());
        assert!(PointCloud::new(vec![[0.0; 3]], Some(Matrix::zeros(2, 3))).is_err());
    }

    #[test]
    fn corners_of_centered_cube() {
        let b = AxisAlignedBox::new([0.0; 3], [2.0; 3]).unwrap();
        let c = box_corners(&b);
        assert_eq!(c[0], [-1.0, -1.0, -1.0]);
        assert_eq!(c[1], [1.0, -1.0, -1.0]);
        assert_eq!(c[6], [-1.0, 1.0, 1.0]);
        assert_eq!(c[7], [1.0, 1.0, 1.0]);
        let mut signs: Vec<_> = c.iter().map(|p| p.map(|x| x as i32)).collect();
        signs.sort();
        signs.dedup();
        assert_eq!(signs.len(), 8);
    }

    #[test]
    fn corners_translate_and_round_trip() {
        let b = AxisAlignedBox::new([0.3, -1.0, 2.0], [0.5, 1.5, 0.25]).unwrap();
        let t = [1.0, 2.0, -3.0];
        let moved = box_corners(&b.translated(t));
        for (c, m) in box_corners(&b).iter().zip(&moved) {
            let e = add(*c, t);
            assert!((0..3).all(|i| (e[i] - m[i]).abs() < 1e-12));
        }
        let back = box_from_corners(&box_corners(&b)).unwrap();
        for (p, q) in box_corners(&back).iter().zip(&box_corners(&b)) {
            assert!((0..3).all(|i| (p[i] - q[i]).abs() < 1e-12));
        }
    }

    #[test]
    fn quarter_turn_about_z() {
        let pc = PointCloud::new(vec![[1.0, 0.0, 0.0]], None).unwrap();
        let r = rotate_points(&pc, [0.0, 0.0, FRAC_PI_2]);
        let p = r.points()[0];
        assert!((p[0]).abs() < 1e-6 && (p[1] - 1.0).abs() < 1e-6 && p[2].abs() < 1e-6);
        assert_eq!(rotate_points(&pc, [0.0; 3]), pc);
    }

    #[test]
    fn rotation_order_is_x_then_y_then_z() {
        // x-axis quarter turn sends y to z; the following y quarter turn sends z to x.
        let r = rotation_matrix([FRAC_PI_2, FRAC_PI_2, 0.0]);
        let p = apply_rotation(&r, [0.0, 1.0, 0.0]);
        assert!((p[0] - 1.0).abs() < 1e-12 && p[1].abs() < 1e-12 && p[2].abs() < 1e-12);
    }

    fn arb_box() -> impl Strategy<Value = AxisAlignedBox> {
        (prop::array::uniform3(-3.0..3.0f64), prop::array::uniform3(0.05..3.0f64))
            .prop_map(|(c, s)| AxisAlignedBox::new(c, s).unwrap())
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let ab = iou(&a, &b);
            prop_assert_eq!(ab, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
        }

        #[test]
        fn rotation_preserves_distances(
            pts in prop::collection::vec(prop::array::uniform3(-5.0..5.0f64), 2..20),
            angles in prop::array::uniform3(-3.2..3.2f64),
        ) {
            let pc = PointCloud::new(pts, None).unwrap();
            let r = rotate_points(&pc, angles);
            for i in 0..pc.len() {
                for j in 0..i {
                    let d0 = dist2(pc.points()[i], pc.points()[j]).sqrt();
                    let d1 = dist2(r.points()[i], r.points()[j]).sqrt();
                    prop_assert!((d0 - d1).abs() <= 1e-5 * d0.max(1e-9));
                }
            }
        }

        #[test]
        fn rotated_box_hull_contains_rotated_points(
            b in arb_box(),
            angles in prop::array::uniform3(-0.5..0.5f64),
            u in prop::array::uniform3(0.0..1.0f64),
        ) {
            let lo = b.min();
            let p = [0, 1, 2].map(|i| lo[i] + u[i] * b.size[i]);
            let r = rotation_matrix(angles);
            let hull = rotate_box(&b, &r);
            let q = apply_rotation(&r, p);
            let grown = AxisAlignedBox::new(hull.center, hull.size.map(|s| s + 1e-9)).unwrap();
            prop_assert!(grown.contains(q));
        }
    }
}
