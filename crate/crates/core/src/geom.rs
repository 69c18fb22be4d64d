//! Rotated-box geometry: canonical transforms, corners, containment and
//! BEV/3D IoU via exact convex polygon clipping.
//!
//! The canonical frame of a box is the sensor frame translated to the box
//! center and rotated by `-yaw`, so the box is axis-aligned at the origin.

use alloc::vec::Vec;

use crate::math;

/// One LiDAR return: sensor-frame position plus reflectance in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point4 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub r: f64,
}

impl Point4 {
    pub fn new(x: f64, y: f64, z: f64, r: f64) -> Self {
        Self { x, y, z, r }
    }

    pub fn xyz(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

/// A 7-DoF box: center, extents (strictly positive) and yaw about the
/// vertical axis. Yaw is unrestricted; normalization is an operation, not an
/// invariant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Box3D {
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
    pub l: f64,
    pub w: f64,
    pub h: f64,
    pub yaw: f64,
}

impl Box3D {
    pub fn new(cx: f64, cy: f64, cz: f64, l: f64, w: f64, h: f64, yaw: f64) -> Self {
        debug_assert!(l > 0.0 && w > 0.0 && h > 0.0, "box extents must be positive");
        Self { cx, cy, cz, l, w, h, yaw }
    }

    pub fn center(&self) -> [f64; 3] {
        [self.cx, self.cy, self.cz]
    }

    pub fn volume(&self) -> f64 {
        self.l * self.w * self.h
    }

    /// Distance from the sensor origin to the box center.
    pub fn center_range(&self) -> f64 {
        math::sqrt(self.cx * self.cx + self.cy * self.cy + self.cz * self.cz)
    }
}

/// An ordered point list; indices are stable and `0..len`, and every reader
/// preserves file/order, which anchors determinism downstream.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point4>,
}

impl PointCloud {
    pub fn new(points: Vec<Point4>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> core::slice::Iter<'_, Point4> {
        self.points.iter()
    }
}

/// Maps `p` into the canonical frame of `b`: translate to the center, rotate
/// by `-yaw`. Reflectance passes through.
pub fn to_canonical(p: Point4, b: &Box3D) -> Point4 {
    let (c, s) = (math::cos(b.yaw), math::sin(b.yaw));
    let dx = p.x - b.cx;
    let dy = p.y - b.cy;
    Point4 {
        x: dx * c + dy * s,
        y: -dx * s + dy * c,
        z: p.z - b.cz,
        r: p.r,
    }
}

/// Inverse of [`to_canonical`].
pub fn from_canonical(p: Point4, b: &Box3D) -> Point4 {
    let (c, s) = (math::cos(b.yaw), math::sin(b.yaw));
    Point4 {
        x: b.cx + p.x * c - p.y * s,
        y: b.cy + p.x * s + p.y * c,
        z: b.cz + p.z,
        r: p.r,
    }
}

/// The eight sensor-frame corners, i.e. the images of
/// `(±l/2, ±w/2, ±h/2)` under the box pose. Corner `i` takes the positive
/// x/y/z half-extent iff bit 0/1/2 of `i` is set.
pub fn box_corners(b: &Box3D) -> [[f64; 3]; 8] {
    let mut out = [[0.0; 3]; 8];
    for (i, corner) in out.iter_mut().enumerate() {
        let sx = if i & 1 != 0 { 0.5 } else { -0.5 };
        let sy = if i & 2 != 0 { 0.5 } else { -0.5 };
        let sz = if i & 4 != 0 { 0.5 } else { -0.5 };
        let p = from_canonical(
            Point4::new(sx * b.l, sy * b.w, sz * b.h, 0.0),
            b,
        );
        *corner = [p.x, p.y, p.z];
    }
    out
}

/// The fixed canonical-frame diagonal pair `(-l/2, -w/2, -h/2)` and
/// `(+l/2, +w/2, +h/2)` used to disambiguate nodes shared across proposals.
pub fn diagonal_corners(b: &Box3D) -> ([f64; 3], [f64; 3]) {
    (
        [-0.5 * b.l, -0.5 * b.w, -0.5 * b.h],
        [0.5 * b.l, 0.5 * b.w, 0.5 * b.h],
    )
}

/// Precomputed pose of a (possibly enlarged) box for repeated containment
/// tests. `sigma` is an additive size increment, split half per side.
#[derive(Clone, Copy, Debug)]
pub struct BoxFrame {
    cx: f64,
    cy: f64,
    cz: f64,
    cos_yaw: f64,
    sin_yaw: f64,
    hx: f64,
    hy: f64,
    hz: f64,
}

impl BoxFrame {
    pub fn new(b: &Box3D, sigma: f64) -> Self {
        debug_assert!(sigma >= 0.0);
        Self {
            cx: b.cx,
            cy: b.cy,
            cz: b.cz,
            cos_yaw: math::cos(b.yaw),
            sin_yaw: math::sin(b.yaw),
            hx: 0.5 * (b.l + sigma),
            hy: 0.5 * (b.w + sigma),
            hz: 0.5 * (b.h + sigma),
        }
    }

    /// Canonical coordinates of `p` in this frame.
    pub fn canonical(&self, p: Point4) -> Point4 {
        let dx = p.x - self.cx;
        let dy = p.y - self.cy;
        Point4 {
            x: dx * self.cos_yaw + dy * self.sin_yaw,
            y: -dx * self.sin_yaw + dy * self.cos_yaw,
            z: p.z - self.cz,
            r: p.r,
        }
    }

    /// Closed-boundary containment test on the enlarged extents.
    pub fn contains(&self, p: Point4) -> bool {
        let q = self.canonical(p);
        math::abs(q.x) <= self.hx && math::abs(q.y) <= self.hy && math::abs(q.z) <= self.hz
    }

    /// Containment test that hands back the canonical coordinates on a hit.
    pub fn canonical_if_contained(&self, p: Point4) -> Option<Point4> {
        let q = self.canonical(p);
        if math::abs(q.x) <= self.hx && math::abs(q.y) <= self.hy && math::abs(q.z) <= self.hz {
            Some(q)
        } else {
            None
        }
    }
}

/// True iff `p` lies in `b` enlarged by `sigma` meters per dimension.
/// Boundaries are closed.
pub fn point_in_box(p: Point4, b: &Box3D, sigma: f64) -> bool {
    assert!(sigma >= 0.0, "sigma must be nonnegative");
    BoxFrame::new(b, sigma).contains(p)
}

/// BEV footprint corners in counterclockwise order.
pub fn bev_corners(b: &Box3D) -> [[f64; 2]; 4] {
    let (c, s) = (math::cos(b.yaw), math::sin(b.yaw));
    let (hl, hw) = (0.5 * b.l, 0.5 * b.w);
    let corner = |sx: f64, sy: f64| {
        [
            b.cx + sx * hl * c - sy * hw * s,
            b.cy + sx * hl * s + sy * hw * c,
        ]
    };
    [
        corner(1.0, 1.0),
        corner(-1.0, 1.0),
        corner(-1.0, -1.0),
        corner(1.0, -1.0),
    ]
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Sutherland-Hodgman clip of `subject` against the half-plane left of the
/// directed edge `a -> b`.
fn clip_edge(subject: &[[f64; 2]], a: [f64; 2], b: [f64; 2]) -> Vec<[f64; 2]> {
    let mut out = Vec::with_capacity(subject.len() + 1);
    let n = subject.len();
    for i in 0..n {
        let cur = subject[i];
        let next = subject[(i + 1) % n];
        let cur_in = cross(a, b, cur) >= 0.0;
        let next_in = cross(a, b, next) >= 0.0;
        if cur_in {
            out.push(cur);
            if !next_in {
                out.push(edge_intersection(cur, next, a, b));
            }
        } else if next_in {
            out.push(edge_intersection(cur, next, a, b));
        }
    }
    out
}

/// Intersection of segment `p -> q` with the infinite line `a -> b`. Only
/// called when the endpoints are strictly on opposite sides, so the lines
/// cannot be parallel.
fn edge_intersection(p: [f64; 2], q: [f64; 2], a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    let d1 = [q[0] - p[0], q[1] - p[1]];
    let d2 = [b[0] - a[0], b[1] - a[1]];
    let denom = d1[0] * d2[1] - d1[1] * d2[0];
    let t = ((a[0] - p[0]) * d2[1] - (a[1] - p[1]) * d2[0]) / denom;
    [p[0] + t * d1[0], p[1] + t * d1[1]]
}

/// Positive shoelace area of a CCW polygon.
fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..poly.len() {
        let p = poly[i];
        let q = poly[(i + 1) % poly.len()];
        acc += p[0] * q[1] - q[0] * p[1];
    }
    0.5 * acc
}

/// BEV intersection area of the two footprints.
fn bev_intersection_area(a: &Box3D, b: &Box3D) -> f64 {
    let clip = bev_corners(b);
    let mut poly: Vec<[f64; 2]> = bev_corners(a).to_vec();
    for i in 0..4 {
        poly = clip_edge(&poly, clip[i], clip[(i + 1) % 4]);
        if poly.len() < 3 {
            return 0.0;
        }
    }
    polygon_area(&poly).max(0.0)
}

fn field_key(b: &Box3D) -> [f64; 7] {
    [b.cx, b.cy, b.cz, b.l, b.w, b.h, b.yaw]
}

/// Orders a pair of boxes by a total order on their fields, so IoU is
/// computed with identical arithmetic for `(a, b)` and `(b, a)` and the
/// symmetry property is bitwise.
fn ordered<'a>(a: &'a Box3D, b: &'a Box3D) -> (&'a Box3D, &'a Box3D) {
    let (ka, kb) = (field_key(a), field_key(b));
    for i in 0..7 {
        match ka[i].total_cmp(&kb[i]) {
            core::cmp::Ordering::Less => return (a, b),
            core::cmp::Ordering::Greater => return (b, a),
            core::cmp::Ordering::Equal => {}
        }
    }
    (a, b)
}

/// Bird's-eye-view IoU of the two rotated footprints, in `[0, 1]`.
/// Degenerate (zero-area) intersections return 0.
pub fn iou_bev(a: &Box3D, b: &Box3D) -> f64 {
    let (a, b) = ordered(a, b);
    let inter = bev_intersection_area(a, b);
    if inter <= 0.0 {
        return 0.0;
    }
    let area_a = polygon_area(&bev_corners(a));
    let area_b = polygon_area(&bev_corners(b));
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Exact 3D IoU: BEV polygon intersection area times the vertical overlap,
/// over the union of volumes.
///
/// Volumes are derived from the same shoelace areas and vertical extents as
/// the intersection, so `iou_3d(a, a) == 1.0` holds exactly.
pub fn iou_3d(a: &Box3D, b: &Box3D) -> f64 {
    let (a, b) = ordered(a, b);
    let (bot_a, top_a) = (a.cz - 0.5 * a.h, a.cz + 0.5 * a.h);
    let (bot_b, top_b) = (b.cz - 0.5 * b.h, b.cz + 0.5 * b.h);
    let dz = top_a.min(top_b) - bot_a.max(bot_b);
    if dz <= 0.0 {
        return 0.0;
    }
    let inter_area = bev_intersection_area(a, b);
    if inter_area <= 0.0 {
        return 0.0;
    }
    let inter = inter_area * dz;
    let vol_a = polygon_area(&bev_corners(a)) * (top_a - bot_a);
    let vol_b = polygon_area(&bev_corners(b)) * (top_b - bot_b);
    let union = vol_a + vol_b - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}
