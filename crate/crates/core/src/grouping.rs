//! Patch-search grouping of scene points into enlarged proposals, plus the
//! exhaustive baseline it is checked against.
//!
//! The scene is divided into a BEV grid of square patches. Each box claims
//! the patches intersecting the axis-aligned bound of its enlarged rotated
//! footprint, and grouping then only tests the points inside claimed patches,
//! cutting the naive `O(N * M)` scan down to `O(Q * K)` where `Q` is the
//! point count in claimed patches and `K` the per-patch box cap.

use alloc::vec::Vec;
use core::fmt;

use crate::geom::{bev_corners, to_canonical, Box3D, BoxFrame, Point4, PointCloud};
use crate::math;

/// Open-addressing hash map from [`PatchId`] with linear probing over a
/// power-of-two table. Scene extents are unbounded, so patches cannot live in
/// a dense array; a hash map keyed by the `(ix, iy)` pair keeps lookups O(1)
/// during the per-point scan.
#[derive(Clone, Debug)]
struct PatchMap<V> {
    slots: Vec<Option<(PatchId, V)>>,
    len: usize,
}

impl<V> PatchMap<V> {
    fn with_capacity(expected: usize) -> Self {
        let cap = (expected.max(8) * 2).next_power_of_two();
        Self {
            slots: (0..cap).map(|_| None).collect(),
            len: 0,
        }
    }

    #[inline]
    fn home_slot(key: PatchId, mask: usize) -> usize {
        let h = (key.ix as u32)
            .wrapping_mul(0x9e37_79b1)
            .wrapping_add((key.iy as u32).wrapping_mul(0x85eb_ca77));
        (h ^ (h >> 15)) as usize & mask
    }

    fn get(&self, key: PatchId) -> Option<&V> {
        let mask = self.slots.len() - 1;
        let mut i = Self::home_slot(key, mask);
        loop {
            match &self.slots[i] {
                Some((k, v)) if *k == key => return Some(v),
                Some(_) => i = (i + 1) & mask,
                None => return None,
            }
        }
    }

    fn get_mut(&mut self, key: PatchId) -> Option<&mut V> {
        let mask = self.slots.len() - 1;
        let mut i = Self::home_slot(key, mask);
        loop {
            match &self.slots[i] {
                Some((k, _)) if *k == key => break,
                Some(_) => i = (i + 1) & mask,
                None => return None,
            }
        }
        self.slots[i].as_mut().map(|(_, v)| v)
    }

    fn insert_new(&mut self, key: PatchId, value: V) {
        if 4 * (self.len + 1) >= 3 * self.slots.len() {
            self.grow();
        }
        let mask = self.slots.len() - 1;
        let mut i = Self::home_slot(key, mask);
        while self.slots[i].is_some() {
            i = (i + 1) & mask;
        }
        self.slots[i] = Some((key, value));
        self.len += 1;
    }

    fn get_or_insert_default(&mut self, key: PatchId) -> &mut V
    where
        V: Default,
    {
        if self.get(key).is_none() {
            self.insert_new(key, V::default());
        }
        self.get_mut(key).expect("just inserted")
    }

    fn grow(&mut self) {
        let bigger = self.slots.len() * 2;
        let old = core::mem::replace(
            &mut self.slots,
            (0..bigger).map(|_| None).collect(),
        );
        let mask = bigger - 1;
        for slot in old.into_iter().flatten() {
            let mut i = Self::home_slot(slot.0, mask);
            while self.slots[i].is_some() {
                i = (i + 1) & mask;
            }
            self.slots[i] = Some(slot);
        }
    }
}

/// A BEV grid cell id: `(floor(x / patch_size), floor(y / patch_size))`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PatchId {
    pub ix: i32,
    pub iy: i32,
}

/// Patch id of a BEV position.
pub fn patch_id_xy(x: f64, y: f64, patch_size: f64) -> PatchId {
    assert!(patch_size > 0.0, "patch_size must be positive");
    PatchId {
        ix: math::floor(x / patch_size) as i32,
        iy: math::floor(y / patch_size) as i32,
    }
}

/// Patch id of a point.
pub fn patch_id(p: &Point4, patch_size: f64) -> PatchId {
    patch_id_xy(p.x, p.y, patch_size)
}

/// All patches intersecting the BEV axis-aligned bound of the
/// `sigma`-enlarged rotated box, in `(ix, iy)` lexicographic order. This is a
/// superset of the patches containing any grouped point.
pub fn occupied_patches(b: &Box3D, sigma: f64, patch_size: f64) -> Vec<PatchId> {
    assert!(patch_size > 0.0, "patch_size must be positive");
    let enlarged = Box3D {
        l: b.l + sigma,
        w: b.w + sigma,
        h: b.h + sigma,
        ..*b
    };
    let corners = bev_corners(&enlarged);
    let (mut min_x, mut max_x) = (corners[0][0], corners[0][0]);
    let (mut min_y, mut max_y) = (corners[0][1], corners[0][1]);
    for c in &corners[1..] {
        min_x = min_x.min(c[0]);
        max_x = max_x.max(c[0]);
        min_y = min_y.min(c[1]);
        max_y = max_y.max(c[1]);
    }
    let lo = patch_id_xy(min_x, min_y, patch_size);
    let hi = patch_id_xy(max_x, max_y, patch_size);
    let mut out = Vec::with_capacity(
        ((hi.ix - lo.ix + 1) as usize) * ((hi.iy - lo.iy + 1) as usize),
    );
    for ix in lo.ix..=hi.ix {
        for iy in lo.iy..=hi.iy {
            out.push(PatchId { ix, iy });
        }
    }
    out
}

/// Overflow handling when a patch is claimed by more than `k_max` boxes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GroupingMode {
    /// Overflow is an error.
    Strict,
    /// Overflowing claims are kept on a side list and still grouped; a
    /// warning counter reports how many claims exceeded the cap.
    Permissive,
}

#[derive(Clone, Debug, PartialEq)]
pub enum GroupingError {
    PatchOverflow { patch: PatchId, count: usize },
}

impl fmt::Display for GroupingError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupingError::PatchOverflow { patch, count } => write!(
                f,
                "patch ({}, {}) claimed by {count} boxes, exceeding the per-patch cap",
                patch.ix, patch.iy
            ),
        }
    }
}

impl core::error::Error for GroupingError {}

/// The points grouped into one proposal: ascending unique cloud indices and
/// their canonical-frame copies, position for position.
#[derive(Clone, Debug, PartialEq)]
pub struct ProposalGroup {
    pub box_index: usize,
    pub point_indices: Vec<u32>,
    pub canonical: Vec<Point4>,
}

impl ProposalGroup {
    pub fn len(&self) -> usize {
        self.point_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.point_indices.is_empty()
    }
}

/// Boxes claiming one patch: the first `k_max` on the main list, the rest on
/// the permissive-mode overflow list.
#[derive(Clone, Debug, Default)]
struct ClaimLists {
    main: Vec<u32>,
    overflow: Vec<u32>,
}

/// The point-to-patch and patch-to-box index maps built once per scene.
///
/// After the single-writer build, per-box grouping queries are read-only and
/// may run in parallel across boxes.
#[derive(Clone, Debug)]
pub struct PatchIndex {
    patch_size: f64,
    sigma: f64,
    point2patch: Vec<PatchId>,
    patch_points: PatchMap<Vec<u32>>,
    patch2box: PatchMap<ClaimLists>,
    box_patches: Vec<Vec<PatchId>>,
    overflow_events: usize,
}

impl PatchIndex {
    /// Builds the index. In strict mode the first patch (in box claim order)
    /// exceeding `k_max` claims aborts the build.
    pub fn build(
        cloud: &PointCloud,
        boxes: &[Box3D],
        sigma: f64,
        patch_size: f64,
        k_max: usize,
        mode: GroupingMode,
    ) -> Result<Self, GroupingError> {
        assert!(k_max >= 1, "k_max must be at least 1");
        assert!(sigma >= 0.0, "sigma must be nonnegative");

        let mut patch2box: PatchMap<ClaimLists> = PatchMap::with_capacity(boxes.len() * 8);
        let mut claim_order: Vec<PatchId> = Vec::new();
        let mut box_patches = Vec::with_capacity(boxes.len());
        for (i, b) in boxes.iter().enumerate() {
            let patches = occupied_patches(b, sigma, patch_size);
            for &p in &patches {
                if patch2box.get(p).is_none() {
                    claim_order.push(p);
                }
                let lists = patch2box.get_or_insert_default(p);
                if lists.main.len() < k_max {
                    lists.main.push(i as u32);
                } else {
                    lists.overflow.push(i as u32);
                }
            }
            box_patches.push(patches);
        }

        let mut overflow_events = 0usize;
        for &p in &claim_order {
            let lists = patch2box.get(p).expect("claimed patch present");
            if !lists.overflow.is_empty() {
                if mode == GroupingMode::Strict {
                    return Err(GroupingError::PatchOverflow {
                        patch: p,
                        count: lists.main.len() + lists.overflow.len(),
                    });
                }
                overflow_events += lists.overflow.len();
            }
        }

        // Bounding rectangle of all claimed patches; points outside skip the
        // hash probe entirely.
        let claim_bounds = claim_order.iter().fold(None, |acc, &p| match acc {
            None => Some((p, p)),
            Some((lo, hi)) => Some((
                PatchId { ix: lo.ix.min(p.ix), iy: lo.iy.min(p.iy) },
                PatchId { ix: hi.ix.max(p.ix), iy: hi.iy.max(p.iy) },
            )),
        });

        let mut point2patch = Vec::with_capacity(cloud.len());
        let mut patch_points: PatchMap<Vec<u32>> = PatchMap::with_capacity(claim_order.len());
        for (j, p) in cloud.iter().enumerate() {
            let id = patch_id(p, patch_size);
            point2patch.push(id);
            // Only points in claimed patches are ever scanned.
            let in_bounds = matches!(
                claim_bounds,
                Some((lo, hi))
                    if id.ix >= lo.ix && id.ix <= hi.ix && id.iy >= lo.iy && id.iy <= hi.iy
            );
            if !in_bounds {
                continue;
            }
            if let Some(entry) = patch_points.get_mut(id) {
                entry.push(j as u32);
            } else if patch2box.get(id).is_some() {
                patch_points.insert_new(id, alloc::vec![j as u32]);
            }
        }

        Ok(Self {
            patch_size,
            sigma,
            point2patch,
            patch_points,
            patch2box,
            box_patches,
            overflow_events,
        })
    }

    pub fn patch_size(&self) -> f64 {
        self.patch_size
    }

    /// How many box claims exceeded the per-patch cap (permissive mode).
    pub fn overflow_events(&self) -> usize {
        self.overflow_events
    }

    /// Patch of cloud point `j`.
    pub fn point_patch(&self, j: usize) -> PatchId {
        self.point2patch[j]
    }

    /// Boxes claiming `patch`: the capped main list plus the overflow list.
    pub fn boxes_claiming(&self, patch: PatchId) -> (&[u32], &[u32]) {
        match self.patch2box.get(patch) {
            Some(lists) => (&lists.main, &lists.overflow),
            None => (&[], &[]),
        }
    }

    /// Patches claimed by box `i`.
    pub fn box_patches(&self, i: usize) -> &[PatchId] {
        &self.box_patches[i]
    }

    /// Groups one box by scanning only the points in its claimed patches.
    pub fn group_box(&self, cloud: &PointCloud, b: &Box3D, box_index: usize) -> ProposalGroup {
        let frame = BoxFrame::new(b, self.sigma);
        let mut hits: Vec<(u32, Point4)> = Vec::new();
        for &patch in &self.box_patches[box_index] {
            if let Some(points) = self.patch_points.get(patch) {
                for &j in points {
                    if let Some(c) = frame.canonical_if_contained(cloud.points[j as usize]) {
                        hits.push((j, c));
                    }
                }
            }
        }
        // Each point lives in exactly one patch, so indices are unique;
        // patches are visited in lexicographic order, so sort globally.
        hits.sort_unstable_by_key(|(j, _)| *j);
        let (point_indices, canonical) = hits.into_iter().unzip();
        ProposalGroup { box_index, point_indices, canonical }
    }
}

/// Groups every box through the patch index. Returns the groups and the
/// overflow warning counter (always 0 in strict mode).
pub fn patch_search(
    cloud: &PointCloud,
    boxes: &[Box3D],
    sigma: f64,
    patch_size: f64,
    k_max: usize,
    mode: GroupingMode,
) -> Result<(Vec<ProposalGroup>, usize), GroupingError> {
    let index = PatchIndex::build(cloud, boxes, sigma, patch_size, k_max, mode)?;
    let groups = boxes
        .iter()
        .enumerate()
        .map(|(i, b)| index.group_box(cloud, b, i))
        .collect();
    Ok((groups, index.overflow_events()))
}

/// The `N x M` containment scan: correctness oracle and benchmark baseline.
pub fn exhaustive_group(cloud: &PointCloud, boxes: &[Box3D], sigma: f64) -> Vec<ProposalGroup> {
    boxes
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let frame = BoxFrame::new(b, sigma);
            let mut point_indices = Vec::new();
            let mut canonical = Vec::new();
            for (j, p) in cloud.iter().enumerate() {
                if let Some(c) = frame.canonical_if_contained(*p) {
                    point_indices.push(j as u32);
                    canonical.push(c);
                }
            }
            ProposalGroup { box_index: i, point_indices, canonical }
        })
        .collect()
}

/// Builds a group directly from known member indices (synthetic pipelines).
pub fn group_from_indices(cloud: &PointCloud, b: &Box3D, box_index: usize, indices: &[u32]) -> ProposalGroup {
    let canonical = indices
        .iter()
        .map(|&j| to_canonical(cloud.points[j as usize], b))
        .collect();
    ProposalGroup {
        box_index,
        point_indices: indices.to_vec(),
        canonical,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Xoshiro256;

    fn cloud_of(points: &[[f64; 4]]) -> PointCloud {
        PointCloud::new(
            points
                .iter()
                .map(|p| Point4::new(p[0], p[1], p[2], p[3]))
                .collect(),
        )
    }

    #[test]
    fn patch_id_basic() {
        assert_eq!(patch_id_xy(0.2, 0.7, 1.0), PatchId { ix: 0, iy: 0 });
        assert_eq!(patch_id_xy(-0.2, 0.7, 1.0), PatchId { ix: -1, iy: 0 });
        assert_eq!(patch_id_xy(3.9, -2.1, 1.0), PatchId { ix: 3, iy: -3 });
    }

    #[test]
    fn occupied_patches_of_straddling_box() {
        // BEV extent [-0.3, 1.3]^2 covers patch ids {-1, 0, 1}^2.
        let b = Box3D::new(0.5, 0.5, 0.0, 1.6, 1.6, 1.0, 0.0);
        let patches = occupied_patches(&b, 0.0, 1.0);
        assert_eq!(patches.len(), 9);
        for ix in -1..=1 {
            for iy in -1..=1 {
                assert!(patches.contains(&PatchId { ix, iy }));
            }
        }
    }

    #[test]
    fn occupied_patches_of_interior_box() {
        let b = Box3D::new(0.5, 0.5, 0.0, 0.2, 0.2, 1.0, 0.0);
        assert_eq!(occupied_patches(&b, 0.0, 1.0), alloc::vec![PatchId { ix: 0, iy: 0 }]);
    }

    #[test]
    fn occupied_patches_of_rotated_square_match_its_bound() {
        // A side-sqrt(2) square at 45 degrees bounds to a side-2 square.
        let s = core::f64::consts::SQRT_2;
        let rotated = Box3D::new(0.0, 0.0, 0.0, s, s, 1.0, core::f64::consts::FRAC_PI_4);
        let bound = Box3D::new(0.0, 0.0, 0.0, 2.0, 2.0, 1.0, 0.0);
        assert_eq!(
            occupied_patches(&rotated, 0.0, 1.0),
            occupied_patches(&bound, 0.0, 1.0)
        );
    }

    #[test]
    fn groups_contain_exactly_the_inside_points() {
        let cloud = cloud_of(&[
            [0.0, 0.0, 0.0, 0.1],
            [5.0, 5.0, 0.0, 0.2],
            [0.3, -0.2, 0.1, 0.3],
        ]);
        let boxes = [Box3D::new(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0)];
        let (groups, warnings) =
            patch_search(&cloud, &boxes, 0.0, 1.0, 32, GroupingMode::Strict).unwrap();
        assert_eq!(warnings, 0);
        assert_eq!(groups[0].point_indices, alloc::vec![0, 2]);
        assert_eq!(groups[0].canonical.len(), 2);
    }

    #[test]
    fn empty_cloud_gives_empty_groups() {
        let cloud = PointCloud::default();
        let boxes = [Box3D::new(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.4)];
        let (groups, _) =
            patch_search(&cloud, &boxes, 0.4, 1.0, 32, GroupingMode::Strict).unwrap();
        assert!(groups[0].is_empty());
    }

    #[test]
    fn point_in_two_overlapping_boxes_appears_in_both_groups() {
        let cloud = cloud_of(&[[0.0, 0.0, 0.0, 0.5]]);
        let boxes = [
            Box3D::new(0.1, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0),
            Box3D::new(-0.1, 0.0, 0.0, 1.0, 1.0, 1.0, 0.3),
        ];
        let groups = exhaustive_group(&cloud, &boxes, 0.0);
        assert_eq!(groups[0].point_indices, alloc::vec![0]);
        assert_eq!(groups[1].point_indices, alloc::vec![0]);
    }

    #[test]
    fn face_point_is_contained() {
        // Closed boundary: a point exactly on the enlarged face counts.
        let cloud = cloud_of(&[[0.7, 0.0, 0.0, 0.0]]);
        let boxes = [Box3D::new(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0)];
        let groups = exhaustive_group(&cloud, &boxes, 0.4);
        assert_eq!(groups[0].point_indices, alloc::vec![0]);
    }

    #[test]
    fn strict_mode_reports_patch_overflow() {
        let cloud = cloud_of(&[[0.5, 0.5, 0.0, 0.0]]);
        let boxes = [
            Box3D::new(0.5, 0.5, 0.0, 0.4, 0.4, 1.0, 0.0),
            Box3D::new(0.6, 0.5, 0.0, 0.4, 0.4, 1.0, 0.0),
        ];
        let err = patch_search(&cloud, &boxes, 0.0, 1.0, 1, GroupingMode::Strict).unwrap_err();
        match err {
            GroupingError::PatchOverflow { patch, count } => {
                assert_eq!(patch, PatchId { ix: 0, iy: 0 });
                assert_eq!(count, 2);
            }
        }
    }

    #[test]
    fn permissive_mode_still_groups_overflowing_boxes() {
        let cloud = cloud_of(&[[0.5, 0.5, 0.0, 0.0], [0.62, 0.5, 0.0, 0.0]]);
        let boxes = [
            Box3D::new(0.5, 0.5, 0.0, 0.4, 0.4, 1.0, 0.0),
            Box3D::new(0.6, 0.5, 0.0, 0.4, 0.4, 1.0, 0.0),
        ];
        let (groups, warnings) =
            patch_search(&cloud, &boxes, 0.0, 1.0, 1, GroupingMode::Permissive).unwrap();
        assert_eq!(warnings, 1);
        let oracle = exhaustive_group(&cloud, &boxes, 0.0);
        for (g, o) in groups.iter().zip(&oracle) {
            assert_eq!(g.point_indices, o.point_indices);
        }
    }

    #[test]
    fn random_scene_matches_exhaustive_oracle() {
        let mut r = Xoshiro256::seed_from_u64(2024);
        let n = 20_000;
        let m = 64;
        let mut points = Vec::with_capacity(n);
        for _ in 0..n {
            points.push(Point4::new(
                r.uniform(-40.0, 40.0),
                r.uniform(-40.0, 40.0),
                r.uniform(-2.0, 3.0),
                r.next_f64(),
            ));
        }
        let cloud = PointCloud::new(points);
        let boxes: Vec<Box3D> = (0..m)
            .map(|_| {
                Box3D::new(
                    r.uniform(-40.0, 40.0),
                    r.uniform(-40.0, 40.0),
                    r.uniform(-1.0, 2.0),
                    r.uniform(0.5, 5.0),
                    r.uniform(0.5, 3.0),
                    r.uniform(0.5, 2.5),
                    r.uniform(-4.0, 4.0),
                )
            })
            .collect();
        let (fast, _) =
            patch_search(&cloud, &boxes, 0.4, 1.0, 32, GroupingMode::Permissive).unwrap();
        let slow = exhaustive_group(&cloud, &boxes, 0.4);
        for (f, s) in fast.iter().zip(&slow) {
            assert_eq!(f.point_indices, s.point_indices);
            assert_eq!(f.canonical.len(), s.canonical.len());
        }
    }

    #[test]
    fn grouped_points_lie_in_claimed_patches() {
        // Soundness of the index: a grouped point's patch is always among
        // the patches its box claims.
        let mut r = Xoshiro256::seed_from_u64(77);
        let cloud = PointCloud::new(
            (0..2000)
                .map(|_| {
                    Point4::new(
                        r.uniform(-20.0, 20.0),
                        r.uniform(-20.0, 20.0),
                        r.uniform(-2.0, 2.0),
                        0.0,
                    )
                })
                .collect(),
        );
        let boxes: Vec<Box3D> = (0..16)
            .map(|_| {
                Box3D::new(
                    r.uniform(-18.0, 18.0),
                    r.uniform(-18.0, 18.0),
                    0.0,
                    r.uniform(1.0, 6.0),
                    r.uniform(1.0, 3.0),
                    2.0,
                    r.uniform(-4.0, 4.0),
                )
            })
            .collect();
        let index =
            PatchIndex::build(&cloud, &boxes, 0.4, 1.0, 32, GroupingMode::Permissive).unwrap();
        for (i, b) in boxes.iter().enumerate() {
            let group = index.group_box(&cloud, b, i);
            for &j in &group.point_indices {
                let patch = index.point_patch(j as usize);
                assert!(index.box_patches(i).contains(&patch));
                let (main, over) = index.boxes_claiming(patch);
                assert!(main.contains(&(i as u32)) || over.contains(&(i as u32)));
            }
        }
    }
}
