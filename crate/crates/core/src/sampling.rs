//! Per-proposal point sampling: dynamic farthest voxel sampling backed by an
//! open-addressing voxel hash, plus the farthest-point, voxel and random
//! baselines.

use alloc::vec::Vec;
use core::fmt;

use crate::geom::{Box3D, Point4};
use crate::grouping::ProposalGroup;
use crate::math;
use crate::rng::Xoshiro256;

/// Default slot count of the voxel hash.
pub const DEFAULT_HASH_CAPACITY: usize = 4099;

/// Voxel size of a box: `lambda * exp(-|center| / delta)`. Strictly
/// decreasing in the distance from the sensor, so nearby (dense) boxes get
/// coarse voxels and distant (sparse) boxes keep fine detail.
pub fn dynamic_voxel_size(b: &Box3D, lambda: f64, delta: f64) -> f64 {
    assert!(lambda > 0.0 && delta > 0.0, "lambda and delta must be positive");
    lambda * math::exp(-b.center_range() / delta)
}

/// Canonical-frame voxel grid index. One scalar voxel size applies to all
/// three axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GridIndex {
    pub x: i64,
    pub y: i64,
    pub z: i64,
}

impl GridIndex {
    pub fn of(p: &Point4, voxel_size: f64) -> Self {
        Self {
            x: math::floor(p.x / voxel_size) as i64,
            y: math::floor(p.y / voxel_size) as i64,
            z: math::floor(p.z / voxel_size) as i64,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Slot {
    grid: GridIndex,
    representative: u32,
    count: u32,
}

/// Open-addressing hash over non-empty voxels with quadratic probing.
///
/// The probe sequence is `h, h + 1, h - 1, h + 4, h - 4, ...` modulo the
/// capacity. Capacities are kept prime and congruent to 3 mod 4, for which
/// the alternating-sign quadratic sequence visits every slot, so insertion
/// succeeds whenever the table is not full. Growth to the next such prime at
/// least twice the capacity keeps the load factor below 1: a table holds at
/// most `capacity - 1` entries.
#[derive(Clone, Debug)]
pub struct VoxelHash {
    slots: Vec<Option<Slot>>,
    len: usize,
    order: Vec<u32>,
}

enum Probe {
    Found(usize),
    Empty(usize),
    Exhausted,
}

impl VoxelHash {
    pub fn new() -> Self {
        Self::with_capacity(DEFAULT_HASH_CAPACITY)
    }

    pub fn with_capacity(capacity: usize) -> Self {
        assert!(capacity >= 2, "capacity must be at least 2");
        Self {
            slots: alloc::vec![None; capacity],
            len: 0,
            order: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.slots.len()
    }

    fn hash(grid: GridIndex, capacity: usize) -> usize {
        let mixed = (grid.x.wrapping_mul(73_856_093)
            ^ grid.y.wrapping_mul(19_349_663)
            ^ grid.z.wrapping_mul(83_492_791)) as u64;
        (mixed % capacity as u64) as usize
    }

    fn probe(&self, grid: GridIndex) -> Probe {
        let cap = self.slots.len() as i64;
        let h = Self::hash(grid, self.slots.len()) as i64;
        let check = |slot: i64| -> Option<Probe> {
            let idx = slot.rem_euclid(cap) as usize;
            match &self.slots[idx] {
                Some(s) if s.grid == grid => Some(Probe::Found(idx)),
                Some(_) => None,
                None => Some(Probe::Empty(idx)),
            }
        };
        if let Some(r) = check(h) {
            return r;
        }
        for i in 1..=cap {
            if let Some(r) = check(h + i * i) {
                return r;
            }
            if let Some(r) = check(h - i * i) {
                return r;
            }
        }
        Probe::Exhausted
    }

    /// Inserts `grid` with `point_index` as its representative if absent.
    /// Returns the stored representative and the number of points that have
    /// hit this voxel so far (including this one).
    pub fn insert(&mut self, grid: GridIndex, point_index: u32) -> (u32, u32) {
        loop {
            match self.probe(grid) {
                Probe::Found(idx) => {
                    let slot = self.slots[idx].as_mut().expect("occupied slot");
                    slot.count += 1;
                    return (slot.representative, slot.count);
                }
                Probe::Empty(idx) => {
                    if self.len + 1 > self.capacity() - 1 {
                        self.grow();
                        continue;
                    }
                    self.slots[idx] = Some(Slot {
                        grid,
                        representative: point_index,
                        count: 1,
                    });
                    self.len += 1;
                    self.order.push(idx as u32);
                    return (point_index, 1);
                }
                Probe::Exhausted => self.grow(),
            }
        }
    }

    /// Replaces the representative of an existing voxel.
    pub fn set_representative(&mut self, grid: GridIndex, point_index: u32) {
        if let Probe::Found(idx) = self.probe(grid) {
            self.slots[idx].as_mut().expect("occupied slot").representative = point_index;
        }
    }

    pub fn get(&self, grid: GridIndex) -> Option<u32> {
        match self.probe(grid) {
            Probe::Found(idx) => self.slots[idx].map(|s| s.representative),
            _ => None,
        }
    }

    /// Entries in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (GridIndex, u32)> + '_ {
        self.order.iter().map(move |&idx| {
            let s = self.slots[idx as usize].expect("ordered slot occupied");
            (s.grid, s.representative)
        })
    }

    fn grow(&mut self) {
        let new_cap = next_capacity(self.capacity());
        let mut grown = VoxelHash::with_capacity(new_cap);
        for &idx in &self.order {
            let s = self.slots[idx as usize].expect("ordered slot occupied");
            match grown.probe(s.grid) {
                Probe::Empty(i) => {
                    grown.slots[i] = Some(s);
                    grown.len += 1;
                    grown.order.push(i as u32);
                }
                // Entries are distinct and new_cap > len, so rehashing a
                // distinct key can neither collide nor exhaust.
                Probe::Found(_) | Probe::Exhausted => unreachable!("rehash of distinct keys"),
            }
        }
        *self = grown;
    }
}

impl Default for VoxelHash {
    fn default() -> Self {
        Self::new()
    }
}

/// Smallest prime `p >= 2 * capacity` with `p % 4 == 3` (keeps the quadratic
/// probe sequence a full permutation of the slots).
fn next_capacity(capacity: usize) -> usize {
    let mut candidate = (2 * capacity).max(3);
    loop {
        if candidate % 4 == 3 && is_prime(candidate) {
            return candidate;
        }
        candidate += 1;
    }
}

fn is_prime(n: usize) -> bool {
    if n < 2 {
        return false;
    }
    if n % 2 == 0 {
        return n == 2;
    }
    let mut d = 3;
    while d * d <= n {
        if n % d == 0 {
            return false;
        }
        d += 2;
    }
    true
}

/// How a voxel picks its stand-in point.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RepresentativeMode {
    /// Lowest original point index per voxel (deterministic default).
    Lowest,
    /// Seeded reservoir choice, uniform over the voxel's points.
    SeededRandom(u64),
}

/// One entry per non-empty voxel in first-appearance order, carrying the
/// representative's position within the group. Group positions ascend with
/// original cloud index, so the lowest position is the lowest original index.
pub fn voxelize(group: &ProposalGroup, voxel_size: f64) -> Vec<(GridIndex, u32)> {
    voxelize_with(group, voxel_size, DEFAULT_HASH_CAPACITY, RepresentativeMode::Lowest)
}

pub fn voxelize_with(
    group: &ProposalGroup,
    voxel_size: f64,
    hash_capacity: usize,
    mode: RepresentativeMode,
) -> Vec<(GridIndex, u32)> {
    assert!(voxel_size > 0.0, "voxel size must be positive");
    let mut hash = VoxelHash::with_capacity(hash_capacity);
    let mut rng = match mode {
        RepresentativeMode::SeededRandom(seed) => Some(Xoshiro256::seed_from_u64(seed)),
        RepresentativeMode::Lowest => None,
    };
    for (pos, p) in group.canonical.iter().enumerate() {
        let grid = GridIndex::of(p, voxel_size);
        let (_, count) = hash.insert(grid, pos as u32);
        if count > 1 {
            if let Some(r) = rng.as_mut() {
                // Reservoir rule: the k-th point replaces with probability 1/k.
                if r.below(count as usize) == 0 {
                    hash.set_representative(grid, pos as u32);
                }
            }
        }
    }
    hash.iter().collect()
}

/// A fixed-size sample of a proposal group. `selected` holds positions into
/// the group's arrays; entries beyond the first `len - pad_count` are cyclic
/// repetitions of earlier ones.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleResult {
    pub selected: Vec<u32>,
    pub pad_count: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SamplingError {
    /// The proposal grouped no points; the caller decides whether to drop it.
    EmptyGroup,
}

impl fmt::Display for SamplingError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SamplingError::EmptyGroup => write!(f, "cannot sample from an empty group"),
        }
    }
}

impl core::error::Error for SamplingError {}

fn pad_cyclic(mut selected: Vec<u32>, t_s: usize) -> SampleResult {
    debug_assert!(!selected.is_empty());
    let base = selected.len();
    let mut i = 0;
    while selected.len() < t_s {
        selected.push(selected[i % base]);
        i += 1;
    }
    SampleResult {
        selected,
        pad_count: t_s.saturating_sub(base),
    }
}

/// Greedy max-min farthest point sampling over xyz. At every step the point
/// maximizing the minimum distance to the selected set is chosen, ties going
/// to the lowest index. Returns `min(t_s, n)` indices in greedy order.
pub fn fps(points: &[Point4], t_s: usize, seed_index: usize) -> Vec<u32> {
    assert!(!points.is_empty(), "fps needs at least one point");
    assert!(t_s >= 1, "t_s must be at least 1");
    assert!(seed_index < points.len(), "seed index out of range");
    let n = points.len();
    let take = t_s.min(n);

    let d2 = |a: &Point4, b: &Point4| {
        let dx = a.x - b.x;
        let dy = a.y - b.y;
        let dz = a.z - b.z;
        dx * dx + dy * dy + dz * dz
    };

    let mut selected = Vec::with_capacity(take);
    let mut chosen = alloc::vec![false; n];
    let mut min_d2 = alloc::vec![f64::INFINITY; n];

    selected.push(seed_index as u32);
    chosen[seed_index] = true;
    for j in 0..n {
        min_d2[j] = d2(&points[j], &points[seed_index]);
    }

    while selected.len() < take {
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for j in 0..n {
            if !chosen[j] && min_d2[j] > best_d {
                best_d = min_d2[j];
                best = j;
            }
        }
        selected.push(best as u32);
        chosen[best] = true;
        for j in 0..n {
            if !chosen[j] {
                let d = d2(&points[j], &points[best]);
                if d < min_d2[j] {
                    min_d2[j] = d;
                }
            }
        }
    }
    selected
}

/// Dynamic farthest voxel sampling: voxelize the group at the box's dynamic
/// voxel size, then run farthest point sampling over the voxel
/// representatives (distances measured between the representative points).
/// Fewer non-empty voxels than `t_s` selects them all and pads cyclically.
pub fn dfvs(
    group: &ProposalGroup,
    b: &Box3D,
    t_s: usize,
    lambda: f64,
    delta: f64,
    hash_capacity: usize,
) -> Result<SampleResult, SamplingError> {
    dfvs_with_mode(group, b, t_s, lambda, delta, hash_capacity, RepresentativeMode::Lowest)
}

pub fn dfvs_with_mode(
    group: &ProposalGroup,
    b: &Box3D,
    t_s: usize,
    lambda: f64,
    delta: f64,
    hash_capacity: usize,
    mode: RepresentativeMode,
) -> Result<SampleResult, SamplingError> {
    if group.is_empty() {
        return Err(SamplingError::EmptyGroup);
    }
    assert!(t_s >= 1, "t_s must be at least 1");
    let v = dynamic_voxel_size(b, lambda, delta);
    let entries = voxelize_with(group, v, hash_capacity, mode);
    let reps: Vec<u32> = entries.iter().map(|&(_, rep)| rep).collect();
    let rep_points: Vec<Point4> = reps.iter().map(|&r| group.canonical[r as usize]).collect();
    let order = fps(&rep_points, t_s, 0);
    let selected: Vec<u32> = order.into_iter().map(|i| reps[i as usize]).collect();
    Ok(pad_cyclic(selected, t_s))
}

/// Seeded uniform sampling without replacement.
pub fn random_sample(
    group: &ProposalGroup,
    t_s: usize,
    rng_seed: u64,
) -> Result<SampleResult, SamplingError> {
    if group.is_empty() {
        return Err(SamplingError::EmptyGroup);
    }
    assert!(t_s >= 1, "t_s must be at least 1");
    let mut rng = Xoshiro256::seed_from_u64(rng_seed);
    let mut order: Vec<u32> = (0..group.len() as u32).collect();
    rng.shuffle(&mut order);
    order.truncate(t_s.min(group.len()));
    Ok(pad_cyclic(order, t_s))
}

/// Voxel sampling at a fixed size: the first `t_s` representatives in
/// lowest grid-lexicographic order.
pub fn voxel_sample(
    group: &ProposalGroup,
    t_s: usize,
    voxel_size: f64,
    hash_capacity: usize,
) -> Result<SampleResult, SamplingError> {
    if group.is_empty() {
        return Err(SamplingError::EmptyGroup);
    }
    assert!(t_s >= 1, "t_s must be at least 1");
    let mut entries = voxelize_with(group, voxel_size, hash_capacity, RepresentativeMode::Lowest);
    entries.sort_unstable_by_key(|&(grid, _)| grid);
    let mut selected: Vec<u32> = entries.iter().map(|&(_, rep)| rep).collect();
    selected.truncate(t_s.min(entries.len()));
    Ok(pad_cyclic(selected, t_s))
}

/// Voxel sampling at the box's dynamic voxel size.
pub fn dynamic_voxel_sample(
    group: &ProposalGroup,
    b: &Box3D,
    t_s: usize,
    lambda: f64,
    delta: f64,
    hash_capacity: usize,
) -> Result<SampleResult, SamplingError> {
    voxel_sample(group, t_s, dynamic_voxel_size(b, lambda, delta), hash_capacity)
}

/// The selectable per-proposal sampling strategies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SamplingStrategy {
    /// Random point sampling.
    Rps,
    /// Farthest point sampling over the raw grouped points.
    Fps,
    /// Voxel sampling at a fixed voxel size.
    Vs,
    /// Voxel sampling at the dynamic voxel size.
    Dvs,
    /// Dynamic farthest voxel sampling.
    Dfvs,
}

impl SamplingStrategy {
    pub fn name(self) -> &'static str {
        match self {
            SamplingStrategy::Rps => "rps",
            SamplingStrategy::Fps => "fps",
            SamplingStrategy::Vs => "vs",
            SamplingStrategy::Dvs => "dvs",
            SamplingStrategy::Dfvs => "dfvs",
        }
    }
}

impl core::str::FromStr for SamplingStrategy {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "rps" => Ok(SamplingStrategy::Rps),
            "fps" => Ok(SamplingStrategy::Fps),
            "vs" => Ok(SamplingStrategy::Vs),
            "dvs" => Ok(SamplingStrategy::Dvs),
            "dfvs" => Ok(SamplingStrategy::Dfvs),
            _ => Err(()),
        }
    }
}

/// Runs the named strategy on one group. `seed` feeds only the random
/// strategy; per-box seeds should be derived from the master seed.
pub fn sample_with_strategy(
    strategy: SamplingStrategy,
    group: &ProposalGroup,
    b: &Box3D,
    t_s: usize,
    lambda: f64,
    delta: f64,
    fixed_voxel_size: f64,
    hash_capacity: usize,
    seed: u64,
) -> Result<SampleResult, SamplingError> {
    match strategy {
        SamplingStrategy::Rps => random_sample(group, t_s, seed),
        SamplingStrategy::Fps => {
            if group.is_empty() {
                return Err(SamplingError::EmptyGroup);
            }
            Ok(pad_cyclic(fps(&group.canonical, t_s, 0), t_s))
        }
        SamplingStrategy::Vs => voxel_sample(group, t_s, fixed_voxel_size, hash_capacity),
        SamplingStrategy::Dvs => dynamic_voxel_sample(group, b, t_s, lambda, delta, hash_capacity),
        SamplingStrategy::Dfvs => dfvs(group, b, t_s, lambda, delta, hash_capacity),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::PointCloud;
    use crate::grouping::group_from_indices;
    use alloc::collections::BTreeMap;
    use alloc::vec;

    fn group_of(canonical: Vec<Point4>) -> ProposalGroup {
        let n = canonical.len();
        ProposalGroup {
            box_index: 0,
            point_indices: (0..n as u32).collect(),
            canonical,
        }
    }

    fn p(x: f64, y: f64, z: f64) -> Point4 {
        Point4::new(x, y, z, 0.0)
    }

    #[test]
    fn voxel_size_matches_high_precision_values() {
        // lambda = 0.18, delta = 50: e^0, e^-1, e^-2 scaled by 0.18.
        let near = Box3D::new(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0);
        let mid = Box3D::new(30.0, 40.0, 0.0, 1.0, 1.0, 1.0, 0.0);
        let far = Box3D::new(60.0, 80.0, 0.0, 1.0, 1.0, 1.0, 0.0);
        let rel = |a: f64, b: f64| ((a - b) / b).abs();
        assert_eq!(dynamic_voxel_size(&near, 0.18, 50.0), 0.18);
        assert!(rel(dynamic_voxel_size(&mid, 0.18, 50.0), 0.06621829941085962) < 1e-9);
        assert!(rel(dynamic_voxel_size(&far, 0.18, 50.0), 0.02436035098259028) < 1e-9);
    }

    #[test]
    fn voxel_size_decreases_with_distance() {
        let mut prev = f64::INFINITY;
        for d in [0.0, 5.0, 20.0, 50.0, 120.0] {
            let b = Box3D::new(d, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0);
            let v = dynamic_voxel_size(&b, 0.18, 50.0);
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn voxelize_dedups_to_lowest_index() {
        let g = group_of(vec![p(0.05, 0.0, 0.0), p(0.06, 0.0, 0.0)]);
        let entries = voxelize(&g, 0.1);
        assert_eq!(entries.len(), 1);
        assert_eq!(entries[0].1, 0);
    }

    #[test]
    fn voxelize_splits_at_floor_boundary() {
        let g = group_of(vec![p(-0.01, 0.0, 0.0), p(0.01, 0.0, 0.0)]);
        let entries = voxelize(&g, 0.1);
        assert_eq!(entries.len(), 2);
    }

    #[test]
    fn voxelize_matches_exhaustive_map() {
        let mut r = Xoshiro256::seed_from_u64(99);
        let pts: Vec<Point4> = (0..1000)
            .map(|_| p(r.uniform(-2.0, 2.0), r.uniform(-1.0, 1.0), r.uniform(-0.8, 0.8)))
            .collect();
        let g = group_of(pts.clone());
        let v = 0.15;
        let entries = voxelize(&g, v);

        let mut reference: BTreeMap<GridIndex, u32> = BTreeMap::new();
        for (i, q) in pts.iter().enumerate() {
            reference.entry(GridIndex::of(q, v)).or_insert(i as u32);
        }
        assert_eq!(entries.len(), reference.len());
        for (grid, rep) in entries {
            assert_eq!(reference[&grid], rep);
        }
    }

    #[test]
    fn fps_collinear_picks_extremes() {
        let pts = vec![p(0.0, 0.0, 0.0), p(1.0, 0.0, 0.0), p(2.0, 0.0, 0.0), p(3.0, 0.0, 0.0)];
        assert_eq!(fps(&pts, 2, 0), vec![0, 3]);
        // Points 1 and 2 tie at min-distance 1; the lower index wins.
        assert_eq!(fps(&pts, 3, 0), vec![0, 3, 1]);
    }

    #[test]
    fn fps_exhausts_all_points() {
        let pts = vec![p(0.0, 0.0, 0.0), p(1.0, 0.0, 0.0), p(2.5, 0.0, 0.0)];
        let sel = fps(&pts, 3, 0);
        assert_eq!(sel.len(), 3);
        let mut sorted = sel.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2]);
        assert_eq!(sel[0], 0);
    }

    #[test]
    fn fps_greedy_step_matches_exhaustive_scan() {
        let mut r = Xoshiro256::seed_from_u64(7);
        for _ in 0..20 {
            let n = 2 + r.below(60);
            let pts: Vec<Point4> = (0..n)
                .map(|_| p(r.uniform(-1.0, 1.0), r.uniform(-1.0, 1.0), r.uniform(-1.0, 1.0)))
                .collect();
            let t_s = 1 + r.below(n);
            let sel = fps(&pts, t_s, 0);
            verify_fps_by_scan(&pts, &sel);
        }
    }

    pub(crate) fn verify_fps_by_scan(pts: &[Point4], sel: &[u32]) {
        let d2 = |a: &Point4, b: &Point4| {
            (a.x - b.x).powi(2) + (a.y - b.y).powi(2) + (a.z - b.z).powi(2)
        };
        for step in 1..sel.len() {
            let prefix = &sel[..step];
            let mut best = usize::MAX;
            let mut best_d = f64::NEG_INFINITY;
            for j in 0..pts.len() {
                if prefix.contains(&(j as u32)) {
                    continue;
                }
                let mind = prefix
                    .iter()
                    .map(|&s| d2(&pts[j], &pts[s as usize]))
                    .fold(f64::INFINITY, f64::min);
                if mind > best_d {
                    best_d = mind;
                    best = j;
                }
            }
            assert_eq!(sel[step] as usize, best, "greedy violation at step {step}");
        }
    }

    #[test]
    fn dfvs_separated_clusters_get_one_representative_each() {
        let mut r = Xoshiro256::seed_from_u64(5);
        let mut pts = Vec::new();
        for _ in 0..100 {
            pts.push(p(r.uniform(-0.1, 0.1), r.uniform(-0.1, 0.1), 0.0));
        }
        for _ in 0..100 {
            pts.push(p(8.0 + r.uniform(-0.1, 0.1), r.uniform(-0.1, 0.1), 0.0));
        }
        let g = group_of(pts);
        let b = Box3D::new(0.0, 0.0, 0.0, 20.0, 2.0, 2.0, 0.0);
        let res = dfvs(&g, &b, 2, 0.18, 50.0, DEFAULT_HASH_CAPACITY).unwrap();
        assert_eq!(res.pad_count, 0);
        let sides: Vec<bool> = res
            .selected
            .iter()
            .map(|&i| g.canonical[i as usize].x > 4.0)
            .collect();
        assert_ne!(sides[0], sides[1], "both picks landed in one cluster");
    }

    #[test]
    fn dfvs_pads_single_point_group() {
        let g = group_of(vec![p(0.0, 0.0, 0.0)]);
        let b = Box3D::new(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0);
        let res = dfvs(&g, &b, 4, 0.18, 50.0, DEFAULT_HASH_CAPACITY).unwrap();
        assert_eq!(res.selected, vec![0, 0, 0, 0]);
        assert_eq!(res.pad_count, 3);
    }

    #[test]
    fn dfvs_empty_group_is_an_error() {
        let g = ProposalGroup { box_index: 0, point_indices: vec![], canonical: vec![] };
        let b = Box3D::new(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0);
        assert_eq!(
            dfvs(&g, &b, 4, 0.18, 50.0, DEFAULT_HASH_CAPACITY),
            Err(SamplingError::EmptyGroup)
        );
    }

    #[test]
    fn dfvs_degenerates_to_fps_for_tiny_voxels() {
        let mut r = Xoshiro256::seed_from_u64(13);
        let pts: Vec<Point4> = (0..200)
            .map(|_| p(r.uniform(-2.0, 2.0), r.uniform(-1.0, 1.0), r.uniform(-0.7, 0.7)))
            .collect();
        let g = group_of(pts);
        let b = Box3D::new(1.0, 0.5, 0.0, 4.0, 2.0, 1.5, 0.2);
        let res = dfvs(&g, &b, 64, 1e-6, 50.0, DEFAULT_HASH_CAPACITY).unwrap();
        let raw = fps(&g.canonical, 64, 0);
        assert_eq!(res.selected, raw);
    }

    #[test]
    fn random_sample_with_full_budget_is_a_permutation() {
        let g = group_of((0..50).map(|i| p(i as f64, 0.0, 0.0)).collect());
        let res = random_sample(&g, 50, 7).unwrap();
        assert_eq!(res.pad_count, 0);
        let mut sorted = res.selected.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<u32>>());
    }

    #[test]
    fn voxel_sample_single_voxel_pads() {
        let g = group_of(vec![p(0.01, 0.01, 0.01), p(0.02, 0.02, 0.02)]);
        let res = voxel_sample(&g, 3, 1.0, DEFAULT_HASH_CAPACITY).unwrap();
        assert_eq!(res.selected, vec![0, 0, 0]);
        assert_eq!(res.pad_count, 2);
    }

    #[test]
    fn smaller_dynamic_voxels_never_reduce_voxel_count() {
        let mut r = Xoshiro256::seed_from_u64(21);
        let pts: Vec<Point4> = (0..500)
            .map(|_| p(r.uniform(-2.0, 2.0), r.uniform(-1.0, 1.0), r.uniform(-0.7, 0.7)))
            .collect();
        let g = group_of(pts);
        let near = Box3D::new(0.0, 0.0, 0.0, 4.0, 2.0, 1.5, 0.0);
        let far = Box3D::new(30.0, 40.0, 0.0, 4.0, 2.0, 1.5, 0.0);
        let count = |b: &Box3D| {
            voxelize(&g, dynamic_voxel_size(b, 0.18, 50.0)).len()
        };
        assert!(count(&far) >= count(&near));
    }

    #[test]
    fn hash_stores_distinct_indices_one_slot_each() {
        let mut h = VoxelHash::with_capacity(101);
        for i in 0..80 {
            h.insert(GridIndex { x: i, y: -i, z: 2 * i }, i as u32);
        }
        assert_eq!(h.len(), 80);
        for i in 0..80 {
            assert_eq!(h.get(GridIndex { x: i, y: -i, z: 2 * i }), Some(i as u32));
        }
    }

    #[test]
    fn hash_reinsert_returns_existing_representative() {
        let mut h = VoxelHash::new();
        let g = GridIndex { x: 1, y: 2, z: 3 };
        assert_eq!(h.insert(g, 7), (7, 1));
        assert_eq!(h.insert(g, 9), (7, 2));
        assert_eq!(h.len(), 1);
    }

    #[test]
    fn hash_forced_collisions_resolve_by_probing() {
        // 73856093 = 3 mod 7, so grids (7i, 0, 0) all hash to slot 0 of a
        // 7-slot table. Six entries fill capacity - 1 without growing.
        let mut h = VoxelHash::with_capacity(7);
        let keys: Vec<GridIndex> = (0..6).map(|i| GridIndex { x: 7 * i, y: 0, z: 0 }).collect();
        for (i, &k) in keys.iter().enumerate() {
            h.insert(k, i as u32);
        }
        assert_eq!(h.capacity(), 7);
        assert_eq!(h.len(), 6);
        let mut reps: Vec<u32> = keys.iter().map(|&k| h.get(k).unwrap()).collect();
        reps.sort_unstable();
        assert_eq!(reps, vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn hash_grows_when_nearly_full() {
        let mut h = VoxelHash::with_capacity(7);
        for i in 0..20 {
            h.insert(GridIndex { x: 7 * i, y: 0, z: 0 }, i as u32);
        }
        assert_eq!(h.len(), 20);
        assert!(h.capacity() >= 2 * 7);
        assert_eq!(h.capacity() % 4, 3);
        assert!(is_prime(h.capacity()));
        for i in 0..20 {
            assert_eq!(h.get(GridIndex { x: 7 * i, y: 0, z: 0 }), Some(i as u32));
        }
    }

    #[test]
    fn next_capacity_values() {
        assert_eq!(next_capacity(7), 19);
        assert_eq!(next_capacity(4099), 8219);
    }

    #[test]
    fn seeded_random_representative_is_reproducible_and_valid() {
        let mut r = Xoshiro256::seed_from_u64(3);
        let pts: Vec<Point4> = (0..300)
            .map(|_| p(r.uniform(-1.0, 1.0), r.uniform(-1.0, 1.0), r.uniform(-1.0, 1.0)))
            .collect();
        let g = group_of(pts);
        let a = voxelize_with(&g, 0.5, 31, RepresentativeMode::SeededRandom(11));
        let b = voxelize_with(&g, 0.5, 31, RepresentativeMode::SeededRandom(11));
        assert_eq!(a, b);
        for (grid, rep) in a {
            assert_eq!(GridIndex::of(&g.canonical[rep as usize], 0.5), grid);
        }
    }

    #[test]
    fn sampling_is_deterministic_across_runs() {
        let mut r = Xoshiro256::seed_from_u64(1);
        let cloud = PointCloud::new(
            (0..400)
                .map(|_| p(r.uniform(-2.0, 2.0), r.uniform(-1.0, 1.0), r.uniform(-0.7, 0.7)))
                .collect(),
        );
        let b = Box3D::new(0.0, 0.0, 0.0, 5.0, 3.0, 2.0, 0.0);
        let indices: Vec<u32> = (0..400).collect();
        let g = group_from_indices(&cloud, &b, 0, &indices);
        for strategy in [
            SamplingStrategy::Rps,
            SamplingStrategy::Fps,
            SamplingStrategy::Vs,
            SamplingStrategy::Dvs,
            SamplingStrategy::Dfvs,
        ] {
            let run = |()| {
                sample_with_strategy(strategy, &g, &b, 64, 0.18, 50.0, 0.18, 4099, 5).unwrap()
            };
            assert_eq!(run(()), run(()), "{} not deterministic", strategy.name());
        }
    }
}
