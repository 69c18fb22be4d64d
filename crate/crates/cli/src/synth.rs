//! Seeded synthetic scenes with exactly known grouping truth: boxes are
//! placed with enough separation that no point of one box can fall into
//! another's enlarged footprint, in-box points stay clear of the faces, and
//! clutter is rejected out of every enlarged box.

use std::fmt;

use roigraph_core::fusion::{Calibration, FeatureMap};
use roigraph_core::geom::{from_canonical, point_in_box, Box3D, Point4, PointCloud};
use roigraph_core::rng::Xoshiro256;

use crate::scene::Scene;

#[derive(Clone, Debug)]
pub struct SynthSpec {
    /// Ground-truth boxes to generate (in addition to the pinned ones).
    pub boxes: usize,
    /// Boxes placed verbatim before random placement.
    pub pinned_boxes: Vec<Box3D>,
    /// Base in-box point count at distance zero.
    pub points_per_box: usize,
    /// Whether in-box counts decay with distance from the sensor.
    pub distance_profile: bool,
    /// Uniform clutter points outside all enlarged boxes.
    pub clutter: usize,
    /// When set, the clutter count is adjusted so the total point count hits
    /// this value exactly (in-box points are never removed).
    pub target_total_points: Option<usize>,
    /// Half side of the square placement region; derived from the box count
    /// when absent.
    pub half_range: Option<f64>,
    /// Proposals emitted per ground truth (extras are re-jittered copies).
    pub proposals_per_gt: usize,
    /// Jitter magnitude applied to ground truths to form proposals; zero
    /// makes proposals coincide with the ground truths.
    pub proposal_jitter: f64,
    /// Enlargement margin respected by clutter rejection and separation; must
    /// be at least the grouping sigma used downstream.
    pub separation_sigma: f64,
    /// Attach a synthetic camera and feature map.
    pub fusion: bool,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            boxes: 8,
            pinned_boxes: Vec::new(),
            points_per_box: 150,
            distance_profile: true,
            clutter: 2000,
            target_total_points: None,
            half_range: None,
            proposals_per_gt: 1,
            proposal_jitter: 0.12,
            separation_sigma: 0.5,
            fusion: false,
        }
    }
}

impl SynthSpec {
    /// Named presets used by the CLI and the benchmark harness.
    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "tiny" => Some(Self {
                boxes: 4,
                points_per_box: 120,
                clutter: 800,
                ..Self::default()
            }),
            "desk" => Some(Self {
                boxes: 64,
                points_per_box: 120,
                clutter: 0,
                target_total_points: Some(20_000),
                ..Self::default()
            }),
            "paper-scale" => Some(Self {
                boxes: 500,
                points_per_box: 180,
                clutter: 0,
                target_total_points: Some(180_000),
                ..Self::default()
            }),
            // One very dense nearby box, the worst case for per-proposal
            // sampling (tens of thousands of points cut to a few hundred).
            "dense-group" => Some(Self {
                boxes: 0,
                pinned_boxes: vec![Box3D::new(3.0, 0.0, 0.2, 4.2, 2.4, 1.8, 0.3)],
                points_per_box: 70_000,
                distance_profile: false,
                clutter: 0,
                proposal_jitter: 0.0,
                ..Self::default()
            }),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SynthError {
    /// Separation constraints could not be satisfied after bounded retries.
    Infeasible { placed: usize, requested: usize },
}

impl fmt::Display for SynthError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SynthError::Infeasible { placed, requested } => write!(
                f,
                "could only place {placed} of {requested} boxes without overlap"
            ),
        }
    }
}

impl std::error::Error for SynthError {}

fn quantize(v: f64) -> f64 {
    v as f32 as f64
}

/// BEV radius of the sigma-enlarged footprint.
fn enlarged_radius(b: &Box3D, sigma: f64) -> f64 {
    0.5 * ((b.l + sigma).powi(2) + (b.w + sigma).powi(2)).sqrt()
}

fn separated(a: &Box3D, b: &Box3D, sigma: f64) -> bool {
    let dx = a.cx - b.cx;
    let dy = a.cy - b.cy;
    let min_dist = enlarged_radius(a, sigma) + enlarged_radius(b, sigma) + 0.1;
    dx * dx + dy * dy >= min_dist * min_dist
}

/// In-box point budget. With the distance profile on, counts decay with the
/// box's range and get a per-box jitter; otherwise the base count is exact.
fn in_box_count(spec: &SynthSpec, b: &Box3D, rng: &mut Xoshiro256) -> usize {
    if !spec.distance_profile {
        return spec.points_per_box.max(1);
    }
    let base = spec.points_per_box as f64;
    let scaled = base * (-b.center_range() / 60.0).exp();
    let jittered = scaled * rng.uniform(0.8, 1.2);
    (jittered.round() as usize).max(8)
}

fn synthetic_camera() -> (FeatureMap, Calibration) {
    // Forward-looking pinhole over a 1280x384 image: u = 700 * (-y/x) + 640,
    // v = 700 * (-z/x) + 192, depth = x.
    let calib = Calibration {
        proj: [
            [640.0, -700.0, 0.0, 0.0],
            [192.0, 0.0, -700.0, 0.0],
            [1.0, 0.0, 0.0, 0.0],
        ],
        image_width: 1280,
        image_height: 384,
    };
    let (h, w, c, stride) = (48usize, 160usize, 32usize, 8.0);
    let mut data = Vec::with_capacity(h * w * c);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                data.push(((x * 7 + y * 13 + ch * 3) % 29) as f32 * 0.05);
            }
        }
    }
    (FeatureMap::new(h, w, c, stride, data), calib)
}

/// Generates a scene. Same spec and seed always produce the identical scene.
pub fn synth_scene(spec: &SynthSpec, seed: u64) -> Result<Scene, SynthError> {
    let mut rng = Xoshiro256::seed_from_u64(seed);
    let requested = spec.boxes + spec.pinned_boxes.len();
    let half_range = spec
        .half_range
        .unwrap_or_else(|| ((requested as f64).sqrt() * 6.0).max(20.0));

    let mut gts: Vec<Box3D> = spec.pinned_boxes.clone();
    for _ in 0..spec.boxes {
        let mut placed = false;
        for _ in 0..200 {
            let candidate = Box3D::new(
                quantize(rng.uniform(-half_range, half_range)),
                quantize(rng.uniform(-half_range, half_range)),
                quantize(rng.uniform(-0.5, 1.5)),
                quantize(rng.uniform(3.0, 5.0)),
                quantize(rng.uniform(1.5, 2.2)),
                quantize(rng.uniform(1.3, 1.9)),
                quantize(rng.uniform(-std::f64::consts::PI, std::f64::consts::PI)),
            );
            if gts.iter().all(|g| separated(g, &candidate, spec.separation_sigma)) {
                gts.push(candidate);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(SynthError::Infeasible { placed: gts.len(), requested });
        }
    }

    // In-box points, kept 5% of each extent away from the faces so grouping
    // membership survives f32 quantization of the coordinates.
    let mut points = Vec::new();
    for b in &gts {
        let count = in_box_count(spec, b, &mut rng);
        for _ in 0..count {
            let canonical = Point4::new(
                rng.uniform(-0.45, 0.45) * b.l,
                rng.uniform(-0.45, 0.45) * b.w,
                rng.uniform(-0.45, 0.45) * b.h,
                rng.next_f64(),
            );
            let p = from_canonical(canonical, b);
            points.push(Point4::new(quantize(p.x), quantize(p.y), quantize(p.z), quantize(p.r)));
        }
    }

    let clutter = match spec.target_total_points {
        Some(total) => total.saturating_sub(points.len()),
        None => spec.clutter,
    };
    let clutter_range = half_range + 15.0;
    let mut placed_clutter = 0usize;
    while placed_clutter < clutter {
        let p = Point4::new(
            quantize(rng.uniform(-clutter_range, clutter_range)),
            quantize(rng.uniform(-clutter_range, clutter_range)),
            quantize(rng.uniform(-2.0, 4.0)),
            quantize(rng.next_f64()),
        );
        // Rejected against a margin wider than the grouping sigma, so the
        // clutter can never join a group.
        if gts.iter().any(|b| point_in_box(p, b, spec.separation_sigma)) {
            continue;
        }
        points.push(p);
        placed_clutter += 1;
    }

    let mut proposals = Vec::with_capacity(gts.len() * spec.proposals_per_gt);
    for b in &gts {
        for _ in 0..spec.proposals_per_gt {
            let j = spec.proposal_jitter;
            proposals.push(Box3D::new(
                quantize(b.cx + rng.uniform(-j, j) * b.l),
                quantize(b.cy + rng.uniform(-j, j) * b.w),
                quantize(b.cz + rng.uniform(-j, j) * b.h),
                quantize(b.l * (1.0 + rng.uniform(-j, j))),
                quantize(b.w * (1.0 + rng.uniform(-j, j))),
                quantize(b.h * (1.0 + rng.uniform(-j, j))),
                quantize(b.yaw + rng.uniform(-j, j)),
            ));
        }
    }

    let (feature_map, calibration) = if spec.fusion {
        let (m, c) = synthetic_camera();
        (Some(m), Some(c))
    } else {
        (None, None)
    };

    Ok(Scene {
        cloud: PointCloud::new(points),
        proposals,
        ground_truths: gts,
        feature_map,
        calibration,
    })
}
