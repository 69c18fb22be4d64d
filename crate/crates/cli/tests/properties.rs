//! Cross-module properties that need scenes of realistic size.

use std::time::Instant;

use rayon::prelude::*;

use roigraph_core::geom::{Point4, PointCloud};
use roigraph_core::grouping::{exhaustive_group, patch_search, GroupingMode, PatchIndex};
use roigraph_core::rng::Xoshiro256;

use roigraph::synth::{synth_scene, SynthSpec};

fn median_ms<F: FnMut()>(runs: usize, mut f: F) -> f64 {
    f();
    let mut samples: Vec<f64> = (0..runs)
        .map(|_| {
            let t = Instant::now();
            f();
            t.elapsed().as_secs_f64() * 1e3
        })
        .collect();
    samples.sort_by(f64::total_cmp);
    samples[samples.len() / 2]
}

/// Patch search only pays a per-point constant for points outside occupied
/// patches: doubling the far-away clutter leaves the grouped output
/// untouched and the runtime within 30%, while the exhaustive baseline's
/// cost grows with the full cloud.
#[test]
fn patch_search_runtime_ignores_far_points() {
    let spec = SynthSpec {
        boxes: 256,
        points_per_box: 600,
        distance_profile: false,
        clutter: 0,
        proposals_per_gt: 1,
        proposal_jitter: 0.1,
        ..SynthSpec::default()
    };
    let scene = synth_scene(&spec, 5).unwrap();
    let mut rng = Xoshiro256::seed_from_u64(17);
    let far: Vec<Point4> = (0..300_000)
        .map(|_| {
            Point4::new(
                rng.uniform(2000.0, 3000.0),
                rng.uniform(-500.0, 500.0),
                rng.uniform(-2.0, 4.0),
                rng.next_f64(),
            )
        })
        .collect();

    let mut near_plus_far = scene.cloud.points.clone();
    near_plus_far.extend_from_slice(&far);
    let base_cloud = PointCloud::new(near_plus_far.clone());
    near_plus_far.extend_from_slice(&far);
    let doubled_cloud = PointCloud::new(near_plus_far);

    let search = |cloud: &PointCloud| {
        patch_search(cloud, &scene.proposals, 0.4, 1.0, 32, GroupingMode::Permissive)
            .unwrap()
            .0
    };
    let groups_base = search(&base_cloud);
    let groups_doubled = search(&doubled_cloud);
    for (a, b) in groups_base.iter().zip(&groups_doubled) {
        assert_eq!(a.point_indices, b.point_indices, "far points changed a group");
    }

    let ps_base = median_ms(9, || {
        std::hint::black_box(search(std::hint::black_box(&base_cloud)));
    });
    let ps_doubled = median_ms(9, || {
        std::hint::black_box(search(std::hint::black_box(&doubled_cloud)));
    });
    let ps_ratio = ps_doubled / ps_base;
    assert!(
        ps_ratio < 1.3,
        "patch search slowed {ps_ratio:.2}x ({ps_base:.2} -> {ps_doubled:.2} ms)"
    );

    let ex_base = median_ms(3, || {
        std::hint::black_box(exhaustive_group(
            std::hint::black_box(&base_cloud),
            &scene.proposals,
            0.4,
        ));
    });
    let ex_doubled = median_ms(3, || {
        std::hint::black_box(exhaustive_group(
            std::hint::black_box(&doubled_cloud),
            &scene.proposals,
            0.4,
        ));
    });
    let ex_ratio = ex_doubled / ex_base;
    assert!(
        ex_ratio > 1.4,
        "exhaustive baseline should scale with the cloud ({ex_base:.2} -> {ex_doubled:.2} ms)"
    );
    println!(
        "far-point doubling: patch search {ps_ratio:.2}x, exhaustive {ex_ratio:.2}x"
    );
}

/// Per-box queries against a built index are read-only, so running them in
/// parallel across boxes must reproduce the serial grouping exactly.
#[test]
fn parallel_box_queries_match_serial_grouping() {
    let scene = synth_scene(&SynthSpec::preset("desk").unwrap(), 8).unwrap();
    let serial = patch_search(
        &scene.cloud,
        &scene.proposals,
        0.4,
        1.0,
        32,
        GroupingMode::Permissive,
    )
    .unwrap()
    .0;
    let index = PatchIndex::build(
        &scene.cloud,
        &scene.proposals,
        0.4,
        1.0,
        32,
        GroupingMode::Permissive,
    )
    .unwrap();
    let parallel: Vec<_> = scene
        .proposals
        .par_iter()
        .enumerate()
        .map(|(i, b)| index.group_box(&scene.cloud, b, i))
        .collect();
    assert_eq!(parallel, serial);
}
