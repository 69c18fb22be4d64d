//! Wall-clock benchmark harness over synthetic sweeps: grouping methods
//! against the exhaustive baseline, and sampling strategies against raw
//! farthest point sampling. Results go to CSV as
//! `method,n_points,m_boxes,median_ms,speedup`.
//!
//! Speedups are measured single-threaded to isolate the algorithmic effect;
//! multi-threaded grouping rows (suffix `-mt`) are reported alongside.

use std::hint::black_box;
use std::io::Write;
use std::time::Instant;

use anyhow::Result;
use rayon::prelude::*;

use roigraph_core::config::PipelineConfig;
use roigraph_core::grouping::{exhaustive_group, patch_search, PatchIndex};
use roigraph_core::sampling::{self, SamplingStrategy};

use crate::scene::Scene;

#[derive(Clone, Debug)]
pub struct BenchRow {
    pub method: String,
    pub n_points: usize,
    pub m_boxes: usize,
    pub median_ms: f64,
    /// Wall-time ratio of the section's baseline over this method.
    pub speedup: f64,
}

/// Median wall time of `runs` executions, in milliseconds.
fn median_ms<F: FnMut()>(runs: usize, mut f: F) -> f64 {
    // One warmup execution keeps first-touch page faults out of the numbers.
    f();
    let mut samples: Vec<f64> = (0..runs)
        .map(|_| {
            let start = Instant::now();
            f();
            start.elapsed().as_secs_f64() * 1e3
        })
        .collect();
    samples.sort_by(f64::total_cmp);
    samples[samples.len() / 2]
}

/// Times the grouping methods on one scene: the exhaustive baseline, the
/// patch search, and (with `threads > 1`) a parallel per-box patch query.
pub fn bench_grouping(scene: &Scene, cfg: &PipelineConfig, runs: usize, threads: usize) -> Vec<BenchRow> {
    let (n, m) = (scene.cloud.len(), scene.proposals.len());
    let baseline_ms = median_ms(runs, || {
        black_box(exhaustive_group(
            black_box(&scene.cloud),
            black_box(&scene.proposals),
            cfg.sigma,
        ));
    });
    let ps_ms = median_ms(runs, || {
        black_box(
            patch_search(
                black_box(&scene.cloud),
                black_box(&scene.proposals),
                cfg.sigma,
                cfg.patch_size,
                cfg.k_max,
                roigraph_core::grouping::GroupingMode::Permissive,
            )
            .expect("grouping"),
        );
    });
    let mut rows = vec![
        BenchRow {
            method: "pr".into(),
            n_points: n,
            m_boxes: m,
            median_ms: baseline_ms,
            speedup: 1.0,
        },
        BenchRow {
            method: "ps".into(),
            n_points: n,
            m_boxes: m,
            median_ms: ps_ms,
            speedup: baseline_ms / ps_ms,
        },
    ];
    if threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("thread pool");
        let mt_ms = median_ms(runs, || {
            pool.install(|| {
                let index = PatchIndex::build(
                    &scene.cloud,
                    &scene.proposals,
                    cfg.sigma,
                    cfg.patch_size,
                    cfg.k_max,
                    roigraph_core::grouping::GroupingMode::Permissive,
                )
                .expect("grouping");
                let groups: Vec<_> = scene
                    .proposals
                    .par_iter()
                    .enumerate()
                    .map(|(i, b)| index.group_box(&scene.cloud, b, i))
                    .collect();
                black_box(groups);
            });
        });
        rows.push(BenchRow {
            method: format!("ps-mt{threads}"),
            n_points: n,
            m_boxes: m,
            median_ms: mt_ms,
            speedup: baseline_ms / mt_ms,
        });
    }
    rows
}

/// Times the sampling strategies on the largest group of the scene, with raw
/// farthest point sampling as the section baseline.
pub fn bench_sampling(scene: &Scene, cfg: &PipelineConfig, runs: usize) -> Vec<BenchRow> {
    let groups = exhaustive_group(&scene.cloud, &scene.ground_truths, cfg.sigma);
    let Some(group) = groups.iter().max_by_key(|g| g.len()) else {
        return Vec::new();
    };
    if group.is_empty() {
        return Vec::new();
    }
    let b = &scene.ground_truths[group.box_index];
    let n = group.len();

    let fps_ms = median_ms(runs, || {
        black_box(sampling::fps(black_box(&group.canonical), cfg.t_s, 0));
    });
    let mut rows = vec![BenchRow {
        method: "fps".into(),
        n_points: n,
        m_boxes: cfg.t_s,
        median_ms: fps_ms,
        speedup: 1.0,
    }];
    for strategy in [
        SamplingStrategy::Rps,
        SamplingStrategy::Vs,
        SamplingStrategy::Dvs,
        SamplingStrategy::Dfvs,
    ] {
        let ms = median_ms(runs, || {
            black_box(
                sampling::sample_with_strategy(
                    strategy,
                    black_box(group),
                    b,
                    cfg.t_s,
                    cfg.lambda,
                    cfg.delta,
                    cfg.fixed_voxel_size,
                    cfg.hash_capacity,
                    cfg.seed,
                )
                .expect("sampling"),
            );
        });
        rows.push(BenchRow {
            method: strategy.name().into(),
            n_points: n,
            m_boxes: cfg.t_s,
            median_ms: ms,
            speedup: fps_ms / ms,
        });
    }
    rows
}

pub fn write_csv<W: Write>(mut w: W, rows: &[BenchRow]) -> Result<()> {
    writeln!(w, "method,n_points,m_boxes,median_ms,speedup")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{:.6},{:.3}",
            r.method, r.n_points, r.m_boxes, r.median_ms, r.speedup
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synth_scene, SynthSpec};

    #[test]
    fn bench_rows_have_expected_shape() {
        let scene = synth_scene(&SynthSpec::preset("tiny").unwrap(), 1).unwrap();
        let cfg = PipelineConfig::default();
        let rows = bench_grouping(&scene, &cfg, 3, 2);
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].method, "pr");
        assert_eq!(rows[1].method, "ps");
        assert!(rows.iter().all(|r| r.median_ms >= 0.0));

        let sampling_rows = bench_sampling(&scene, &cfg, 3);
        assert_eq!(sampling_rows.len(), 5);
        assert_eq!(sampling_rows[0].method, "fps");
    }

    #[test]
    fn csv_has_header_and_rows() {
        let rows = vec![BenchRow {
            method: "ps".into(),
            n_points: 100,
            m_boxes: 4,
            median_ms: 1.25,
            speedup: 8.0,
        }];
        let mut buf = Vec::new();
        write_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "method,n_points,m_boxes,median_ms,speedup");
        assert_eq!(lines.next().unwrap(), "ps,100,4,1.250000,8.000");
    }
}
