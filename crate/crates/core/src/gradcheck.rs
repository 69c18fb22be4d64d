//! Central finite-difference verification of every differentiable path: the
//! point encoder, the message iterations, multi-level fusion, the heads, and
//! the full loss composite. Shared by the test suites and the `gradcheck`
//! CLI subcommand.

use alloc::string::String;
use alloc::vec::Vec;

use crate::config::PipelineConfig;
use crate::geom::{Box3D, Point4};
use crate::graph::{
    edge_conv_backward, edge_conv_step, edge_conv_step_cached, knn_graph, pointnet_backward,
    pointnet_encode, pointnet_encode_cached, NodeStates,
};
use crate::grouping::ProposalGroup;
use crate::head::{
    aggregate, aggregate_backward, aggregate_cached, mlaf, mlaf_backward, mlaf_cached,
    refine_heads_backward, refine_heads_cached, AggregationMethod, HeadParams, MlafParams,
};
use crate::nn::{seeded_init_with, Activation, MlpGrads, MlpParams, Tensor2};
use crate::objectives::{bce_with_logits, bce_with_logits_grad, l1_grad, l1_loss, total_loss};
use crate::pipeline::{refine_backward, refine_forward_cached, RefineParams};
use crate::rng::Xoshiro256;

/// Default step of the central difference.
pub const DEFAULT_EPS: f64 = 1e-4;
/// Default relative tolerance.
pub const DEFAULT_TOL: f64 = 1e-4;

/// Outcome of one finite-difference suite.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub name: String,
    pub seed: u64,
    /// max |analytic - fd| / max(|analytic|, |fd|, 1e-3) over the sampled
    /// coordinates. The 1e-3 floor keeps near-zero gradients from inflating
    /// the ratio with finite-difference noise.
    pub max_rel_err: f64,
    pub checked: usize,
    /// Coordinates whose one-sided differences disagree, i.e. the
    /// perturbation straddles a max/relu kink where the loss is not
    /// differentiable and the analytic side follows the lowest-index
    /// subgradient convention. These are excluded from the comparison.
    pub skipped_kinks: usize,
    pub passed: bool,
}

impl core::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(
            f,
            "{} [seed {}]: {} coords ({} kinks skipped), max rel err {:.3e} -> {}",
            self.name,
            self.seed,
            self.checked,
            self.skipped_kinks,
            self.max_rel_err,
            if self.passed { "ok" } else { "FAIL" }
        )
    }
}

struct Coord {
    mlp: usize,
    layer: usize,
    is_bias: bool,
    idx: usize,
}

fn sample_coords(
    params: &[MlpParams],
    per_tensor: usize,
    rng: &mut Xoshiro256,
) -> Vec<Coord> {
    let mut coords = Vec::new();
    for (m, mlp) in params.iter().enumerate() {
        for (l, layer) in mlp.layers.iter().enumerate() {
            for &(is_bias, len) in &[(false, layer.weights.len()), (true, layer.bias.len())] {
                for idx in rng.sample_indices(len, per_tensor.min(len)) {
                    coords.push(Coord { mlp: m, layer: l, is_bias, idx });
                }
            }
        }
    }
    coords
}

fn coord_value(params: &[MlpParams], c: &Coord) -> f64 {
    let layer = &params[c.mlp].layers[c.layer];
    if c.is_bias {
        layer.bias[c.idx]
    } else {
        layer.weights[c.idx]
    }
}

fn set_coord(params: &mut [MlpParams], c: &Coord, v: f64) {
    let layer = &mut params[c.mlp].layers[c.layer];
    if c.is_bias {
        layer.bias[c.idx] = v;
    } else {
        layer.weights[c.idx] = v;
    }
}

fn analytic_value(grads: &[MlpGrads], c: &Coord) -> f64 {
    let layer = &grads[c.mlp].layers[c.layer];
    if c.is_bias {
        layer.bias[c.idx]
    } else {
        layer.weights[c.idx]
    }
}

/// Central-difference driver: perturbs sampled coordinates of `params` and
/// compares the quotient against the analytic gradients.
///
/// The losses here are piecewise smooth (max reductions, relu, L1), so a
/// perturbation interval occasionally straddles a kink where the central
/// quotient estimates a useless average of two slopes. A coordinate failing
/// at the primary step is therefore retried at geometrically smaller steps;
/// a generic kink leaves the shrinking interval and the quotient converges.
/// Coordinates that keep failing while their one-sided quotients disagree at
/// the smallest step sit on a kink itself, where the analytic side follows
/// the documented lowest-index subgradient convention; those are counted and
/// excluded rather than compared.
fn fd_check(
    name: &str,
    seed: u64,
    mut params: Vec<MlpParams>,
    loss: &mut dyn FnMut(&[MlpParams]) -> f64,
    analytic: &[MlpGrads],
    eps: f64,
    tol: f64,
    per_tensor: usize,
) -> GradCheckReport {
    let mut rng = Xoshiro256::seed_from_u64(seed ^ 0xfd);
    let coords = sample_coords(&params, per_tensor, &mut rng);
    let base = loss(&params);
    let mut max_rel = 0.0_f64;
    let mut checked = 0usize;
    let mut skipped = 0usize;
    for c in &coords {
        let an = analytic_value(analytic, c);
        let orig = coord_value(&params, c);
        let mut outcome = None;
        let mut last_sides = (0.0, 0.0);
        for shrink in [1.0, 16.0, 256.0] {
            let h = eps / shrink;
            set_coord(&mut params, c, orig + h);
            let up = loss(&params);
            set_coord(&mut params, c, orig - h);
            let down = loss(&params);
            set_coord(&mut params, c, orig);
            let fd = (up - down) / (2.0 * h);
            let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-3);
            last_sides = ((base - down) / h, (up - base) / h);
            if rel <= tol {
                outcome = Some(rel);
                break;
            }
        }
        match outcome {
            Some(rel) => {
                if rel > max_rel {
                    max_rel = rel;
                }
                checked += 1;
            }
            None => {
                let (left, right) = last_sides;
                let disagree = (left - right).abs() > 0.05 * left.abs().max(right.abs());
                if disagree {
                    skipped += 1;
                } else {
                    // Genuine mismatch on a smooth coordinate.
                    max_rel = f64::INFINITY;
                    checked += 1;
                }
            }
        }
    }
    GradCheckReport {
        name: String::from(name),
        seed,
        max_rel_err: max_rel,
        checked,
        skipped_kinks: skipped,
        passed: checked > 0 && max_rel <= tol,
    }
}

fn random_points(n: usize, rng: &mut Xoshiro256) -> Vec<Point4> {
    (0..n)
        .map(|_| {
            Point4::new(
                rng.uniform(-1.5, 1.5),
                rng.uniform(-0.9, 0.9),
                rng.uniform(-0.7, 0.7),
                rng.next_f64(),
            )
        })
        .collect()
}

fn random_weights(n: usize, rng: &mut Xoshiro256) -> Vec<f64> {
    (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()
}

fn weighted_sum(t: &Tensor2, w: &[f64]) -> f64 {
    let mut acc = 0.0;
    for j in 0..t.rows {
        for (c, wc) in w.iter().enumerate() {
            acc += wc * t.get(j, c);
        }
    }
    acc
}

/// Point-encoder path: loss is a fixed random projection of one node's
/// pooled feature.
pub fn check_pointnet(seed: u64, eps: f64, tol: f64) -> GradCheckReport {
    let mut rng = Xoshiro256::seed_from_u64(seed);
    let points = random_points(24, &mut rng);
    let node = points[0];
    let mlp = seeded_init_with(&[4, 8, 8], &[Activation::Relu, Activation::Relu], seed ^ 1);
    let w = random_weights(8, &mut rng);

    let (_, cache) = pointnet_encode_cached(&node, &points, 1.0, &mlp).unwrap();
    let grads = pointnet_backward(&mlp, &cache.expect("nonempty neighborhood"), &w).unwrap();

    let mut loss = |p: &[MlpParams]| -> f64 {
        let f = pointnet_encode(&node, &points, 1.0, &p[0]).unwrap();
        f.iter().zip(&w).map(|(a, b)| a * b).sum()
    };
    fd_check("pointnet", seed, alloc::vec![mlp], &mut loss, &[grads], eps, tol, 16)
}

/// Message-iteration path: two chained updates, loss on the final states.
pub fn check_edge_conv(seed: u64, eps: f64, tol: f64) -> GradCheckReport {
    let mut rng = Xoshiro256::seed_from_u64(seed);
    let positions = random_points(14, &mut rng);
    let graph = knn_graph(&positions, 4).unwrap();
    let c0 = 6;
    let s0 = Tensor2::from_vec(14, c0, random_weights(14 * c0, &mut rng));
    let phi1 = seeded_init_with(&[2 * c0, 8], &[Activation::Relu], seed ^ 2);
    let phi2 = seeded_init_with(&[16, 5], &[Activation::Relu], seed ^ 3);
    let w = random_weights(5, &mut rng);

    let (s1, cache1) = edge_conv_step_cached(&s0, &graph, &phi1).unwrap();
    let (_, cache2) = edge_conv_step_cached(&s1, &graph, &phi2).unwrap();

    let mut grad_out = Tensor2::zeros(14, 5);
    for j in 0..14 {
        for (c, wc) in w.iter().enumerate() {
            grad_out.set(j, c, *wc);
        }
    }
    let (grad_s1, g2) = edge_conv_backward(&phi2, &cache2, &grad_out, s1.cols).unwrap();
    let (_, g1) = edge_conv_backward(&phi1, &cache1, &grad_s1, s0.cols).unwrap();

    let mut loss = |p: &[MlpParams]| -> f64 {
        let a = edge_conv_step(&s0, &graph, &p[0]).unwrap();
        let b = edge_conv_step(&a, &graph, &p[1]).unwrap();
        weighted_sum(&b, &w)
    };
    fd_check(
        "edge_conv",
        seed,
        alloc::vec![phi1, phi2],
        &mut loss,
        &[g1, g2],
        eps,
        tol,
        16,
    )
}

fn random_states(n: usize, dims: &[usize], rng: &mut Xoshiro256) -> NodeStates {
    let mut states = alloc::vec![Tensor2::zeros(n, 4)];
    for &d in dims {
        states.push(Tensor2::from_vec(n, d, random_weights(n * d, rng)));
    }
    NodeStates { states }
}

/// Fusion path: loss on a random projection of the fused features.
pub fn check_mlaf(seed: u64, eps: f64, tol: f64) -> GradCheckReport {
    let mut rng = Xoshiro256::seed_from_u64(seed);
    let states = random_states(10, &[6, 6, 8], &mut rng);
    let p = MlafParams::seeded(20, 16, seed ^ 4);
    let w = random_weights(16, &mut rng);

    let (_, cache) = mlaf_cached(&states, &p).unwrap();
    let mut grad = Tensor2::zeros(10, 16);
    for j in 0..10 {
        for (c, wc) in w.iter().enumerate() {
            grad.set(j, c, *wc);
        }
    }
    let (_, grads) = mlaf_backward(&p, &cache, &grad).unwrap();

    let mut loss = |ps: &[MlpParams]| -> f64 {
        let p = MlafParams {
            attention: ps[0].clone(),
            embed: ps[1].clone(),
            shortcut: ps[2].clone(),
        };
        weighted_sum(&mlaf(&states, &p).unwrap(), &w)
    };
    fd_check(
        "mlaf",
        seed,
        alloc::vec![p.attention.clone(), p.embed.clone(), p.shortcut.clone()],
        &mut loss,
        &[grads.attention, grads.embed, grads.shortcut],
        eps,
        tol,
        12,
    )
}

/// Head path through max aggregation: loss mixes the logit and residuals.
pub fn check_heads(seed: u64, eps: f64, tol: f64) -> GradCheckReport {
    let mut rng = Xoshiro256::seed_from_u64(seed);
    let feats = Tensor2::from_vec(9, 12, random_weights(9 * 12, &mut rng));
    let heads = HeadParams::seeded(12, seed ^ 5);
    let w_res = random_weights(7, &mut rng);

    let (roi, agg_cache) = aggregate_cached(&feats, AggregationMethod::Max, None).unwrap();
    let (_, head_cache) = refine_heads_cached(&roi, &heads).unwrap();
    let mut d_res = [0.0; 7];
    d_res.copy_from_slice(&w_res);
    let (grad_roi, head_grads) =
        refine_heads_backward(&heads, &head_cache, 1.0, &d_res).unwrap();
    let _ = aggregate_backward(&agg_cache, (9, 12), &grad_roi, None).unwrap();

    let mut loss = |ps: &[MlpParams]| -> f64 {
        let h = HeadParams { cls: ps[0].clone(), reg: ps[1].clone() };
        let roi = aggregate(&feats, AggregationMethod::Max, None).unwrap();
        let r = crate::head::refine_heads(&roi, &h).unwrap();
        r.score_logit + r.residual.iter().zip(&w_res).map(|(a, b)| a * b).sum::<f64>()
    };
    fd_check(
        "heads",
        seed,
        alloc::vec![heads.cls.clone(), heads.reg.clone()],
        &mut loss,
        &[head_grads.cls, head_grads.reg],
        eps,
        tol,
        12,
    )
}

fn composite_instance(seed: u64) -> (ProposalGroup, Box3D, PipelineConfig, RefineParams, f64, [f64; 7]) {
    let mut rng = Xoshiro256::seed_from_u64(seed);
    let mut cfg = PipelineConfig::default();
    cfg.t_s = 12;
    cfg.iter_dims = alloc::vec![6, 6, 8];
    cfg.pointnet_channels = alloc::vec![6, 6];
    cfg.embed_dim = 16;
    cfg.k = 4;
    cfg.seed = seed;

    let canonical = random_points(48, &mut rng);
    let group = ProposalGroup {
        box_index: 0,
        point_indices: (0..48).collect(),
        canonical,
    };
    let b = Box3D::new(6.0, -1.0, 0.2, 3.2, 1.9, 1.4, 0.5);
    let params = RefineParams::seeded(&cfg, seed ^ 6);
    let score_target = 0.7;
    let mut t = [0.0; 7];
    for v in &mut t {
        *v = rng.uniform(-0.4, 0.4);
    }
    (group, b, cfg, params, score_target, t)
}

/// Full composite: BCE on the logit plus L1 on the residual, back through
/// heads, fusion, message iterations and the point encoder.
pub fn check_composite(seed: u64, eps: f64, tol: f64) -> GradCheckReport {
    let (group, b, cfg, params, score_target, target) = composite_instance(seed);

    let loss_value = |p: &RefineParams| -> f64 {
        let cache = refine_forward_cached(&group, &b, &cfg, p, None, None).unwrap();
        let cls = bce_with_logits(&[cache.refinement.score_logit], &[score_target]).unwrap();
        let reg = l1_loss(&[cache.refinement.residual], &[target], &[true]);
        total_loss(cls, reg, cfg.alpha)
    };

    let cache = refine_forward_cached(&group, &b, &cfg, &params, None, None).unwrap();
    let d_logit = bce_with_logits_grad(&[cache.refinement.score_logit], &[score_target])[0];
    let d_res_vec = l1_grad(&[cache.refinement.residual], &[target], &[true]);
    let mut d_res = [0.0; 7];
    for (dst, src) in d_res.iter_mut().zip(&d_res_vec[0]) {
        *dst = cfg.alpha * src;
    }
    let grads = refine_backward(&params, &cache, d_logit, &d_res).unwrap();

    let flat_params = alloc::vec![
        params.graph.pointnet.clone(),
        params.graph.phis[0].clone(),
        params.graph.phis[1].clone(),
        params.graph.phis[2].clone(),
        params.mlaf.attention.clone(),
        params.mlaf.embed.clone(),
        params.mlaf.shortcut.clone(),
        params.cls.clone(),
        params.reg.clone(),
    ];
    let flat_grads = alloc::vec![
        grads.pointnet,
        grads.phis[0].clone(),
        grads.phis[1].clone(),
        grads.phis[2].clone(),
        grads.mlaf.attention,
        grads.mlaf.embed,
        grads.mlaf.shortcut,
        grads.heads.cls,
        grads.heads.reg,
    ];

    let rebuild = |ps: &[MlpParams]| -> RefineParams {
        RefineParams {
            graph: crate::graph::GraphParams {
                pointnet: ps[0].clone(),
                phis: alloc::vec![ps[1].clone(), ps[2].clone(), ps[3].clone()],
            },
            mlaf: MlafParams {
                attention: ps[4].clone(),
                embed: ps[5].clone(),
                shortcut: ps[6].clone(),
            },
            cls: ps[7].clone(),
            reg: ps[8].clone(),
            scoring: None,
        }
    };
    let mut loss = |ps: &[MlpParams]| loss_value(&rebuild(ps));
    fd_check("composite_bce_l1", seed, flat_params, &mut loss, &flat_grads, eps, tol, 8)
}

/// Every suite over the given seeds.
pub fn run_all(seeds: &[u64], eps: f64, tol: f64) -> Vec<GradCheckReport> {
    let mut reports = Vec::new();
    for &seed in seeds {
        reports.push(check_pointnet(seed, eps, tol));
        reports.push(check_edge_conv(seed, eps, tol));
        reports.push(check_mlaf(seed, eps, tol));
        reports.push(check_heads(seed, eps, tol));
        reports.push(check_composite(seed, eps, tol));
    }
    reports
}
