//! End-to-end per-proposal refinement: grouping, sampling, graph refinement,
//! fusion, aggregation and heads, plus the cached forward/backward pair used
//! for training.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::config::PipelineConfig;
use crate::fusion::{node_image_feature, Calibration, FeatureMap, FusionError};
use crate::geom::{from_canonical, Box3D, PointCloud};
use crate::graph::{
    edge_conv_backward, run_graph_cached, GraphError, GraphParams, NodeStates, RunGraphCache,
};
use crate::grouping::{patch_search, GroupingError, ProposalGroup};
use crate::head::{
    aggregate_backward, aggregate_cached, decode_box, mlaf_backward, mlaf_cached,
    refine_heads_backward, refine_heads_cached, AggregateCache, AggregationMethod, HeadCache,
    HeadError, HeadGrads, MlafCache, MlafGrads, MlafParams, Refinement,
};
use crate::nn::{
    decode_weights_prefix, dropout_mask, encode_weights, sgd_step, MlpGrads, MlpParams, NnError,
    Tensor2,
};
use crate::rng::Xoshiro256;
use crate::sampling::{sample_with_strategy, SampleResult, SamplingError};

#[derive(Clone, Debug, PartialEq)]
pub enum PipelineError {
    Grouping(GroupingError),
    Sampling(SamplingError),
    Graph(GraphError),
    Head(HeadError),
    Nn(NnError),
    Fusion(FusionError),
    Config(String),
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PipelineError::Grouping(e) => write!(f, "grouping: {e}"),
            PipelineError::Sampling(e) => write!(f, "sampling: {e}"),
            PipelineError::Graph(e) => write!(f, "graph: {e}"),
            PipelineError::Head(e) => write!(f, "head: {e}"),
            PipelineError::Nn(e) => write!(f, "nn: {e}"),
            PipelineError::Fusion(e) => write!(f, "fusion: {e}"),
            PipelineError::Config(msg) => write!(f, "config: {msg}"),
        }
    }
}

impl core::error::Error for PipelineError {}

impl From<GroupingError> for PipelineError {
    fn from(e: GroupingError) -> Self {
        PipelineError::Grouping(e)
    }
}
impl From<SamplingError> for PipelineError {
    fn from(e: SamplingError) -> Self {
        PipelineError::Sampling(e)
    }
}
impl From<GraphError> for PipelineError {
    fn from(e: GraphError) -> Self {
        PipelineError::Graph(e)
    }
}
impl From<HeadError> for PipelineError {
    fn from(e: HeadError) -> Self {
        PipelineError::Head(e)
    }
}
impl From<NnError> for PipelineError {
    fn from(e: NnError) -> Self {
        PipelineError::Nn(e)
    }
}
impl From<FusionError> for PipelineError {
    fn from(e: FusionError) -> Self {
        PipelineError::Fusion(e)
    }
}

/// Every learnable parameter of the refinement stage.
#[derive(Clone, Debug, PartialEq)]
pub struct RefineParams {
    pub graph: GraphParams,
    pub mlaf: MlafParams,
    pub cls: MlpParams,
    pub reg: MlpParams,
    /// Scoring MLP for attention-sum aggregation, when configured.
    pub scoring: Option<MlpParams>,
}

impl RefineParams {
    pub fn seeded(cfg: &PipelineConfig, seed: u64) -> Self {
        let image_channels = if cfg.fusion { 32 } else { 0 };
        let graph = GraphParams::seeded(cfg, seed, image_channels);
        let mlaf = MlafParams::seeded(cfg.fused_in_dim(), cfg.embed_dim, seed ^ 0xf00d);
        let heads = crate::head::HeadParams::seeded(cfg.embed_dim, seed ^ 0xbeef);
        let scoring = match cfg.aggregation {
            AggregationMethod::AttentionSum => Some(crate::nn::seeded_init_with(
                &[cfg.embed_dim, 1],
                &[crate::nn::Activation::None],
                seed ^ 0x5c08e,
            )),
            _ => None,
        };
        Self { graph, mlaf, cls: heads.cls, reg: heads.reg, scoring }
    }

    fn mlp_list(&self) -> Vec<&MlpParams> {
        let mut list = Vec::new();
        list.push(&self.graph.pointnet);
        for phi in &self.graph.phis {
            list.push(phi);
        }
        list.push(&self.mlaf.attention);
        list.push(&self.mlaf.embed);
        list.push(&self.mlaf.shortcut);
        list.push(&self.cls);
        list.push(&self.reg);
        if let Some(s) = &self.scoring {
            list.push(s);
        }
        list
    }

    /// Serializes the bundle as consecutive weight containers in a fixed
    /// order: point encoder, message MLPs, attention, embed, shortcut,
    /// cls, reg, then the optional scoring MLP.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for mlp in self.mlp_list() {
            out.extend_from_slice(&encode_weights(mlp));
        }
        out
    }

    /// Decodes a bundle produced by [`RefineParams::encode`] under the same
    /// config (the config fixes how many message MLPs and whether a scoring
    /// MLP is expected).
    pub fn decode(cfg: &PipelineConfig, bytes: &[u8]) -> Result<Self, PipelineError> {
        let mut pos = 0usize;
        let mut take = || -> Result<MlpParams, PipelineError> {
            let (mlp, used) =
                decode_weights_prefix(&bytes[pos..]).map_err(PipelineError::Nn)?;
            pos += used;
            Ok(mlp)
        };
        let pointnet = take()?;
        let mut phis = Vec::with_capacity(cfg.t());
        for _ in 0..cfg.t() {
            phis.push(take()?);
        }
        let attention = take()?;
        let embed = take()?;
        let shortcut = take()?;
        let cls = take()?;
        let reg = take()?;
        let scoring = match cfg.aggregation {
            AggregationMethod::AttentionSum => Some(take()?),
            _ => None,
        };
        if pos != bytes.len() {
            return Err(PipelineError::Config(String::from(
                "trailing bytes after parameter bundle",
            )));
        }
        Ok(Self {
            graph: GraphParams { pointnet, phis },
            mlaf: MlafParams { attention, embed, shortcut },
            cls,
            reg,
            scoring,
        })
    }
}

/// Refinement output for one proposal. Proposals whose enlarged box grouped
/// no points keep `score` and `refined` empty.
#[derive(Clone, Debug, PartialEq)]
pub struct Refined {
    pub box_index: usize,
    pub score: Option<f64>,
    pub refined: Option<Box3D>,
    pub residual: Option<[f64; 7]>,
    pub grouped_points: usize,
}

/// Per-box sampling seed derived from the master seed.
pub fn box_seed(master: u64, box_index: usize) -> u64 {
    master ^ (box_index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Image features of the sampled nodes (one row per node), or None when
/// fusion is off.
fn sampled_image_features(
    group: &ProposalGroup,
    sampled: &SampleResult,
    b: &Box3D,
    image: Option<(&FeatureMap, &Calibration)>,
) -> Option<Tensor2> {
    image.map(|(map, calib)| {
        let n = sampled.selected.len();
        let mut feats = Tensor2::zeros(n, map.channels);
        for (j, &pos) in sampled.selected.iter().enumerate() {
            let sensor = from_canonical(group.canonical[pos as usize], b);
            let f = node_image_feature(&sensor, map, calib);
            feats.row_mut(j).copy_from_slice(&f);
        }
        feats
    })
}

/// Inference for one already-grouped proposal.
pub fn refine_group(
    group: &ProposalGroup,
    b: &Box3D,
    cfg: &PipelineConfig,
    params: &RefineParams,
    image: Option<(&FeatureMap, &Calibration)>,
) -> Result<Refined, PipelineError> {
    if group.is_empty() {
        return Ok(Refined {
            box_index: group.box_index,
            score: None,
            refined: None,
            residual: None,
            grouped_points: 0,
        });
    }
    let sampled = sample_with_strategy(
        cfg.strategy,
        group,
        b,
        cfg.t_s,
        cfg.lambda,
        cfg.delta,
        cfg.fixed_voxel_size,
        cfg.hash_capacity,
        box_seed(cfg.seed, group.box_index),
    )?;
    let image_feats = sampled_image_features(group, &sampled, b, image);
    let states = crate::graph::run_graph(group, &sampled, b, cfg, &params.graph, image_feats.as_ref())?;
    let fused = crate::head::mlaf(&states, &params.mlaf)?;
    let roi = crate::head::aggregate(&fused, cfg.aggregation, params.scoring.as_ref())?;
    let heads = crate::head::HeadParams { cls: params.cls.clone(), reg: params.reg.clone() };
    let refinement = crate::head::refine_heads(&roi, &heads)?;
    let refined = decode_box(b, &refinement.residual)?;
    Ok(Refined {
        box_index: group.box_index,
        score: Some(crate::math::sigmoid(refinement.score_logit)),
        refined: Some(refined),
        residual: Some(refinement.residual),
        grouped_points: group.len(),
    })
}

/// Whole-scene inference: patch-search grouping followed by per-proposal
/// refinement. Returns one record per proposal, in input order.
pub fn refine_scene(
    cloud: &PointCloud,
    proposals: &[Box3D],
    cfg: &PipelineConfig,
    params: &RefineParams,
    image: Option<(&FeatureMap, &Calibration)>,
) -> Result<Vec<Refined>, PipelineError> {
    cfg.validate()
        .map_err(|e| PipelineError::Config(alloc::format!("{e}")))?;
    let (groups, _warnings) = patch_search(
        cloud,
        proposals,
        cfg.sigma,
        cfg.patch_size,
        cfg.k_max,
        cfg.grouping_mode,
    )?;
    groups
        .iter()
        .zip(proposals)
        .map(|(group, b)| refine_group(group, b, cfg, params, image))
        .collect()
}

/// Caches of one cached forward pass through the trainable stack.
pub struct RefineCache {
    sampled: SampleResult,
    states: NodeStates,
    graph_cache: RunGraphCache,
    mlaf_cache: MlafCache,
    fused_shape: (usize, usize),
    agg_cache: AggregateCache,
    dropout: Option<Vec<f64>>,
    head_cache: HeadCache,
    pub refinement: Refinement,
}

/// Gradients for every trainable parameter set.
pub struct RefineGrads {
    pub pointnet: MlpGrads,
    pub phis: Vec<MlpGrads>,
    pub mlaf: MlafGrads,
    pub heads: HeadGrads,
    pub scoring: Option<MlpGrads>,
}

/// Cached forward pass for training. `dropout_rng` enables the inverted
/// dropout mask on the RoI feature between fusion and the heads; inference
/// passes None and applies no mask.
pub fn refine_forward_cached(
    group: &ProposalGroup,
    b: &Box3D,
    cfg: &PipelineConfig,
    params: &RefineParams,
    image: Option<(&FeatureMap, &Calibration)>,
    dropout_rng: Option<&mut Xoshiro256>,
) -> Result<RefineCache, PipelineError> {
    if group.is_empty() {
        return Err(PipelineError::Sampling(SamplingError::EmptyGroup));
    }
    let sampled = sample_with_strategy(
        cfg.strategy,
        group,
        b,
        cfg.t_s,
        cfg.lambda,
        cfg.delta,
        cfg.fixed_voxel_size,
        cfg.hash_capacity,
        box_seed(cfg.seed, group.box_index),
    )?;
    let image_feats = sampled_image_features(group, &sampled, b, image);
    let (states, graph_cache) =
        run_graph_cached(group, &sampled, b, cfg, &params.graph, image_feats.as_ref())?;
    let (fused, mlaf_cache) = mlaf_cached(&states, &params.mlaf)?;
    let fused_shape = (fused.rows, fused.cols);
    let (mut roi, agg_cache) =
        aggregate_cached(&fused, cfg.aggregation, params.scoring.as_ref())?;
    let dropout = match dropout_rng {
        Some(rng) if cfg.dropout > 0.0 => {
            let mask = dropout_mask(1, roi.len(), cfg.dropout, rng);
            for (v, m) in roi.iter_mut().zip(&mask.data) {
                *v *= m;
            }
            Some(mask.data)
        }
        _ => None,
    };
    let heads = crate::head::HeadParams { cls: params.cls.clone(), reg: params.reg.clone() };
    let (refinement, head_cache) = refine_heads_cached(&roi, &heads)?;
    Ok(RefineCache {
        sampled,
        states,
        graph_cache,
        mlaf_cache,
        fused_shape,
        agg_cache,
        dropout,
        head_cache,
        refinement,
    })
}

/// Backward from `(d_logit, d_residual)` through heads, aggregation, fusion,
/// the message iterations and the point encoder.
pub fn refine_backward(
    params: &RefineParams,
    cache: &RefineCache,
    d_logit: f64,
    d_residual: &[f64; 7],
) -> Result<RefineGrads, PipelineError> {
    let heads = crate::head::HeadParams { cls: params.cls.clone(), reg: params.reg.clone() };
    let (mut grad_roi, head_grads) =
        refine_heads_backward(&heads, &cache.head_cache, d_logit, d_residual)?;
    if let Some(mask) = &cache.dropout {
        for (g, m) in grad_roi.iter_mut().zip(mask) {
            *g *= m;
        }
    }
    let (grad_fused, scoring_grads) = aggregate_backward(
        &cache.agg_cache,
        cache.fused_shape,
        &grad_roi,
        params.scoring.as_ref(),
    )?;
    let (grad_concat, mlaf_grads) = mlaf_backward(&params.mlaf, &cache.mlaf_cache, &grad_fused)?;

    // Split the concatenation gradient into per-iteration blocks.
    let iterated = cache.states.iterated();
    let n = cache.states.node_count();
    let mut per_iter: Vec<Tensor2> = Vec::with_capacity(iterated.len());
    let mut offset = 0usize;
    for s in iterated {
        let mut block = Tensor2::zeros(n, s.cols);
        for j in 0..n {
            block
                .row_mut(j)
                .copy_from_slice(&grad_concat.row(j)[offset..offset + s.cols]);
        }
        offset += s.cols;
        per_iter.push(block);
    }

    // Walk the message iterations backwards, accumulating the gradient that
    // flows both from the fusion concat and from the next iteration.
    let mut phi_grads: Vec<Option<MlpGrads>> = (0..params.graph.phis.len()).map(|_| None).collect();
    let mut carried: Option<Tensor2> = None;
    for t in (0..params.graph.phis.len()).rev() {
        let mut grad_st = per_iter[t].clone();
        if let Some(c) = carried.take() {
            for (v, add) in grad_st.data.iter_mut().zip(&c.data) {
                *v += add;
            }
        }
        let state_cols = cache.states.states[t].cols;
        let (grad_prev, pg) = edge_conv_backward(
            &params.graph.phis[t],
            &cache.graph_cache.steps[t],
            &grad_st,
            state_cols,
        )?;
        phi_grads[t] = Some(pg);
        carried = Some(grad_prev);
    }

    // Gradient on S^0 flows into the point-encoder features (columns 4..4+F).
    let mut pointnet_grads = MlpGrads::zeros_like(&params.graph.pointnet);
    if let Some(grad_s0) = carried {
        let f_dim = params.graph.pointnet.out_dim();
        for (j, pn_cache) in cache.graph_cache.pointnet.iter().enumerate() {
            if let Some(pn_cache) = pn_cache {
                let grad_f = &grad_s0.row(j)[4..4 + f_dim];
                if grad_f.iter().any(|&g| g != 0.0) {
                    let g = crate::graph::pointnet_backward(
                        &params.graph.pointnet,
                        pn_cache,
                        grad_f,
                    )?;
                    pointnet_grads.add_assign(&g);
                }
            }
        }
    }

    Ok(RefineGrads {
        pointnet: pointnet_grads,
        phis: phi_grads.into_iter().map(|g| g.expect("per-step grads")).collect(),
        mlaf: mlaf_grads,
        heads: head_grads,
        scoring: scoring_grads,
    })
}

/// One SGD step over the whole parameter set.
pub fn apply_sgd(params: &mut RefineParams, grads: &RefineGrads, lr: f64) {
    sgd_step(&mut params.graph.pointnet, &grads.pointnet, lr);
    for (phi, g) in params.graph.phis.iter_mut().zip(&grads.phis) {
        sgd_step(phi, g, lr);
    }
    sgd_step(&mut params.mlaf.attention, &grads.mlaf.attention, lr);
    sgd_step(&mut params.mlaf.embed, &grads.mlaf.embed, lr);
    sgd_step(&mut params.mlaf.shortcut, &grads.mlaf.shortcut, lr);
    sgd_step(&mut params.cls, &grads.heads.cls, lr);
    sgd_step(&mut params.reg, &grads.heads.reg, lr);
    if let (Some(s), Some(g)) = (params.scoring.as_mut(), grads.scoring.as_ref()) {
        sgd_step(s, g, lr);
    }
}

impl RefineCache {
    pub fn sampled(&self) -> &SampleResult {
        &self.sampled
    }
}
