//! Per-proposal local graphs: exact k-NN construction, per-node neighborhood
//! encoding, node-state initialization, and iterated edge-message updates.

use alloc::vec::Vec;
use core::fmt;

use crate::config::PipelineConfig;
use crate::geom::{diagonal_corners, Box3D, Point4};
use crate::grouping::ProposalGroup;
use crate::nn::{
    mlp_backward, mlp_forward_cached, MlpCache, MlpGrads, MlpParams, NnError, Tensor2,
};
use crate::sampling::SampleResult;

/// k-NN graph over a proposal's sampled nodes. Neighbor rows hold `k`
/// distinct node indices (self excluded); row order carries no meaning, the
/// message reduction fixes its own order.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalGraph {
    pub n: usize,
    pub k: usize,
    /// Row-major `n x k` neighbor indices.
    pub neighbors: Vec<u32>,
}

impl LocalGraph {
    pub fn neighbors_of(&self, node: usize) -> &[u32] {
        &self.neighbors[node * self.k..(node + 1) * self.k]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum GraphError {
    /// Fewer than two nodes cannot form a graph.
    DegenerateGraph { nodes: usize },
    Nn(NnError),
}

impl fmt::Display for GraphError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphError::DegenerateGraph { nodes } => {
                write!(f, "cannot build a graph over {nodes} node(s)")
            }
            GraphError::Nn(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for GraphError {}

impl From<NnError> for GraphError {
    fn from(e: NnError) -> Self {
        GraphError::Nn(e)
    }
}

/// Exact k-NN under Euclidean distance on canonical xyz. Distance ties go to
/// the lower node index; the effective k is `min(k, n - 1)`.
pub fn knn_graph(nodes: &[Point4], k: usize) -> Result<LocalGraph, GraphError> {
    let n = nodes.len();
    if n < 2 {
        return Err(GraphError::DegenerateGraph { nodes: n });
    }
    let k_eff = k.min(n - 1);
    let d2 = |a: &Point4, b: &Point4| {
        let dx = a.x - b.x;
        let dy = a.y - b.y;
        let dz = a.z - b.z;
        dx * dx + dy * dy + dz * dz
    };
    let mut neighbors = Vec::with_capacity(n * k_eff);
    let mut scratch: Vec<(f64, u32)> = Vec::with_capacity(n - 1);
    for j in 0..n {
        scratch.clear();
        for (i, p) in nodes.iter().enumerate() {
            if i != j {
                scratch.push((d2(&nodes[j], p), i as u32));
            }
        }
        scratch.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut row: Vec<u32> = scratch[..k_eff].iter().map(|&(_, i)| i).collect();
        row.sort_unstable();
        neighbors.extend_from_slice(&row);
    }
    Ok(LocalGraph { n, k: k_eff, neighbors })
}

/// Cache for the backward pass of one node's neighborhood encoding.
#[derive(Clone, Debug)]
pub struct PointNetCache {
    mlp: MlpCache,
    /// Winning neighbor row per output channel (lowest row on ties).
    argmax: Vec<u32>,
}

/// Encodes the raw grouped points within `radius` of a node: per neighbor the
/// input is `[dx, dy, dz, reflectance]` (offsets to the node), pushed through
/// a shared MLP and max-pooled channelwise. No neighbors yields the zero
/// vector.
pub fn pointnet_encode(
    node: &Point4,
    group_points: &[Point4],
    radius: f64,
    mlp: &MlpParams,
) -> Result<Vec<f64>, NnError> {
    Ok(pointnet_encode_cached(node, group_points, radius, mlp)?.0)
}

pub fn pointnet_encode_cached(
    node: &Point4,
    group_points: &[Point4],
    radius: f64,
    mlp: &MlpParams,
) -> Result<(Vec<f64>, Option<PointNetCache>), NnError> {
    assert!(radius > 0.0, "radius must be positive");
    let r2 = radius * radius;
    let mut rows: Vec<f64> = Vec::new();
    let mut count = 0usize;
    for p in group_points {
        let dx = p.x - node.x;
        let dy = p.y - node.y;
        let dz = p.z - node.z;
        if dx * dx + dy * dy + dz * dz <= r2 {
            rows.extend_from_slice(&[dx, dy, dz, p.r]);
            count += 1;
        }
    }
    let out_dim = mlp.out_dim();
    if count == 0 {
        return Ok((alloc::vec![0.0; out_dim], None));
    }
    let x = Tensor2::from_vec(count, 4, rows);
    let (y, cache) = mlp_forward_cached(mlp, &x)?;
    let mut feature = alloc::vec![f64::NEG_INFINITY; out_dim];
    let mut argmax = alloc::vec![0u32; out_dim];
    for row in 0..count {
        for c in 0..out_dim {
            let v = y.get(row, c);
            if v > feature[c] {
                feature[c] = v;
                argmax[c] = row as u32;
            }
        }
    }
    Ok((feature, Some(PointNetCache { mlp: cache, argmax })))
}

/// Routes the feature gradient to each channel's argmax neighbor and
/// backpropagates through the shared MLP. Geometry inputs are constants, so
/// only parameter gradients are returned.
pub fn pointnet_backward(
    mlp: &MlpParams,
    cache: &PointNetCache,
    grad_feature: &[f64],
) -> Result<MlpGrads, NnError> {
    let out_dim = mlp.out_dim();
    let rows = cache.mlp.output().rows;
    let mut grad_out = Tensor2::zeros(rows, out_dim);
    for (c, &g) in grad_feature.iter().enumerate() {
        if g != 0.0 {
            let row = cache.argmax[c] as usize;
            grad_out.set(row, c, grad_out.get(row, c) + g);
        }
    }
    let (_, grads) = mlp_backward(mlp, &cache.mlp, &grad_out)?;
    Ok(grads)
}

/// Initial node state: `[x, y, z, r, f, u, w]` in that order, where `(u, w)`
/// are the proposal's canonical diagonal corners; image features, when
/// present, are appended last.
pub fn init_node_state(
    p: &Point4,
    feature: &[f64],
    b: &Box3D,
    image_feature: Option<&[f64]>,
) -> Vec<f64> {
    let (u, w) = diagonal_corners(b);
    let mut state = Vec::with_capacity(4 + feature.len() + 6 + image_feature.map_or(0, |f| f.len()));
    state.extend_from_slice(&[p.x, p.y, p.z, p.r]);
    state.extend_from_slice(feature);
    state.extend_from_slice(&u);
    state.extend_from_slice(&w);
    if let Some(img) = image_feature {
        state.extend_from_slice(img);
    }
    state
}

/// Cache of one edge-message update step.
#[derive(Clone, Debug)]
pub struct EdgeConvCache {
    per_node: Vec<NodeMessages>,
}

#[derive(Clone, Debug)]
struct NodeMessages {
    mlp: MlpCache,
    /// Winning neighbor row per output channel.
    argmax: Vec<u32>,
    /// Neighbor node ids, ascending; row order of the message batch.
    rows: Vec<u32>,
}

/// One message-passing update: for every node the messages
/// `phi([s_k - s_j, s_j])` over its neighbors are reduced channelwise by max.
/// Neighbors are always processed in ascending node order, so the output is
/// invariant to the stored row order and max ties route to the lowest
/// neighbor index.
pub fn edge_conv_step(
    states: &Tensor2,
    graph: &LocalGraph,
    phi: &MlpParams,
) -> Result<Tensor2, GraphError> {
    Ok(edge_conv_step_cached(states, graph, phi)?.0)
}

pub fn edge_conv_step_cached(
    states: &Tensor2,
    graph: &LocalGraph,
    phi: &MlpParams,
) -> Result<(Tensor2, EdgeConvCache), GraphError> {
    let c = states.cols;
    if phi.in_dim() != 2 * c {
        return Err(GraphError::Nn(NnError::ShapeMismatch {
            context: "edge message input",
            expected: 2 * c,
            got: phi.in_dim(),
        }));
    }
    let out_dim = phi.out_dim();
    let mut out = Tensor2::zeros(graph.n, out_dim);
    let mut per_node = Vec::with_capacity(graph.n);
    for j in 0..graph.n {
        let mut rows: Vec<u32> = graph.neighbors_of(j).to_vec();
        rows.sort_unstable();
        let sj = states.row(j);
        let mut batch = Tensor2::zeros(rows.len(), 2 * c);
        for (row, &nb) in rows.iter().enumerate() {
            let sk = states.row(nb as usize);
            let dst = batch.row_mut(row);
            for i in 0..c {
                dst[i] = sk[i] - sj[i];
                dst[c + i] = sj[i];
            }
        }
        let (msgs, cache) = mlp_forward_cached(phi, &batch)?;
        let mut argmax = alloc::vec![0u32; out_dim];
        let dst = out.row_mut(j);
        for ch in 0..out_dim {
            let mut best = f64::NEG_INFINITY;
            for row in 0..rows.len() {
                let v = msgs.get(row, ch);
                if v > best {
                    best = v;
                    argmax[ch] = row as u32;
                }
            }
            dst[ch] = best;
        }
        per_node.push(NodeMessages { mlp: cache, argmax, rows });
    }
    Ok((out, EdgeConvCache { per_node }))
}

/// Backward through one update step: the max routes each channel's gradient
/// to its argmax message, which splits into `+d` on the neighbor state,
/// `-d + e` on the own state.
pub fn edge_conv_backward(
    phi: &MlpParams,
    cache: &EdgeConvCache,
    grad_out: &Tensor2,
    state_cols: usize,
) -> Result<(Tensor2, MlpGrads), GraphError> {
    let n = cache.per_node.len();
    let out_dim = phi.out_dim();
    let mut grad_states = Tensor2::zeros(n, state_cols);
    let mut grads = MlpGrads::zeros_like(phi);
    for (j, node) in cache.per_node.iter().enumerate() {
        let mut grad_msgs = Tensor2::zeros(node.rows.len(), out_dim);
        let mut any = false;
        for ch in 0..out_dim {
            let g = grad_out.get(j, ch);
            if g != 0.0 {
                let row = node.argmax[ch] as usize;
                grad_msgs.set(row, ch, grad_msgs.get(row, ch) + g);
                any = true;
            }
        }
        if !any {
            continue;
        }
        let (grad_batch, phi_grads) = mlp_backward(phi, &node.mlp, &grad_msgs)?;
        grads.add_assign(&phi_grads);
        for (row, &nb) in node.rows.iter().enumerate() {
            let src = grad_batch.row(row);
            let nb = nb as usize;
            for i in 0..state_cols {
                let d = src[i];
                let e = src[state_cols + i];
                grad_states.set(nb, i, grad_states.get(nb, i) + d);
                grad_states.set(j, i, grad_states.get(j, i) - d + e);
            }
        }
    }
    Ok((grad_states, grads))
}

/// Node states across iterations: `states[0]` is the initial state, then one
/// matrix per update step.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeStates {
    pub states: Vec<Tensor2>,
}

impl NodeStates {
    pub fn initial(&self) -> &Tensor2 {
        &self.states[0]
    }

    /// The per-iteration states `S^1..S^T`.
    pub fn iterated(&self) -> &[Tensor2] {
        &self.states[1..]
    }

    pub fn node_count(&self) -> usize {
        self.states[0].rows
    }
}

/// Parameters of the graph stage: the shared point encoder plus one message
/// MLP per iteration (dimensions differ across iterations, so weights are
/// never shared).
#[derive(Clone, Debug, PartialEq)]
pub struct GraphParams {
    pub pointnet: MlpParams,
    pub phis: Vec<MlpParams>,
}

impl GraphParams {
    /// Seeded parameters sized from the config. The point encoder applies
    /// relu on every layer; each message MLP is one linear+relu layer.
    pub fn seeded(cfg: &PipelineConfig, seed: u64, image_channels: usize) -> Self {
        let mut dims = alloc::vec![4];
        dims.extend_from_slice(&cfg.pointnet_channels);
        let acts = alloc::vec![crate::nn::Activation::Relu; dims.len() - 1];
        let pointnet = crate::nn::seeded_init_with(&dims, &acts, seed ^ 0x706e);

        let f_dim: usize = cfg.pointnet_channels.last().copied().unwrap_or(0);
        let mut state_dim = 4 + f_dim + 6 + image_channels;
        let mut phis = Vec::with_capacity(cfg.iter_dims.len());
        for (t, &out) in cfg.iter_dims.iter().enumerate() {
            phis.push(crate::nn::seeded_init_with(
                &[2 * state_dim, out],
                &[crate::nn::Activation::Relu],
                seed ^ 0x8d1 ^ (t as u64) << 32,
            ));
            state_dim = out;
        }
        Self { pointnet, phis }
    }
}

/// Cache of a full graph run, one entry per stage.
#[derive(Clone, Debug)]
pub struct RunGraphCache {
    pub pointnet: Vec<Option<PointNetCache>>,
    pub graph: Option<LocalGraph>,
    pub steps: Vec<EdgeConvCache>,
}

/// Runs the full graph stage for one proposal: encode each sampled node's
/// raw neighborhood, build the initial states, construct the k-NN graph, and
/// iterate the edge-message update. All intermediate states are returned for
/// multi-level fusion.
pub fn run_graph(
    group: &ProposalGroup,
    sampled: &SampleResult,
    b: &Box3D,
    cfg: &PipelineConfig,
    params: &GraphParams,
    image_features: Option<&Tensor2>,
) -> Result<NodeStates, GraphError> {
    Ok(run_graph_cached(group, sampled, b, cfg, params, image_features)?.0)
}

pub fn run_graph_cached(
    group: &ProposalGroup,
    sampled: &SampleResult,
    b: &Box3D,
    cfg: &PipelineConfig,
    params: &GraphParams,
    image_features: Option<&Tensor2>,
) -> Result<(NodeStates, RunGraphCache), GraphError> {
    let positions: Vec<Point4> = sampled
        .selected
        .iter()
        .map(|&i| group.canonical[i as usize])
        .collect();
    let n = positions.len();

    let mut pn_caches = Vec::with_capacity(n);
    let mut s0_rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    for (j, node) in positions.iter().enumerate() {
        let (f, cache) =
            pointnet_encode_cached(node, &group.canonical, cfg.radius, &params.pointnet)?;
        pn_caches.push(cache);
        let img = image_features.map(|m| m.row(j));
        s0_rows.push(init_node_state(node, &f, b, img));
    }
    let cols = s0_rows.first().map(|r| r.len()).unwrap_or(0);
    let mut s0 = Tensor2::zeros(n, cols);
    for (j, row) in s0_rows.into_iter().enumerate() {
        s0.row_mut(j).copy_from_slice(&row);
    }

    let mut states = alloc::vec![s0];
    let mut steps = Vec::with_capacity(params.phis.len());
    let graph = if params.phis.is_empty() {
        None
    } else {
        let graph = knn_graph(&positions, cfg.k)?;
        for phi in &params.phis {
            let (next, cache) = edge_conv_step_cached(states.last().unwrap(), &graph, phi)?;
            states.push(next);
            steps.push(cache);
        }
        Some(graph)
    };

    Ok((
        NodeStates { states },
        RunGraphCache { pointnet: pn_caches, graph, steps },
    ))
}
