//! Multi-level attentive fusion of per-iteration node features, graph
//! aggregation to one RoI feature, the confidence/regression heads, and box
//! decoding.

use alloc::vec::Vec;
use core::fmt;

use crate::geom::Box3D;
use crate::graph::NodeStates;
use crate::math;
use crate::nn::{
    mlp_backward, mlp_forward_cached, seeded_init_with, Activation, MlpCache, MlpGrads, MlpParams,
    NnError, Tensor2,
};

#[derive(Clone, Debug, PartialEq)]
pub enum HeadError {
    Nn(NnError),
    EmptyNodeSet,
    InvalidResidual { l: f64, w: f64, h: f64 },
}

impl fmt::Display for HeadError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HeadError::Nn(e) => write!(f, "{e}"),
            HeadError::EmptyNodeSet => write!(f, "cannot aggregate an empty node set"),
            HeadError::InvalidResidual { l, w, h } => {
                write!(f, "decoded box size is nonpositive: ({l}, {w}, {h})")
            }
        }
    }
}

impl core::error::Error for HeadError {}

impl From<NnError> for HeadError {
    fn from(e: NnError) -> Self {
        HeadError::Nn(e)
    }
}

/// Parameters of the multi-level fusion block: a channel-attention MLP ending
/// in a sigmoid, an embedding layer, and a linear shortcut, all mapping the
/// concatenated per-iteration features.
#[derive(Clone, Debug, PartialEq)]
pub struct MlafParams {
    pub attention: MlpParams,
    pub embed: MlpParams,
    pub shortcut: MlpParams,
}

impl MlafParams {
    /// Attention 'in -> in/2 -> in' (relu, sigmoid), embed 'in -> embed_dim'
    /// (relu), shortcut 'in -> embed_dim' (linear).
    pub fn seeded(in_dim: usize, embed_dim: usize, seed: u64) -> Self {
        let mid = (in_dim / 2).max(1);
        Self {
            attention: seeded_init_with(
                &[in_dim, mid, in_dim],
                &[Activation::Relu, Activation::Sigmoid],
                seed ^ 0xa77,
            ),
            embed: seeded_init_with(&[in_dim, embed_dim], &[Activation::Relu], seed ^ 0xe3b),
            shortcut: seeded_init_with(&[in_dim, embed_dim], &[Activation::None], seed ^ 0x5c1),
        }
    }
}

#[derive(Clone, Debug)]
pub struct MlafCache {
    concat: Tensor2,
    attention: MlpCache,
    gates: Tensor2,
    embed: MlpCache,
    shortcut: MlpCache,
}

/// Fuses the per-iteration node features: concatenate `S^1..S^T`, reweight
/// channelwise with sigmoid attention, embed, and add a linear shortcut of
/// the concatenation.
pub fn mlaf(states: &NodeStates, p: &MlafParams) -> Result<Tensor2, HeadError> {
    Ok(mlaf_cached(states, p)?.0)
}

pub fn mlaf_cached(states: &NodeStates, p: &MlafParams) -> Result<(Tensor2, MlafCache), HeadError> {
    let iterated = states.iterated();
    assert!(!iterated.is_empty(), "fusion needs at least one iteration");
    let n = states.node_count();
    let total: usize = iterated.iter().map(|s| s.cols).sum();
    let mut concat = Tensor2::zeros(n, total);
    for j in 0..n {
        let dst = concat.row_mut(j);
        let mut off = 0;
        for s in iterated {
            dst[off..off + s.cols].copy_from_slice(s.row(j));
            off += s.cols;
        }
    }
    let (gates, att_cache) = mlp_forward_cached(&p.attention, &concat)?;
    let gated = concat.hadamard(&gates);
    let (embedded, embed_cache) = mlp_forward_cached(&p.embed, &gated)?;
    let (short, shortcut_cache) = mlp_forward_cached(&p.shortcut, &concat)?;
    let mut fused = embedded;
    for (v, s) in fused.data.iter_mut().zip(&short.data) {
        *v += s;
    }
    Ok((
        fused,
        MlafCache {
            concat,
            attention: att_cache,
            gates,
            embed: embed_cache,
            shortcut: shortcut_cache,
        },
    ))
}

#[derive(Clone, Debug)]
pub struct MlafGrads {
    pub attention: MlpGrads,
    pub embed: MlpGrads,
    pub shortcut: MlpGrads,
}

/// Backward through the fusion block; returns the gradient on the
/// concatenated multi-level features.
pub fn mlaf_backward(
    p: &MlafParams,
    cache: &MlafCache,
    grad_fused: &Tensor2,
) -> Result<(Tensor2, MlafGrads), HeadError> {
    let (grad_gated, embed_grads) = mlp_backward(&p.embed, &cache.embed, grad_fused)?;
    let (grad_concat_short, shortcut_grads) = mlp_backward(&p.shortcut, &cache.shortcut, grad_fused)?;
    // gated = concat .* gates
    let grad_gates = cache.concat.hadamard(&grad_gated);
    let (grad_concat_att, attention_grads) = mlp_backward(&p.attention, &cache.attention, &grad_gates)?;
    let mut grad_concat = cache.gates.hadamard(&grad_gated);
    for ((v, a), s) in grad_concat
        .data
        .iter_mut()
        .zip(&grad_concat_att.data)
        .zip(&grad_concat_short.data)
    {
        *v += a + s;
    }
    Ok((
        grad_concat,
        MlafGrads { attention: attention_grads, embed: embed_grads, shortcut: shortcut_grads },
    ))
}

/// How per-node features collapse into one RoI feature.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AggregationMethod {
    Max,
    Mean,
    AttentionSum,
}

impl AggregationMethod {
    pub fn name(self) -> &'static str {
        match self {
            AggregationMethod::Max => "max",
            AggregationMethod::Mean => "mean",
            AggregationMethod::AttentionSum => "attention_sum",
        }
    }
}

impl core::str::FromStr for AggregationMethod {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "max" => Ok(AggregationMethod::Max),
            "mean" => Ok(AggregationMethod::Mean),
            "attention_sum" => Ok(AggregationMethod::AttentionSum),
            _ => Err(()),
        }
    }
}

#[derive(Clone, Debug)]
pub enum AggregateCache {
    Max { argmax: Vec<u32> },
    Mean { n: usize },
    AttentionSum { weights: Vec<f64>, feats: Tensor2, scoring: MlpCache },
}

/// Collapses `n x d` node features to a `d`-vector. `scoring` is only used by
/// the attention-sum method (softmax over per-node scores); a zero scoring
/// MLP degenerates to the arithmetic mean.
pub fn aggregate(
    feats: &Tensor2,
    method: AggregationMethod,
    scoring: Option<&MlpParams>,
) -> Result<Vec<f64>, HeadError> {
    Ok(aggregate_cached(feats, method, scoring)?.0)
}

pub fn aggregate_cached(
    feats: &Tensor2,
    method: AggregationMethod,
    scoring: Option<&MlpParams>,
) -> Result<(Vec<f64>, AggregateCache), HeadError> {
    let (n, d) = (feats.rows, feats.cols);
    if n == 0 {
        return Err(HeadError::EmptyNodeSet);
    }
    match method {
        AggregationMethod::Max => {
            let mut out = alloc::vec![f64::NEG_INFINITY; d];
            let mut argmax = alloc::vec![0u32; d];
            for j in 0..n {
                let row = feats.row(j);
                for c in 0..d {
                    if row[c] > out[c] {
                        out[c] = row[c];
                        argmax[c] = j as u32;
                    }
                }
            }
            Ok((out, AggregateCache::Max { argmax }))
        }
        AggregationMethod::Mean => {
            let mut out = alloc::vec![0.0; d];
            for j in 0..n {
                for (c, v) in feats.row(j).iter().enumerate() {
                    out[c] += v;
                }
            }
            for v in &mut out {
                *v /= n as f64;
            }
            Ok((out, AggregateCache::Mean { n }))
        }
        AggregationMethod::AttentionSum => {
            let scoring = scoring.expect("attention_sum needs a scoring mlp");
            let (scores, cache) = mlp_forward_cached(scoring, feats)?;
            debug_assert_eq!(scores.cols, 1);
            let max_score = scores.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut weights: Vec<f64> = scores.data.iter().map(|&s| math::exp(s - max_score)).collect();
            let total: f64 = weights.iter().sum();
            for w in &mut weights {
                *w /= total;
            }
            let mut out = alloc::vec![0.0; d];
            for j in 0..n {
                let w = weights[j];
                for (c, v) in feats.row(j).iter().enumerate() {
                    out[c] += w * v;
                }
            }
            Ok((out, AggregateCache::AttentionSum { weights, feats: feats.clone(), scoring: cache }))
        }
    }
}

/// Backward through aggregation; returns per-node feature gradients and, for
/// attention-sum, the scoring MLP gradients.
pub fn aggregate_backward(
    cache: &AggregateCache,
    feats_shape: (usize, usize),
    grad: &[f64],
    scoring: Option<&MlpParams>,
) -> Result<(Tensor2, Option<MlpGrads>), HeadError> {
    let (n, d) = feats_shape;
    let mut out = Tensor2::zeros(n, d);
    match cache {
        AggregateCache::Max { argmax } => {
            for c in 0..d {
                let j = argmax[c] as usize;
                out.set(j, c, out.get(j, c) + grad[c]);
            }
            Ok((out, None))
        }
        AggregateCache::Mean { n: count } => {
            let scale = 1.0 / *count as f64;
            for j in 0..n {
                for c in 0..d {
                    out.set(j, c, grad[c] * scale);
                }
            }
            Ok((out, None))
        }
        AggregateCache::AttentionSum { weights, feats, scoring: score_cache } => {
            let scoring = scoring.expect("attention_sum needs a scoring mlp");
            // out_c = sum_j w_j f_jc with w = softmax(s).
            // d/d f_jc = w_j * grad_c; d/d s_j = w_j * (g_j - sum_i w_i g_i)
            // where g_j = grad . f_j.
            let mut gdotf = alloc::vec![0.0; n];
            for j in 0..n {
                gdotf[j] = feats.row(j).iter().zip(grad).map(|(f, g)| f * g).sum();
            }
            let mean: f64 = weights.iter().zip(&gdotf).map(|(w, g)| w * g).sum();
            let mut grad_scores = Tensor2::zeros(n, 1);
            for j in 0..n {
                for c in 0..d {
                    out.set(j, c, weights[j] * grad[c]);
                }
                grad_scores.set(j, 0, weights[j] * (gdotf[j] - mean));
            }
            let (grad_feats_from_scores, score_grads) =
                mlp_backward(scoring, score_cache, &grad_scores)?;
            for (v, s) in out.data.iter_mut().zip(&grad_feats_from_scores.data) {
                *v += s;
            }
            Ok((out, Some(score_grads)))
        }
    }
}

/// Confidence logit and 7-DoF residual for one proposal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Refinement {
    pub score_logit: f64,
    pub residual: [f64; 7],
}

/// The two parallel prediction branches over the shared RoI feature.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    pub cls: MlpParams,
    pub reg: MlpParams,
}

impl HeadParams {
    /// cls: dim -> dim -> 1, reg: dim -> dim -> 7, relu hidden.
    pub fn seeded(dim: usize, seed: u64) -> Self {
        Self {
            cls: seeded_init_with(&[dim, dim, 1], &[Activation::Relu, Activation::None], seed ^ 0xc15),
            reg: seeded_init_with(&[dim, dim, 7], &[Activation::Relu, Activation::None], seed ^ 0x4e9),
        }
    }
}

#[derive(Clone, Debug)]
pub struct HeadCache {
    cls: MlpCache,
    reg: MlpCache,
}

#[derive(Clone, Debug)]
pub struct HeadGrads {
    pub cls: MlpGrads,
    pub reg: MlpGrads,
}

/// Runs both branches. The logit stays raw here; the sigmoid belongs to the
/// loss/eval path.
pub fn refine_heads(roi: &[f64], p: &HeadParams) -> Result<Refinement, HeadError> {
    Ok(refine_heads_cached(roi, p)?.0)
}

pub fn refine_heads_cached(roi: &[f64], p: &HeadParams) -> Result<(Refinement, HeadCache), HeadError> {
    let x = Tensor2::from_vec(1, roi.len(), roi.to_vec());
    let (logit, cls_cache) = mlp_forward_cached(&p.cls, &x)?;
    let (res, reg_cache) = mlp_forward_cached(&p.reg, &x)?;
    let mut residual = [0.0; 7];
    residual.copy_from_slice(res.row(0));
    Ok((
        Refinement { score_logit: logit.get(0, 0), residual },
        HeadCache { cls: cls_cache, reg: reg_cache },
    ))
}

pub fn refine_heads_backward(
    p: &HeadParams,
    cache: &HeadCache,
    d_logit: f64,
    d_residual: &[f64; 7],
) -> Result<(Vec<f64>, HeadGrads), HeadError> {
    let (gx_cls, cls_grads) =
        mlp_backward(&p.cls, &cache.cls, &Tensor2::from_vec(1, 1, alloc::vec![d_logit]))?;
    let (gx_reg, reg_grads) =
        mlp_backward(&p.reg, &cache.reg, &Tensor2::from_vec(1, 7, d_residual.to_vec()))?;
    let grad_roi = gx_cls
        .data
        .iter()
        .zip(&gx_reg.data)
        .map(|(a, b)| a + b)
        .collect();
    Ok((grad_roi, HeadGrads { cls: cls_grads, reg: reg_grads }))
}

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_to_pi(yaw: f64) -> f64 {
    let two_pi = 2.0 * core::f64::consts::PI;
    yaw - math::floor((yaw + core::f64::consts::PI) / two_pi) * two_pi
}

/// Applies a residual to a proposal: centers and sizes are additive in the
/// global frame, the yaw delta is wrapped into `[-pi, pi)`.
pub fn decode_box(proposal: &Box3D, residual: &[f64; 7]) -> Result<Box3D, HeadError> {
    let l = proposal.l + residual[3];
    let w = proposal.w + residual[4];
    let h = proposal.h + residual[5];
    if l <= 0.0 || w <= 0.0 || h <= 0.0 {
        return Err(HeadError::InvalidResidual { l, w, h });
    }
    Ok(Box3D {
        cx: proposal.cx + residual[0],
        cy: proposal.cy + residual[1],
        cz: proposal.cz + residual[2],
        l,
        w,
        h,
        yaw: wrap_to_pi(proposal.yaw + residual[6]),
    })
}
