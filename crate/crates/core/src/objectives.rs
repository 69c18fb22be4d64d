//! Training targets and losses: the IoU-guided score target, binary cross
//! entropy from logits, canonical regression targets with the period-pi angle
//! wrap, the positives-only L1 loss, and the weighted total.

use alloc::vec::Vec;
use core::fmt;

use crate::geom::{iou_3d, Box3D};
use crate::math;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ObjectiveError {
    EmptyBatch,
}

impl fmt::Display for ObjectiveError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ObjectiveError::EmptyBatch => write!(f, "loss over an empty batch"),
        }
    }
}

impl core::error::Error for ObjectiveError {}

/// IoU-guided soft classification target:
/// `I = min(1, max(0, 2 * iou - 0.5))`. Zero below IoU 0.25, one above 0.75,
/// linear with slope 2 in between.
pub fn score_target(iou: f64) -> f64 {
    (2.0 * iou - 0.5).clamp(0.0, 1.0)
}

/// Mean binary cross entropy computed from logits in the stabilized
/// `max(z, 0) - z * t + log(1 + exp(-|z|))` form, equivalent to the
/// probability form `-t log(s) - (1 - t) log(1 - s)` with `s = sigmoid(z)`.
pub fn bce_with_logits(logits: &[f64], targets: &[f64]) -> Result<f64, ObjectiveError> {
    if logits.is_empty() {
        return Err(ObjectiveError::EmptyBatch);
    }
    assert_eq!(logits.len(), targets.len());
    let mut acc = 0.0;
    for (&z, &t) in logits.iter().zip(targets) {
        acc += z.max(0.0) - z * t + math::log1p(math::exp(-math::abs(z)));
    }
    Ok(acc / logits.len() as f64)
}

/// Gradient of [`bce_with_logits`] with respect to the logits:
/// `(sigmoid(z) - t) / B`.
pub fn bce_with_logits_grad(logits: &[f64], targets: &[f64]) -> Vec<f64> {
    let b = logits.len() as f64;
    logits
        .iter()
        .zip(targets)
        .map(|(&z, &t)| (math::sigmoid(z) - t) / b)
        .collect()
}

/// Wraps a yaw difference into `[-pi/2, pi/2)`:
/// `d - floor(d / pi + 0.5) * pi`. Periodic with period pi.
pub fn wrap_half_pi(delta: f64) -> f64 {
    let pi = core::f64::consts::PI;
    delta - math::floor(delta / pi + 0.5) * pi
}

/// Regression targets of a proposal against its ground truth: global-frame
/// center difference, size difference, and the wrapped orientation
/// difference `[t_cx, t_cy, t_cz, t_l, t_w, t_h, t_o]`.
pub fn regression_targets(proposal: &Box3D, gt: &Box3D) -> [f64; 7] {
    [
        gt.cx - proposal.cx,
        gt.cy - proposal.cy,
        gt.cz - proposal.cz,
        gt.l - proposal.l,
        gt.w - proposal.w,
        gt.h - proposal.h,
        wrap_half_pi(gt.yaw - proposal.yaw),
    ]
}

/// Mean L1 distance between residuals and targets over the positive samples;
/// zero when there are no positives.
pub fn l1_loss(outputs: &[[f64; 7]], targets: &[[f64; 7]], positive: &[bool]) -> f64 {
    assert_eq!(outputs.len(), targets.len());
    assert_eq!(outputs.len(), positive.len());
    let positives = positive.iter().filter(|&&p| p).count();
    if positives == 0 {
        return 0.0;
    }
    let mut acc = 0.0;
    for ((o, t), &pos) in outputs.iter().zip(targets).zip(positive) {
        if pos {
            for i in 0..7 {
                acc += math::abs(o[i] - t[i]);
            }
        }
    }
    acc / positives as f64
}

/// Subgradient of [`l1_loss`]: `sign(o - t) / B_plus` on positives, zero
/// elsewhere (and zero at exact equality).
pub fn l1_grad(outputs: &[[f64; 7]], targets: &[[f64; 7]], positive: &[bool]) -> Vec<[f64; 7]> {
    let positives = positive.iter().filter(|&&p| p).count().max(1) as f64;
    outputs
        .iter()
        .zip(targets)
        .zip(positive)
        .map(|((o, t), &pos)| {
            let mut g = [0.0; 7];
            if pos {
                for i in 0..7 {
                    let d = o[i] - t[i];
                    g[i] = if d > 0.0 {
                        1.0 / positives
                    } else if d < 0.0 {
                        -1.0 / positives
                    } else {
                        0.0
                    };
                }
            }
            g
        })
        .collect()
}

/// `cls + alpha * reg`.
pub fn total_loss(cls: f64, reg: f64, alpha: f64) -> f64 {
    cls + alpha * reg
}

/// Per-proposal targets from IoU matching against the ground truths.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetSet {
    /// Soft score target per proposal.
    pub score_targets: Vec<f64>,
    /// Regression targets (meaningful on positives).
    pub targets: Vec<[f64; 7]>,
    pub positive: Vec<bool>,
    /// Index of the max-IoU ground truth, if any overlaps.
    pub matched_gt: Vec<Option<usize>>,
    pub batch: usize,
    pub positives: usize,
}

/// Matches each proposal to its max-3D-IoU ground truth (ties to the lowest
/// index); a proposal is a regression positive iff that IoU reaches
/// `positive_iou`. With no ground truths everything is negative and the
/// regression contribution is zero.
pub fn assign_targets(proposals: &[Box3D], gts: &[Box3D], positive_iou: f64) -> TargetSet {
    let mut score_targets = Vec::with_capacity(proposals.len());
    let mut targets = Vec::with_capacity(proposals.len());
    let mut positive = Vec::with_capacity(proposals.len());
    let mut matched_gt = Vec::with_capacity(proposals.len());
    let mut positives = 0usize;
    for p in proposals {
        let mut best = 0.0_f64;
        let mut best_idx = None;
        for (g_idx, g) in gts.iter().enumerate() {
            let v = iou_3d(p, g);
            if v > best {
                best = v;
                best_idx = Some(g_idx);
            }
        }
        score_targets.push(score_target(best));
        let is_pos = best >= positive_iou && best_idx.is_some();
        positive.push(is_pos);
        if is_pos {
            positives += 1;
        }
        targets.push(match best_idx {
            Some(g) => regression_targets(p, &gts[g]),
            None => [0.0; 7],
        });
        matched_gt.push(best_idx);
    }
    TargetSet {
        score_targets,
        targets,
        positive,
        matched_gt,
        batch: proposals.len(),
        positives,
    }
}
