//! Multi-scale and sequence end-point-error losses.

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::arch::{Arch, FlowPrediction, GraphOutputs};
use crate::io::FlowField;
use crate::metrics;
use crate::tensor::{Graph, Scalar, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Per-level weights, coarse to fine; all ones when absent.
    pub level_weights: Option<Vec<f64>>,
    /// Decay of earlier refinement iterations.
    pub gamma: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            level_weights: None,
            gamma: 0.8,
        }
    }
}

/// Mean over batch and pixels of `|pred - gt|_2`.
pub fn epe_mean<T: Scalar>(g: &mut Graph<T>, pred: Var, gt: Var) -> Result<Var, TrainError> {
    let d = g.sub(pred, gt)?;
    let sq = g.mul(d, d)?;
    let s = g.sum_channels(sq)?;
    let e = g.sqrt(s)?;
    Ok(g.mean(e))
}

/// GT averaged over `scale x scale` blocks and divided by `scale`.
pub fn downsample_gt<T: Scalar>(g: &mut Graph<T>, gt: Var, scale: usize) -> Result<Var, TrainError> {
    if !scale.is_power_of_two() {
        return Err(TrainError::Plan(format!("level scale {scale} is not a power of two")));
    }
    let mut x = gt;
    for _ in 0..scale.trailing_zeros() {
        x = g.avg_pool2(x)?;
    }
    Ok(if scale == 1 { x } else { g.scale(x, 1.0 / scale as f64) })
}

/// `sum_l w_l * EPE(flow_l, downsample(gt, s_l))`.
pub fn loss_multiscale<T: Scalar>(
    g: &mut Graph<T>,
    out: &GraphOutputs,
    gt: Var,
    weights: &[f64],
) -> Result<Var, TrainError> {
    if weights.len() != out.intermediates.len() {
        return Err(TrainError::Loss(format!(
            "{} weights for {} levels",
            weights.len(),
            out.intermediates.len()
        )));
    }
    let mut total: Option<Var> = None;
    for (&(flow, scale), &w) in out.intermediates.iter().zip(weights) {
        let target = downsample_gt(g, gt, scale)?;
        let e = epe_mean(g, flow, target)?;
        let e = g.scale(e, w);
        total = Some(match total {
            Some(t) => g.add(t, e)?,
            None => e,
        });
    }
    total.ok_or_else(|| TrainError::Loss("no intermediates".into()))
}

/// `sum_i gamma^(T-i) * EPE(flow_i, gt)` for iterations `i = 1..=T`.
pub fn loss_sequence<T: Scalar>(g: &mut Graph<T>, out: &GraphOutputs, gt: Var, gamma: f64) -> Result<Var, TrainError> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(TrainError::Loss(format!("gamma {gamma} outside (0, 1]")));
    }
    let n = out.intermediates.len();
    let weights: Vec<f64> = (1..=n).map(|i| gamma.powi((n - i) as i32)).collect();
    if n == 0 {
        return Err(TrainError::Loss("no intermediates".into()));
    }
    loss_multiscale(g, out, gt, &weights)
}

/// The architecture's training loss.
pub fn model_loss<T: Scalar>(
    g: &mut Graph<T>,
    arch: Arch,
    out: &GraphOutputs,
    gt: Var,
    cfg: &LossConfig,
) -> Result<Var, TrainError> {
    match arch {
        Arch::Raft => loss_sequence(g, out, gt, cfg.gamma),
        Arch::Pwc | Arch::Irr => {
            let ones = vec![1.0; out.intermediates.len()];
            loss_multiscale(g, out, gt, cfg.level_weights.as_deref().unwrap_or(&ones))
        }
    }
}

/// Multi-scale loss of a materialized prediction.
pub fn multiscale_value(pred: &FlowPrediction, gt: &FlowField, weights: &[f64]) -> Result<f64, TrainError> {
    if weights.len() != pred.intermediates.len() {
        return Err(TrainError::Loss(format!(
            "{} weights for {} levels",
            weights.len(),
            pred.intermediates.len()
        )));
    }
    let mut total = 0.0;
    for (it, &w) in pred.intermediates.iter().zip(weights) {
        let target = gt.downsample(it.scale);
        total += w * metrics::aepe(&it.flow, &target).map_err(|e| TrainError::Loss(e.to_string()))?;
    }
    Ok(total)
}
