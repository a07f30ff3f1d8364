//! Global-norm gradient clipping.

use std::collections::BTreeMap;

use super::TrainError;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClipStats {
    pub pre_norm: f64,
    pub post_norm: f64,
    pub scale: f64,
}

/// L2 norm over every gradient; rejects non-finite entries by name.
pub fn global_norm(grads: &BTreeMap<String, Vec<f32>>) -> Result<f64, TrainError> {
    let mut sum = 0.0f64;
    for (name, g) in grads {
        let mut part = 0.0f64;
        for &v in g {
            part += (v as f64) * (v as f64);
        }
        if !part.is_finite() {
            return Err(TrainError::NonFinite { parameter: name.clone() });
        }
        sum += part;
    }
    Ok(sum.sqrt())
}

/// Scales all gradients by `threshold / norm` when the global norm exceeds
/// `threshold`; `None` only measures.
pub fn clip_gradients(grads: &mut BTreeMap<String, Vec<f32>>, threshold: Option<f64>) -> Result<ClipStats, TrainError> {
    let pre = global_norm(grads)?;
    let scale = match threshold {
        Some(t) if !(t > 0.0 && t.is_finite()) => return Err(TrainError::Plan(format!("clip threshold {t} must be positive"))),
        Some(t) if pre > t => t / pre,
        _ => 1.0,
    };
    if scale != 1.0 {
        for g in grads.values_mut() {
            for v in g.iter_mut() {
                *v = (*v as f64 * scale) as f32;
            }
        }
    }
    let post = if scale == 1.0 { pre } else { global_norm(grads)? };
    Ok(ClipStats {
        pre_norm: pre,
        post_norm: post,
        scale,
    })
}
