//! Flow-magnitude histograms and train/validation split construction.

use serde::{Deserialize, Serialize};

use super::scene::{generate_sample, ScenePolicy};
use super::{DataError, FlowSample};
use crate::io::FlowField;
use crate::seed;

/// Counts over `[e_i, e_{i+1})` with an open last bin `[e_last, inf)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionHistogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl MotionHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn normalized(&self) -> Vec<f64> {
        let t = self.total().max(1) as f64;
        self.counts.iter().map(|&c| c as f64 / t).collect()
    }

    /// Sum of bin-wise minima of the normalized histograms.
    pub fn overlap(&self, other: &MotionHistogram) -> Result<f64, DataError> {
        if self.edges != other.edges {
            return Err(DataError::Histogram("histograms use different edges".into()));
        }
        Ok(self
            .normalized()
            .iter()
            .zip(other.normalized())
            .map(|(a, b)| a.min(b))
            .sum())
    }
}

/// `0, step, 2 step, ..., max`.
pub fn uniform_edges(step: f64, max: f64) -> Vec<f64> {
    let n = (max / step).round() as usize;
    (0..=n).map(|i| i as f64 * step).collect()
}

pub fn motion_histogram<'a>(
    flows: impl IntoIterator<Item = &'a FlowField>,
    edges: &[f64],
) -> Result<MotionHistogram, DataError> {
    if edges.is_empty() || edges[0] != 0.0 || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(DataError::Histogram(format!("edges must start at 0 and increase: {edges:?}")));
    }
    let mut counts = vec![0u64; edges.len()];
    let mut any = false;
    for f in flows {
        any = true;
        for i in (0..f.len()).filter(|&i| f.is_valid(i)) {
            let m = f.magnitude(i) as f64;
            let bin = edges.iter().rposition(|&e| m >= e).unwrap_or(0);
            counts[bin] += 1;
        }
    }
    if !any {
        return Err(DataError::Empty);
    }
    Ok(MotionHistogram {
        edges: edges.to_vec(),
        counts,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    InDistribution,
    OutOfDistribution,
}

/// Policy shared by training and in-distribution validation.
pub fn train_policy() -> ScenePolicy {
    ScenePolicy {
        translation: (0.0, 6.0),
        background_translation: (0.0, 3.0),
        ..ScenePolicy::default()
    }
}

/// Validation policy skewed toward middle-to-large motion.
pub fn shifted_policy() -> ScenePolicy {
    ScenePolicy {
        translation: (10.0, 24.0),
        background_translation: (8.0, 16.0),
        ..ScenePolicy::default()
    }
}

pub struct Splits {
    pub train: Vec<FlowSample>,
    pub val: Vec<FlowSample>,
    pub train_seeds: Vec<u64>,
    pub val_seeds: Vec<u64>,
}

pub fn build_splits(
    mode: SplitMode,
    n_train: usize,
    n_val: usize,
    size: (usize, usize),
    seed_value: u64,
) -> Result<Splits, DataError> {
    if n_train == 0 || n_val == 0 {
        return Err(DataError::Empty);
    }
    let train = train_policy();
    let val = match mode {
        SplitMode::InDistribution => train_policy(),
        SplitMode::OutOfDistribution => shifted_policy(),
    };
    let make = |policy: &ScenePolicy, stream: &str, n: usize| -> Result<(Vec<FlowSample>, Vec<u64>), DataError> {
        let seeds: Vec<u64> = (0..n as u64).map(|k| seed::derive(seed_value, stream, k)).collect();
        let samples = seeds
            .iter()
            .map(|&s| generate_sample(&policy.draw(s), size, s))
            .collect::<Result<_, _>>()?;
        Ok((samples, seeds))
    };
    let (train, train_seeds) = make(&train, "split-train", n_train)?;
    let (val, val_seeds) = make(&val, "split-val", n_val)?;
    Ok(Splits {
        train,
        val,
        train_seeds,
        val_seeds,
    })
}
