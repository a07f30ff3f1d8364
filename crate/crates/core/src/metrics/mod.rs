//! End-point error, outlier rate, weighted AUC and binned breakdowns.

mod edt;
mod eval;

pub use edt::distance_transform;
pub use eval::{evaluate, identity_report, table_row, EvalError, EvalOutcome, SampleScore};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::FlowField;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("prediction is {pred:?} but ground truth is {gt:?}")]
    Dimensions { pred: (usize, usize), gt: (usize, usize) },
    #[error("ground truth has no valid pixels")]
    NoValidPixels,
    #[error("bin edges must start at 0 and increase: {0:?}")]
    BadEdges(Vec<f64>),
    #[error("distance map has {got} entries, expected {expected}")]
    DistanceMap { got: usize, expected: usize },
}

pub const WAUC_THRESHOLDS: usize = 100;
pub const WAUC_MAX_THRESHOLD: f64 = 5.0;
pub const OUTLIER_PIXELS: f64 = 3.0;
pub const OUTLIER_RELATIVE: f64 = 0.05;
/// GT gradient magnitude (px/px) above which a pixel is a motion boundary.
pub const BOUNDARY_GRADIENT: f64 = 1.0;
pub const SPEED_EDGES: [f64; 3] = [0.0, 10.0, 40.0];
pub const DISTANCE_EDGES: [f64; 4] = [0.0, 10.0, 60.0, 140.0];

fn check(pred: &FlowField, gt: &FlowField) -> Result<(), MetricError> {
    if (pred.width(), pred.height()) != (gt.width(), gt.height()) {
        return Err(MetricError::Dimensions {
            pred: (pred.width(), pred.height()),
            gt: (gt.width(), gt.height()),
        });
    }
    Ok(())
}

fn endpoint_error(pred: &FlowField, gt: &FlowField, i: usize) -> f64 {
    let du = pred.u()[i] as f64 - gt.u()[i] as f64;
    let dv = pred.v()[i] as f64 - gt.v()[i] as f64;
    (du * du + dv * dv).sqrt()
}

fn gt_magnitude(gt: &FlowField, i: usize) -> f64 {
    (gt.u()[i] as f64).hypot(gt.v()[i] as f64)
}

fn is_outlier(epe: f64, mag: f64) -> bool {
    epe > OUTLIER_PIXELS && epe > OUTLIER_RELATIVE * mag
}

fn wauc_threshold(i: usize) -> f64 {
    WAUC_MAX_THRESHOLD * (i + 1) as f64 / WAUC_THRESHOLDS as f64
}

fn wauc_weight(i: usize) -> f64 {
    1.0 - wauc_threshold(i) / WAUC_MAX_THRESHOLD
}

/// Mean end-point error over pixels valid in `gt`.
pub fn aepe(pred: &FlowField, gt: &FlowField) -> Result<f64, MetricError> {
    check(pred, gt)?;
    let (mut sum, mut n) = (0.0, 0usize);
    for i in (0..gt.len()).filter(|&i| gt.is_valid(i)) {
        sum += endpoint_error(pred, gt, i);
        n += 1;
    }
    if n == 0 {
        return Err(MetricError::NoValidPixels);
    }
    Ok(sum / n as f64)
}

/// Number of outliers and valid pixels.
pub fn outlier_count(pred: &FlowField, gt: &FlowField) -> Result<(usize, usize), MetricError> {
    check(pred, gt)?;
    let valid = gt.valid_count();
    if valid == 0 {
        return Err(MetricError::NoValidPixels);
    }
    let outliers = (0..gt.len())
        .filter(|&i| gt.is_valid(i) && is_outlier(endpoint_error(pred, gt, i), gt_magnitude(gt, i)))
        .count();
    Ok((outliers, valid))
}

/// Percentage of valid pixels with error above 3 px and above 5% of the GT
/// magnitude.
pub fn fl_all(pred: &FlowField, gt: &FlowField) -> Result<f64, MetricError> {
    let (outliers, valid) = outlier_count(pred, gt)?;
    Ok(100.0 * outliers as f64 / valid as f64)
}

/// Weighted area under the inlier-rate curve: thresholds `5i/100` px for
/// `i = 1..=100`, weights decaying linearly to zero at 5 px, scaled to 0..100.
pub fn wauc(pred: &FlowField, gt: &FlowField) -> Result<f64, MetricError> {
    let mut acc = MetricAccumulator::default();
    acc.add(pred, gt, None)?;
    Ok(acc.wauc())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinStat {
    pub label: String,
    pub pixels: u64,
    /// `None` for empty bins.
    pub aepe: Option<f64>,
}

fn bin_labels(prefix: &str, edges: &[f64]) -> Vec<String> {
    let fmt = |x: f64| format!("{x}");
    let mut labels: Vec<String> = edges
        .windows(2)
        .map(|w| format!("{prefix}{}-{}", fmt(w[0]), fmt(w[1])))
        .collect();
    labels.push(format!("{prefix}{}+", fmt(edges[edges.len() - 1])));
    labels
}

fn check_edges(edges: &[f64]) -> Result<(), MetricError> {
    let ok = !edges.is_empty() && edges[0] == 0.0 && edges.windows(2).all(|w| w[0] < w[1]);
    if ok {
        Ok(())
    } else {
        Err(MetricError::BadEdges(edges.to_vec()))
    }
}

/// Index of the bin `[e_i, e_{i+1})` holding `x`; the last bin is open.
fn bin_index(edges: &[f64], x: f64) -> usize {
    edges.iter().rposition(|&e| x >= e).unwrap_or(0)
}

/// Motion-boundary mask from forward differences of the valid GT flow.
pub fn motion_boundaries(gt: &FlowField) -> Vec<bool> {
    let (w, h) = (gt.width(), gt.height());
    let diff = |i: usize, j: usize| {
        if gt.is_valid(i) && gt.is_valid(j) {
            let du = gt.u()[j] as f64 - gt.u()[i] as f64;
            let dv = gt.v()[j] as f64 - gt.v()[i] as f64;
            (du, dv)
        } else {
            (0.0, 0.0)
        }
    };
    let mut mask = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let (ux, vx) = if x + 1 < w { diff(i, i + 1) } else { (0.0, 0.0) };
            let (uy, vy) = if y + 1 < h { diff(i, i + w) } else { (0.0, 0.0) };
            let g = (ux * ux + vx * vx + uy * uy + vy * vy).sqrt();
            mask[i] = gt.is_valid(i) && g > BOUNDARY_GRADIENT;
        }
    }
    mask
}

/// Distance from each pixel to the nearest GT motion boundary.
pub fn boundary_distance(gt: &FlowField) -> Vec<f64> {
    distance_transform(&motion_boundaries(gt), gt.width(), gt.height())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub valid_pixels: u64,
    pub aepe: f64,
    pub fl_all: f64,
    pub wauc: f64,
    pub speed_bins: Vec<BinStat>,
    pub distance_bins: Vec<BinStat>,
}

impl MetricReport {
    pub fn bin(&self, label: &str) -> Option<&BinStat> {
        self.speed_bins.iter().chain(&self.distance_bins).find(|b| b.label == label)
    }
}

#[derive(Clone, Debug, Default)]
struct BinSums {
    sum: f64,
    pixels: u64,
}

/// Pixel-weighted aggregation over any number of samples.
#[derive(Clone, Debug)]
pub struct MetricAccumulator {
    speed_edges: Vec<f64>,
    distance_edges: Vec<f64>,
    epe_sum: f64,
    valid: u64,
    outliers: u64,
    inliers: Vec<u64>,
    speed: Vec<BinSums>,
    distance: Vec<BinSums>,
}

impl Default for MetricAccumulator {
    fn default() -> Self {
        Self::with_edges(&SPEED_EDGES, &DISTANCE_EDGES).expect("default edges are valid")
    }
}

impl MetricAccumulator {
    pub fn with_edges(speed_edges: &[f64], distance_edges: &[f64]) -> Result<Self, MetricError> {
        check_edges(speed_edges)?;
        check_edges(distance_edges)?;
        Ok(Self {
            speed_edges: speed_edges.to_vec(),
            distance_edges: distance_edges.to_vec(),
            epe_sum: 0.0,
            valid: 0,
            outliers: 0,
            inliers: vec![0; WAUC_THRESHOLDS],
            speed: vec![BinSums::default(); speed_edges.len()],
            distance: vec![BinSums::default(); distance_edges.len()],
        })
    }

    /// Adds one sample; the boundary-distance map is derived from `gt` when
    /// not supplied.
    pub fn add(&mut self, pred: &FlowField, gt: &FlowField, distance: Option<&[f64]>) -> Result<(), MetricError> {
        check(pred, gt)?;
        let derived;
        let distance = match distance {
            Some(d) if d.len() != gt.len() => {
                return Err(MetricError::DistanceMap {
                    got: d.len(),
                    expected: gt.len(),
                })
            }
            Some(d) => d,
            None => {
                derived = boundary_distance(gt);
                &derived
            }
        };
        for i in (0..gt.len()).filter(|&i| gt.is_valid(i)) {
            let epe = endpoint_error(pred, gt, i);
            let mag = gt_magnitude(gt, i);
            self.epe_sum += epe;
            self.valid += 1;
            self.outliers += u64::from(is_outlier(epe, mag));
            // Inlier at threshold t iff epe <= t; thresholds are increasing.
            let first = (0..WAUC_THRESHOLDS).find(|&t| epe <= wauc_threshold(t));
            if let Some(first) = first {
                for c in &mut self.inliers[first..] {
                    *c += 1;
                }
            }
            let s = &mut self.speed[bin_index(&self.speed_edges, mag)];
            s.sum += epe;
            s.pixels += 1;
            let d = &mut self.distance[bin_index(&self.distance_edges, distance[i])];
            d.sum += epe;
            d.pixels += 1;
        }
        Ok(())
    }

    pub fn valid_pixels(&self) -> u64 {
        self.valid
    }

    fn wauc(&self) -> f64 {
        if self.valid == 0 {
            return 0.0;
        }
        let (mut num, mut den) = (0.0, 0.0);
        for (t, &c) in self.inliers.iter().enumerate() {
            let w = wauc_weight(t);
            num += w * c as f64 / self.valid as f64;
            den += w;
        }
        100.0 * num / den
    }

    pub fn report(&self) -> Result<MetricReport, MetricError> {
        if self.valid == 0 {
            return Err(MetricError::NoValidPixels);
        }
        let bins = |prefix: &str, edges: &[f64], sums: &[BinSums]| {
            bin_labels(prefix, edges)
                .into_iter()
                .zip(sums)
                .map(|(label, s)| BinStat {
                    label,
                    pixels: s.pixels,
                    aepe: (s.pixels > 0).then(|| s.sum / s.pixels as f64),
                })
                .collect()
        };
        Ok(MetricReport {
            valid_pixels: self.valid,
            aepe: self.epe_sum / self.valid as f64,
            fl_all: 100.0 * self.outliers as f64 / self.valid as f64,
            wauc: self.wauc(),
            speed_bins: bins("s", &self.speed_edges, &self.speed),
            distance_bins: bins("d", &self.distance_edges, &self.distance),
        })
    }
}

/// Full report for one pair with the given bin edges.
pub fn binned_aepe(
    pred: &FlowField,
    gt: &FlowField,
    speed_edges: &[f64],
    distance_edges: &[f64],
    distance: Option<&[f64]>,
) -> Result<MetricReport, MetricError> {
    let mut acc = MetricAccumulator::with_edges(speed_edges, distance_edges)?;
    acc.add(pred, gt, distance)?;
    acc.report()
}

/// All metrics for one pair with the standard bins.
pub fn evaluate_pair(pred: &FlowField, gt: &FlowField) -> Result<MetricReport, MetricError> {
    binned_aepe(pred, gt, &SPEED_EDGES, &DISTANCE_EDGES, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_follow_edges() {
        assert_eq!(bin_labels("s", &SPEED_EDGES), ["s0-10", "s10-40", "s40+"]);
        assert_eq!(bin_labels("d", &DISTANCE_EDGES), ["d0-10", "d10-60", "d60-140", "d140+"]);
        assert_eq!(bin_index(&SPEED_EDGES, 9.999), 0);
        assert_eq!(bin_index(&SPEED_EDGES, 10.0), 1);
        assert_eq!(bin_index(&SPEED_EDGES, 1e9), 2);
    }

    #[test]
    fn wauc_weights_vanish_at_five_pixels() {
        assert_eq!(wauc_threshold(WAUC_THRESHOLDS - 1), 5.0);
        assert_eq!(wauc_weight(WAUC_THRESHOLDS - 1), 0.0);
    }
}
