//! Middlebury color-wheel visualization.

use super::{FlowField, RgbImage};

const RY: usize = 15;
const YG: usize = 6;
const GC: usize = 4;
const CB: usize = 11;
const BM: usize = 13;
const MR: usize = 6;
pub const COLOR_WHEEL_SEGMENTS: usize = RY + YG + GC + CB + BM + MR;

fn ramp(i: usize, n: usize) -> f64 {
    (255.0 * i as f64 / n as f64).floor()
}

/// Entry `k` of the 55-color wheel, components in 0..=255.
pub fn wheel_color(k: usize) -> [f64; 3] {
    let mut k = k % COLOR_WHEEL_SEGMENTS;
    if k < RY {
        return [255.0, ramp(k, RY), 0.0];
    }
    k -= RY;
    if k < YG {
        return [255.0 - ramp(k, YG), 255.0, 0.0];
    }
    k -= YG;
    if k < GC {
        return [0.0, 255.0, ramp(k, GC)];
    }
    k -= GC;
    if k < CB {
        return [0.0, 255.0 - ramp(k, CB), 255.0];
    }
    k -= CB;
    if k < BM {
        return [ramp(k, BM), 0.0, 255.0];
    }
    k -= BM;
    [255.0, 0.0, 255.0 - ramp(k, MR)]
}

/// Color of a flow vector already normalized by the maximum magnitude.
fn vector_color(u: f64, v: f64) -> [u8; 3] {
    let rad = (u * u + v * v).sqrt();
    let mut a = (-v).atan2(-u) / std::f64::consts::PI;
    if a >= 1.0 {
        a = -1.0;
    }
    let fk = (a + 1.0) / 2.0 * (COLOR_WHEEL_SEGMENTS - 1) as f64;
    let k0 = fk.floor() as usize;
    let k1 = (k0 + 1) % COLOR_WHEEL_SEGMENTS;
    let f = fk - k0 as f64;
    let (c0, c1) = (wheel_color(k0), wheel_color(k1));
    let mut out = [0u8; 3];
    for i in 0..3 {
        let mut col = ((1.0 - f) * c0[i] + f * c1[i]) / 255.0;
        if rad <= 1.0 {
            col = 1.0 - rad * (1.0 - col);
        } else {
            col *= 0.75;
        }
        out[i] = (255.0 * col).floor().clamp(0.0, 255.0) as u8;
    }
    out
}

fn percentile99(flow: &FlowField) -> f64 {
    let mut mags: Vec<f64> = (0..flow.len())
        .filter(|&i| flow.is_valid(i))
        .map(|i| flow.magnitude(i) as f64)
        .collect();
    if mags.is_empty() {
        return 0.0;
    }
    mags.sort_by(f64::total_cmp);
    let rank = 0.99 * (mags.len() - 1) as f64;
    let (lo, hi) = (rank.floor() as usize, rank.ceil() as usize);
    mags[lo] + (rank - lo as f64) * (mags[hi] - mags[lo])
}

/// Hue follows the flow angle and saturation the magnitude relative to
/// `max_magnitude` (99th percentile of valid magnitudes when `None`).
/// Invalid pixels render black.
pub fn flow_to_color(flow: &FlowField, max_magnitude: Option<f64>) -> RgbImage {
    let max = max_magnitude.unwrap_or_else(|| percentile99(flow));
    let max = if max > 0.0 && max.is_finite() { max } else { 1.0 };
    let mut img = RgbImage::new(flow.width(), flow.height());
    for i in 0..flow.len() {
        if !flow.is_valid(i) {
            continue;
        }
        let c = vector_color(flow.u()[i] as f64 / max, flow.v()[i] as f64 / max);
        img.set(i % flow.width(), i / flow.width(), c);
    }
    img
}
