//! Brute-force metric oracles over plain per-pixel lists.
#![allow(dead_code)]

use flowlab::io::FlowField;
use rand::Rng;

pub struct Pixel {
    pub epe: f64,
    pub gt_mag: f64,
}

pub fn pixels(pred: &FlowField, gt: &FlowField) -> Vec<Pixel> {
    let mut out = Vec::new();
    for y in 0..gt.height() {
        for x in 0..gt.width() {
            let i = y * gt.width() + x;
            if !gt.is_valid(i) {
                continue;
            }
            let (pu, pv) = pred.at(x, y);
            let (gu, gv) = gt.at(x, y);
            let du = pu as f64 - gu as f64;
            let dv = pv as f64 - gv as f64;
            out.push(Pixel {
                epe: (du * du + dv * dv).sqrt(),
                gt_mag: ((gu as f64).powi(2) + (gv as f64).powi(2)).sqrt(),
            });
        }
    }
    out
}

pub fn aepe(px: &[Pixel]) -> f64 {
    px.iter().map(|p| p.epe).sum::<f64>() / px.len() as f64
}

pub fn outliers(px: &[Pixel]) -> usize {
    px.iter().filter(|p| p.epe > 3.0 && p.epe > 0.05 * p.gt_mag).count()
}

pub fn wauc(px: &[Pixel]) -> f64 {
    let mut area = 0.0;
    let mut weights = 0.0;
    for i in 1..=100 {
        let delta = 0.05 * i as f64;
        let w = 1.0 - delta / 5.0;
        let rate = px.iter().filter(|p| p.epe <= delta).count() as f64 / px.len() as f64;
        area += w * rate;
        weights += w;
    }
    100.0 * area / weights
}

/// `(pixels, mean)` of the EPE over pixels whose key lies in `[lo, hi)`.
pub fn masked(px: &[Pixel], keys: &[f64], lo: f64, hi: f64) -> (u64, Option<f64>) {
    let sel: Vec<f64> = px
        .iter()
        .zip(keys)
        .filter(|(_, &k)| k >= lo && k < hi)
        .map(|(p, _)| p.epe)
        .collect();
    let n = sel.len() as u64;
    (n, (n > 0).then(|| sel.iter().sum::<f64>() / n as f64))
}

/// Random small pair; `gt` sometimes carries a validity mask and mixes slow
/// and fast regions so every speed bin gets mass.
pub fn random_pair(rng: &mut impl Rng) -> (FlowField, FlowField) {
    let (w, h) = (rng.gen_range(2..12), rng.gen_range(2..12));
    let n = w * h;
    let scale = [2.0f32, 20.0, 80.0];
    let mut gu = Vec::with_capacity(n);
    let mut gv = Vec::with_capacity(n);
    for _ in 0..n {
        let s = scale[rng.gen_range(0..3)];
        gu.push(rng.gen_range(-s..s));
        gv.push(rng.gen_range(-s..s));
    }
    let noise = rng.gen_range(0.1f32..8.0);
    let pu = gu.iter().map(|&g| g + rng.gen_range(-noise..noise)).collect();
    let pv = gv.iter().map(|&g| g + rng.gen_range(-noise..noise)).collect();
    let mut valid: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.85)).collect();
    valid[0] = true;
    let valid = rng.gen_bool(0.5).then_some(valid);
    let gt = FlowField::from_parts(w, h, gu, gv, valid).unwrap();
    let pred = FlowField::from_parts(w, h, pu, pv, None).unwrap();
    (pred, gt)
}

/// Valid-pixel keys in raster order from a per-pixel map.
pub fn valid_keys(gt: &FlowField, map: &[f64]) -> Vec<f64> {
    (0..gt.len()).filter(|&i| gt.is_valid(i)).map(|i| map[i]).collect()
}
