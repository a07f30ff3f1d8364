//! Vertical flip, random erasing, cropping and photometric jitter.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::scene::Jitter;
use super::{DataError, FlowSample};
use crate::seed;
use crate::tensor::Tensor;

/// Erased area as a fraction of the frame.
pub const ERASE_AREA: (f64, f64) = (0.02, 0.25);
/// Erased rectangle height over width.
pub const ERASE_ASPECT: (f64, f64) = (0.3, 3.3);

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AugmentPolicy {
    pub vflip_prob: f64,
    pub erase_prob: f64,
    /// Output `(height, width)` of a random crop.
    pub crop: Option<(usize, usize)>,
    pub jitter: Option<Jitter>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

/// What `augment` actually did.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Applied {
    pub crop_origin: Option<(usize, usize)>,
    pub flipped: bool,
    pub erased: Option<Rect>,
    pub jittered: bool,
}

fn probability(name: &'static str, p: f64) -> Result<(), DataError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(DataError::Probability { name, value: p })
    }
}

fn map_frame(frame: &Tensor<f32>, h: usize, w: usize, f: impl Fn(usize, usize) -> usize) -> Tensor<f32> {
    let (ho, wo) = (frame.shape()[1], frame.shape()[2]);
    let src = frame.data();
    let mut out = Vec::with_capacity(3 * h * w);
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                out.push(src[c * ho * wo + f(x, y)]);
            }
        }
    }
    Tensor::from_vec([3, h, w], out).expect("frame length matches")
}

/// Flips rows of both frames and the flow; negates `v`.
pub fn vflip(sample: &FlowSample) -> FlowSample {
    let (h, w) = sample.size();
    FlowSample {
        frame1: map_frame(&sample.frame1, h, w, |x, y| (h - 1 - y) * w + x),
        frame2: map_frame(&sample.frame2, h, w, |x, y| (h - 1 - y) * w + x),
        flow: sample.flow.vflip(),
    }
}

pub fn crop(sample: &FlowSample, x0: usize, y0: usize, height: usize, width: usize) -> Result<FlowSample, DataError> {
    let (h, w) = sample.size();
    if height == 0 || width == 0 || y0 + height > h || x0 + width > w {
        return Err(DataError::Crop {
            crop: (height, width),
            frame: (h, w),
        });
    }
    Ok(FlowSample {
        frame1: map_frame(&sample.frame1, height, width, |x, y| (y0 + y) * w + x0 + x),
        frame2: map_frame(&sample.frame2, height, width, |x, y| (y0 + y) * w + x0 + x),
        flow: sample.flow.crop(x0, y0, width, height),
    })
}

/// Fills `rect` of frame2 with frame2's mean color.
pub fn erase(sample: &mut FlowSample, rect: Rect) {
    let (h, w) = sample.size();
    let data = sample.frame2.data_mut();
    for c in 0..3 {
        let plane = &mut data[c * h * w..(c + 1) * h * w];
        let mean = (plane.iter().map(|&v| v as f64).sum::<f64>() / (h * w) as f64) as f32;
        for y in rect.y..rect.y + rect.height {
            plane[y * w + rect.x..y * w + rect.x + rect.width].fill(mean);
        }
    }
}

fn erase_rect(rng: &mut impl Rng, h: usize, w: usize) -> Rect {
    let area = rng.gen_range(ERASE_AREA.0..=ERASE_AREA.1) * (h * w) as f64;
    let aspect = rng.gen_range(ERASE_ASPECT.0..=ERASE_ASPECT.1);
    let height = ((area * aspect).sqrt().round() as usize).clamp(1, h);
    let width = ((area / aspect).sqrt().round() as usize).clamp(1, w);
    Rect {
        x: rng.gen_range(0..=w - width),
        y: rng.gen_range(0..=h - height),
        width,
        height,
    }
}

fn jitter_frame(frame: &mut Tensor<f32>, j: &Jitter, rng: &mut impl Rng) {
    let b = if j.brightness > 0.0 { rng.gen_range(-j.brightness..=j.brightness) } else { 0.0 };
    let c = if j.contrast > 0.0 { rng.gen_range(1.0 - j.contrast..=1.0 + j.contrast) } else { 1.0 };
    for v in frame.data_mut() {
        *v = ((*v - 0.5) * c + 0.5 + b).clamp(0.0, 1.0);
    }
}

/// Applies crop, flip, erase and jitter in that order; deterministic in `seed`.
pub fn augment(sample: &FlowSample, policy: &AugmentPolicy, seed_value: u64) -> Result<(FlowSample, Applied), DataError> {
    probability("vflip", policy.vflip_prob)?;
    probability("erase", policy.erase_prob)?;
    let mut rng = seed::stream(seed_value, "augment", 0);
    let mut applied = Applied::default();
    let mut out = match policy.crop {
        Some((ch, cw)) => {
            let (h, w) = sample.size();
            if ch > h || cw > w || ch == 0 || cw == 0 {
                return Err(DataError::Crop {
                    crop: (ch, cw),
                    frame: (h, w),
                });
            }
            let (x0, y0) = (rng.gen_range(0..=w - cw), rng.gen_range(0..=h - ch));
            applied.crop_origin = Some((x0, y0));
            crop(sample, x0, y0, ch, cw)?
        }
        None => sample.clone(),
    };
    if rng.gen_bool(policy.vflip_prob) {
        out = vflip(&out);
        applied.flipped = true;
    }
    if rng.gen_bool(policy.erase_prob) {
        let (h, w) = out.size();
        let rect = erase_rect(&mut rng, h, w);
        erase(&mut out, rect);
        applied.erased = Some(rect);
    }
    if let Some(j) = &policy.jitter {
        jitter_frame(&mut out.frame1, j, &mut rng);
        jitter_frame(&mut out.frame2, j, &mut rng);
        applied.jittered = true;
    }
    Ok((out, applied))
}
