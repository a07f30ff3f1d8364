//! Layered rigid-motion scenes with exact ground-truth flow.

use std::f32::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, FlowSample};
use crate::io::FlowField;
use crate::seed;
use crate::tensor::Tensor;

pub const MAX_LAYERS: usize = 4;
/// Sub-frame times averaged into frame2 when motion blur is on.
const BLUR_TIMES: [f32; 4] = [0.7, 0.8, 0.9, 1.0];
const REGENERATE_ATTEMPTS: u64 = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Wave {
    pub kx: f32,
    pub ky: f32,
    pub phase: f32,
    pub amp: [f32; 3],
}

/// Base color plus a few plane waves, in layer-local pixel coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Texture {
    pub base: [f32; 3],
    pub waves: Vec<Wave>,
}

impl Texture {
    pub fn flat(base: [f32; 3]) -> Self {
        Self { base, waves: Vec::new() }
    }

    fn draw(rng: &mut impl Rng, wavelength: (f32, f32), amplitude: f32) -> Self {
        let base = [0; 3].map(|_| rng.gen_range(0.25..0.75));
        let waves = (0..3)
            .map(|_| {
                let lambda = rng.gen_range(wavelength.0..=wavelength.1);
                let dir = rng.gen_range(0.0..2.0 * PI);
                let k = 2.0 * PI / lambda;
                Wave {
                    kx: k * dir.cos(),
                    ky: k * dir.sin(),
                    phase: rng.gen_range(0.0..2.0 * PI),
                    amp: [0; 3].map(|_| rng.gen_range(-amplitude / 3.0..=amplitude / 3.0)),
                }
            })
            .collect();
        Self { base, waves }
    }

    pub fn eval(&self, x: f32, y: f32) -> [f32; 3] {
        let mut c = self.base;
        for w in &self.waves {
            let s = (w.kx * x + w.ky * y + w.phase).sin();
            for (ci, a) in c.iter_mut().zip(w.amp) {
                *ci += a * s;
            }
        }
        c.map(|v| v.clamp(0.0, 1.0))
    }
}

/// Layer outline; lengths are fractions of the shorter frame side.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Shape {
    Ellipse { rx: f32, ry: f32, angle: f32 },
    /// Star-convex polygon with vertices at evenly spaced angles.
    Polygon { radii: Vec<f32>, angle: f32 },
}

impl Shape {
    fn contains(&self, dx: f32, dy: f32, unit: f32) -> bool {
        match self {
            Shape::Ellipse { rx, ry, angle } => {
                let (s, c) = angle.sin_cos();
                let x = c * dx + s * dy;
                let y = -s * dx + c * dy;
                let (a, b) = (rx * unit, ry * unit);
                (x / a).powi(2) + (y / b).powi(2) <= 1.0
            }
            Shape::Polygon { radii, angle } => {
                let n = radii.len();
                let step = 2.0 * PI / n as f32;
                let phi = (dy.atan2(dx) - angle).rem_euclid(2.0 * PI);
                let i = ((phi / step) as usize).min(n - 1);
                let j = (i + 1) % n;
                let vertex = |k: usize| {
                    let t = angle + step * k as f32;
                    (radii[k] * unit * t.cos(), radii[k] * unit * t.sin())
                };
                let (x0, y0) = vertex(i);
                let (x1, y1) = vertex(j);
                (x1 - x0) * (dy - y0) - (y1 - y0) * (dx - x0) >= 0.0
            }
        }
    }

    fn max_radius(&self) -> f32 {
        match self {
            Shape::Ellipse { rx, ry, .. } => rx.max(*ry),
            Shape::Polygon { radii, .. } => radii.iter().copied().fold(0.0, f32::max),
        }
    }
}

/// Rigid motion about the layer center: `p -> c + s R(theta) (p - c) + t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Motion {
    pub tx: f32,
    pub ty: f32,
    pub rotation: f32,
    pub scale: f32,
}

impl Motion {
    pub const IDENTITY: Motion = Motion {
        tx: 0.0,
        ty: 0.0,
        rotation: 0.0,
        scale: 1.0,
    };

    pub fn translation(tx: f32, ty: f32) -> Self {
        Motion { tx, ty, ..Self::IDENTITY }
    }

    /// Offset of the moved point relative to the center, at time `tau`.
    fn apply(&self, dx: f32, dy: f32, tau: f32) -> (f32, f32) {
        let s = 1.0 + tau * (self.scale - 1.0);
        let (sn, cs) = (tau * self.rotation).sin_cos();
        (s * (cs * dx - sn * dy) + tau * self.tx, s * (sn * dx + cs * dy) + tau * self.ty)
    }

    fn invert(&self, qx: f32, qy: f32, tau: f32) -> (f32, f32) {
        let s = 1.0 + tau * (self.scale - 1.0);
        let (sn, cs) = (tau * self.rotation).sin_cos();
        let (x, y) = (qx - tau * self.tx, qy - tau * self.ty);
        ((cs * x + sn * y) / s, (-sn * x + cs * y) / s)
    }

    /// Spectral norm of `s R - I`, the flow growth per pixel of radius.
    fn deformation(&self) -> f32 {
        let (s, c) = (self.scale, self.rotation.cos());
        (s * s - 2.0 * s * c + 1.0).max(0.0).sqrt()
    }

    pub fn translation_magnitude(&self) -> f32 {
        self.tx.hypot(self.ty)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub shape: Shape,
    /// Center as fractions of (width, height).
    pub center: [f32; 2],
    pub texture: Texture,
    pub motion: Motion,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Jitter {
    /// Additive offset drawn from `[-brightness, brightness]`.
    pub brightness: f32,
    /// Gain drawn from `[1 - contrast, 1 + contrast]` about mid-gray.
    pub contrast: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub background: Texture,
    pub background_motion: [f32; 2],
    /// Bottom to top.
    pub layers: Vec<Layer>,
    pub jitter: Option<Jitter>,
    pub motion_blur: bool,
}

impl SceneSpec {
    pub fn fingerprint(&self) -> String {
        seed::fingerprint(&serde_json::to_vec(self).expect("scene specs serialize"))
    }

    /// Upper bound on any GT flow magnitude at the given size.
    pub fn flow_bound(&self, size: (usize, usize)) -> f32 {
        let unit = size.0.min(size.1) as f32;
        let bg = self.background_motion[0].hypot(self.background_motion[1]);
        self.layers
            .iter()
            .map(|l| l.motion.translation_magnitude() + l.motion.deformation() * l.shape.max_radius() * unit)
            .fold(bg, f32::max)
    }
}

/// Fixed rendering policy from which scenes are drawn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenePolicy {
    pub layers: (usize, usize),
    /// Foreground translation magnitude range in pixels.
    pub translation: (f32, f32),
    pub background_translation: (f32, f32),
    pub max_rotation: f32,
    pub max_scale_delta: f32,
    /// Layer radius range as a fraction of the shorter side.
    pub radius: (f32, f32),
    pub wavelength: (f32, f32),
    pub amplitude: f32,
    pub polygon_prob: f64,
    pub jitter: Option<Jitter>,
    pub motion_blur: bool,
}

impl Default for ScenePolicy {
    fn default() -> Self {
        Self {
            layers: (1, MAX_LAYERS),
            translation: (0.0, 8.0),
            background_translation: (0.0, 3.0),
            max_rotation: 0.05,
            max_scale_delta: 0.05,
            radius: (0.15, 0.4),
            wavelength: (16.0, 48.0),
            amplitude: 0.24,
            polygon_prob: 0.5,
            jitter: None,
            motion_blur: false,
        }
    }
}

fn ordered(name: &str, r: (f32, f32)) -> Result<(), DataError> {
    if r.0.is_finite() && r.1.is_finite() && r.0 >= 0.0 && r.0 <= r.1 {
        Ok(())
    } else {
        Err(DataError::Policy(format!("{name} range {r:?} must satisfy 0 <= lo <= hi")))
    }
}

impl ScenePolicy {
    pub fn validate(&self) -> Result<(), DataError> {
        let (lo, hi) = self.layers;
        if lo < 1 || lo > hi || hi > MAX_LAYERS {
            return Err(DataError::Policy(format!("layer count {lo}..={hi} outside 1..={MAX_LAYERS}")));
        }
        ordered("translation", self.translation)?;
        ordered("background translation", self.background_translation)?;
        ordered("radius", self.radius)?;
        ordered("wavelength", self.wavelength)?;
        if self.radius.0 <= 0.0 || self.wavelength.0 <= 0.0 {
            return Err(DataError::Policy("radius and wavelength must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.polygon_prob) {
            return Err(DataError::Policy(format!("polygon probability {}", self.polygon_prob)));
        }
        if !(0.0..1.0).contains(&self.max_scale_delta) || !(0.0..=PI).contains(&self.max_rotation) {
            return Err(DataError::Policy("rotation or scale range out of bounds".into()));
        }
        if !(0.0..=0.25).contains(&self.amplitude) {
            return Err(DataError::Policy(format!("texture amplitude {} outside [0, 0.25]", self.amplitude)));
        }
        Ok(())
    }

    /// Upper bound on GT flow magnitude for any scene this policy draws.
    pub fn flow_bound(&self, size: (usize, usize)) -> f32 {
        let unit = size.0.min(size.1) as f32;
        let s = 1.0 + self.max_scale_delta;
        let worst = (s * s - 2.0 * s * self.max_rotation.cos() + 1.0)
            .max(self.max_scale_delta * self.max_scale_delta)
            .sqrt();
        (self.translation.1 + worst * self.radius.1 * unit).max(self.background_translation.1)
    }

    fn magnitude(rng: &mut impl Rng, r: (f32, f32)) -> (f32, f32) {
        let m = if r.1 > r.0 { rng.gen_range(r.0..=r.1) } else { r.0 };
        let a = rng.gen_range(0.0..2.0 * PI);
        (m * a.cos(), m * a.sin())
    }

    fn draw_layer(&self, rng: &mut impl Rng) -> Layer {
        let r = |rng: &mut dyn rand::RngCore| rng.gen_range(self.radius.0..=self.radius.1);
        let shape = if rng.gen_bool(self.polygon_prob) {
            let n = rng.gen_range(3..=8);
            Shape::Polygon {
                radii: (0..n).map(|_| r(rng)).collect(),
                angle: rng.gen_range(0.0..2.0 * PI),
            }
        } else {
            Shape::Ellipse {
                rx: r(rng),
                ry: r(rng),
                angle: rng.gen_range(0.0..PI),
            }
        };
        let (tx, ty) = Self::magnitude(rng, self.translation);
        Layer {
            shape,
            center: [rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9)],
            texture: Texture::draw(rng, self.wavelength, self.amplitude),
            motion: Motion {
                tx,
                ty,
                rotation: rng.gen_range(-self.max_rotation..=self.max_rotation),
                scale: 1.0 + rng.gen_range(-self.max_scale_delta..=self.max_scale_delta),
            },
        }
    }

    pub fn draw(&self, seed: u64) -> SceneSpec {
        let mut rng = seed::stream(seed, "scene", 0);
        let n = rng.gen_range(self.layers.0..=self.layers.1);
        let background = Texture::draw(&mut rng, self.wavelength, self.amplitude);
        let (bx, by) = Self::magnitude(&mut rng, self.background_translation);
        let layers = (0..n).map(|_| self.draw_layer(&mut rng)).collect();
        SceneSpec {
            background,
            background_motion: [bx, by],
            layers,
            jitter: self.jitter,
            motion_blur: self.motion_blur,
        }
    }
}

/// A sample plus the per-pixel layer index in each frame (0 = background).
pub struct Rendered {
    pub sample: FlowSample,
    pub layers1: Vec<u8>,
    pub layers2: Vec<u8>,
}

struct Placed<'a> {
    layer: &'a Layer,
    shape: Shape,
    cx: f32,
    cy: f32,
}

fn covered_pixels(shape: &Shape, cx: f32, cy: f32, size: (usize, usize)) -> usize {
    let unit = size.0.min(size.1) as f32;
    let mut n = 0;
    for y in 0..size.0 {
        for x in 0..size.1 {
            n += usize::from(shape.contains(x as f32 - cx, y as f32 - cy, unit));
        }
    }
    n
}

fn place<'a>(spec: &'a SceneSpec, size: (usize, usize), seed_value: u64) -> Result<Vec<Placed<'a>>, DataError> {
    let mut placed = Vec::with_capacity(spec.layers.len());
    for (li, layer) in spec.layers.iter().enumerate() {
        let shape = layer.shape.clone();
        let mut cx = layer.center[0] * (size.1 as f32 - 1.0);
        let mut cy = layer.center[1] * (size.0 as f32 - 1.0);
        let mut attempt = 0;
        while covered_pixels(&shape, cx, cy, size) == 0 {
            if attempt == REGENERATE_ATTEMPTS {
                return Err(DataError::DegenerateLayer(li));
            }
            let mut rng = seed::stream(seed_value, "regenerate", (li as u64) << 32 | attempt);
            // Snapping to a pixel center guarantees coverage of that pixel.
            cx = (rng.gen_range(0.2..0.8) * (size.1 as f32 - 1.0)).round();
            cy = (rng.gen_range(0.2..0.8) * (size.0 as f32 - 1.0)).round();
            attempt += 1;
        }
        placed.push(Placed { layer, shape, cx, cy });
    }
    Ok(placed)
}

fn shade(
    spec: &SceneSpec,
    placed: &[Placed],
    size: (usize, usize),
    tau: f32,
    rgb: &mut [f32],
    ids: &mut [u8],
) {
    let (h, w) = size;
    let unit = h.min(w) as f32;
    for y in 0..h {
        for x in 0..w {
            let (qx, qy) = (x as f32, y as f32);
            let mut hit = None;
            for (li, p) in placed.iter().enumerate().rev() {
                let (dx, dy) = p.layer.motion.invert(qx - p.cx, qy - p.cy, tau);
                if p.shape.contains(dx, dy, unit) {
                    hit = Some((li + 1, p.layer.texture.eval(dx, dy)));
                    break;
                }
            }
            let (id, c) = hit.unwrap_or_else(|| {
                let bx = qx - tau * spec.background_motion[0];
                let by = qy - tau * spec.background_motion[1];
                (0, spec.background.eval(bx, by))
            });
            let i = y * w + x;
            ids[i] = id as u8;
            for ch in 0..3 {
                rgb[ch * h * w + i] += c[ch];
            }
        }
    }
}

fn apply_jitter(rgb: &mut [f32], j: &Jitter, rng: &mut impl Rng) {
    let b = if j.brightness > 0.0 { rng.gen_range(-j.brightness..=j.brightness) } else { 0.0 };
    let c = if j.contrast > 0.0 { rng.gen_range(1.0 - j.contrast..=1.0 + j.contrast) } else { 1.0 };
    for v in rgb {
        *v = ((*v - 0.5) * c + 0.5 + b).clamp(0.0, 1.0);
    }
}

/// Renders both frames, the exact GT flow and the layer maps.
pub fn render(spec: &SceneSpec, size: (usize, usize), seed_value: u64) -> Result<Rendered, DataError> {
    let (h, w) = size;
    if h == 0 || w == 0 {
        return Err(DataError::Size { height: h, width: w });
    }
    if spec.layers.len() > MAX_LAYERS {
        return Err(DataError::Policy(format!("{} layers exceed {MAX_LAYERS}", spec.layers.len())));
    }
    let placed = place(spec, size, seed_value)?;
    let n = h * w;
    let mut f1 = vec![0.0f32; 3 * n];
    let mut f2 = vec![0.0f32; 3 * n];
    let mut layers1 = vec![0u8; n];
    let mut layers2 = vec![0u8; n];
    shade(spec, &placed, size, 0.0, &mut f1, &mut layers1);
    if spec.motion_blur {
        let mut scratch = vec![0u8; n];
        for &tau in &BLUR_TIMES {
            shade(spec, &placed, size, tau, &mut f2, &mut scratch);
        }
        layers2 = scratch;
        let k = BLUR_TIMES.len() as f32;
        f2.iter_mut().for_each(|v| *v /= k);
    } else {
        shade(spec, &placed, size, 1.0, &mut f2, &mut layers2);
    }
    if let Some(j) = &spec.jitter {
        apply_jitter(&mut f1, j, &mut seed::stream(seed_value, "jitter", 1));
        apply_jitter(&mut f2, j, &mut seed::stream(seed_value, "jitter", 2));
    }

    let mut u = vec![0.0f32; n];
    let mut v = vec![0.0f32; n];
    for i in 0..n {
        let (x, y) = ((i % w) as f32, (i / w) as f32);
        match layers1[i] {
            0 => {
                u[i] = spec.background_motion[0];
                v[i] = spec.background_motion[1];
            }
            id => {
                let p = &placed[id as usize - 1];
                let (dx, dy) = (x - p.cx, y - p.cy);
                let (mx, my) = p.layer.motion.apply(dx, dy, 1.0);
                u[i] = mx - dx;
                v[i] = my - dy;
            }
        }
    }
    let flow = FlowField::from_parts(w, h, u, v, None).map_err(DataError::Io)?;
    let sample = FlowSample {
        frame1: Tensor::from_vec([3, h, w], f1).expect("frame length matches"),
        frame2: Tensor::from_vec([3, h, w], f2).expect("frame length matches"),
        flow,
    };
    Ok(Rendered {
        sample,
        layers1,
        layers2,
    })
}

/// Deterministic in `(spec, size, seed)`.
pub fn generate_sample(spec: &SceneSpec, size: (usize, usize), seed_value: u64) -> Result<FlowSample, DataError> {
    render(spec, size, seed_value).map(|r| r.sample)
}
