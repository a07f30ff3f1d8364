use super::FlowIoError;

/// Per-pixel displacement field in pixels, planar `u` / `v` storage.
///
/// `valid == None` means every pixel is valid. Non-finite values are only
/// allowed at invalid pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    u: Vec<f32>,
    v: Vec<f32>,
    valid: Option<Vec<bool>>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self::constant(width, height, 0.0, 0.0)
    }

    pub fn constant(width: usize, height: usize, u: f32, v: f32) -> Self {
        FlowField {
            width,
            height,
            u: vec![u; width * height],
            v: vec![v; width * height],
            valid: None,
        }
    }

    pub fn from_parts(
        width: usize,
        height: usize,
        u: Vec<f32>,
        v: Vec<f32>,
        valid: Option<Vec<bool>>,
    ) -> Result<Self, FlowIoError> {
        let n = width * height;
        if u.len() != n || v.len() != n || valid.as_ref().is_some_and(|m| m.len() != n) {
            return Err(FlowIoError::Layout { width, height });
        }
        let field = FlowField {
            width,
            height,
            u,
            v,
            valid,
        };
        field.check_finite()?;
        Ok(field)
    }

    /// Builds a field from planar `[2, H, W]` data (u plane then v plane).
    pub fn from_planar(width: usize, height: usize, planar: &[f32]) -> Result<Self, FlowIoError> {
        let n = width * height;
        if planar.len() != 2 * n {
            return Err(FlowIoError::Layout { width, height });
        }
        Self::from_parts(width, height, planar[..n].to_vec(), planar[n..].to_vec(), None)
    }

    pub fn check_finite(&self) -> Result<(), FlowIoError> {
        for i in 0..self.u.len() {
            if self.is_valid(i) && !(self.u[i].is_finite() && self.v[i].is_finite()) {
                return Err(FlowIoError::NonFinite {
                    x: i % self.width.max(1),
                    y: i / self.width.max(1),
                });
            }
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn u(&self) -> &[f32] {
        &self.u
    }

    pub fn v(&self) -> &[f32] {
        &self.v
    }

    pub fn u_mut(&mut self) -> &mut [f32] {
        &mut self.u
    }

    pub fn v_mut(&mut self) -> &mut [f32] {
        &mut self.v
    }

    pub fn valid(&self) -> Option<&[bool]> {
        self.valid.as_deref()
    }

    pub fn set_valid(&mut self, valid: Option<Vec<bool>>) -> Result<(), FlowIoError> {
        if valid.as_ref().is_some_and(|m| m.len() != self.len()) {
            return Err(FlowIoError::Layout {
                width: self.width,
                height: self.height,
            });
        }
        self.valid = valid;
        Ok(())
    }

    #[inline]
    pub fn is_valid(&self, i: usize) -> bool {
        self.valid.as_ref().is_none_or(|m| m[i])
    }

    pub fn valid_count(&self) -> usize {
        self.valid.as_ref().map_or(self.len(), |m| m.iter().filter(|&&b| b).count())
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> (f32, f32) {
        let i = y * self.width + x;
        (self.u[i], self.v[i])
    }

    #[inline]
    pub fn magnitude(&self, i: usize) -> f32 {
        self.u[i].hypot(self.v[i])
    }

    /// Planar `[u..., v...]` copy.
    pub fn to_planar(&self) -> Vec<f32> {
        let mut out = self.u.clone();
        out.extend_from_slice(&self.v);
        out
    }

    /// Mirror rows; the vertical component changes sign.
    pub fn vflip(&self) -> FlowField {
        let flip = |plane: &[f32], negate: bool| -> Vec<f32> {
            let mut out = Vec::with_capacity(plane.len());
            for y in (0..self.height).rev() {
                let row = &plane[y * self.width..(y + 1) * self.width];
                out.extend(row.iter().map(|&x| if negate { -x } else { x }));
            }
            out
        };
        let valid = self.valid.as_ref().map(|m| {
            let mut out = Vec::with_capacity(m.len());
            for y in (0..self.height).rev() {
                out.extend_from_slice(&m[y * self.width..(y + 1) * self.width]);
            }
            out
        });
        FlowField {
            width: self.width,
            height: self.height,
            u: flip(&self.u, false),
            v: flip(&self.v, true),
            valid,
        }
    }

    /// Sub-window copy.
    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> FlowField {
        let pick = |plane: &[f32]| -> Vec<f32> {
            (y0..y0 + height)
                .flat_map(|y| plane[y * self.width + x0..y * self.width + x0 + width].iter().copied())
                .collect()
        };
        let valid = self.valid.as_ref().map(|m| {
            (y0..y0 + height)
                .flat_map(|y| m[y * self.width + x0..y * self.width + x0 + width].iter().copied())
                .collect()
        });
        FlowField {
            width,
            height,
            u: pick(&self.u),
            v: pick(&self.v),
            valid,
        }
    }

    /// Average-pools by `factor` and divides vectors by it, giving the field at
    /// a coarser native resolution. A coarse pixel is valid only if all of
    /// its fine pixels are.
    pub fn downsample(&self, factor: usize) -> FlowField {
        assert!(factor >= 1 && self.width.is_multiple_of(factor) && self.height.is_multiple_of(factor));
        let (w, h) = (self.width / factor, self.height / factor);
        let mut u = vec![0.0f32; w * h];
        let mut v = vec![0.0f32; w * h];
        let mut valid = self.valid.as_ref().map(|_| vec![true; w * h]);
        let norm = (factor * factor * factor) as f64;
        for y in 0..h {
            for x in 0..w {
                let (mut su, mut sv) = (0.0f64, 0.0f64);
                for dy in 0..factor {
                    for dx in 0..factor {
                        let i = (y * factor + dy) * self.width + x * factor + dx;
                        su += self.u[i] as f64;
                        sv += self.v[i] as f64;
                        if let Some(m) = valid.as_mut() {
                            m[y * w + x] &= self.is_valid(i);
                        }
                    }
                }
                u[y * w + x] = (su / norm) as f32;
                v[y * w + x] = (sv / norm) as f32;
            }
        }
        FlowField {
            width: w,
            height: h,
            u,
            v,
            valid,
        }
    }

    /// True when both fields agree bit-for-bit on every valid pixel and have
    /// the same validity.
    pub fn same_on_valid(&self, other: &FlowField) -> bool {
        if (self.width, self.height) != (other.width, other.height) {
            return false;
        }
        (0..self.len()).all(|i| {
            let (a, b) = (self.is_valid(i), other.is_valid(i));
            a == b && (!a || (self.u[i].to_bits() == other.u[i].to_bits() && self.v[i].to_bits() == other.v[i].to_bits()))
        })
    }
}
