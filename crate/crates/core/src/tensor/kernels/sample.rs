use crate::tensor::Scalar;

/// Bilinear footprint of a sample point: corner origin and fractional offsets.
#[derive(Clone, Copy)]
struct Footprint<T> {
    x0: isize,
    y0: isize,
    fx: T,
    fy: T,
}

impl<T: Scalar> Footprint<T> {
    #[inline]
    fn at(x: T, y: T) -> Self {
        let xf = x.floor();
        let yf = y.floor();
        Footprint {
            x0: xf.to_isize().unwrap_or(isize::MIN / 2),
            y0: yf.to_isize().unwrap_or(isize::MIN / 2),
            fx: x - xf,
            fy: y - yf,
        }
    }

    /// Corner offsets `(dx, dy)` paired with their interpolation weights.
    #[inline]
    fn corners(&self) -> [(isize, isize, T); 4] {
        let one = T::one();
        [
            (0, 0, (one - self.fx) * (one - self.fy)),
            (1, 0, self.fx * (one - self.fy)),
            (0, 1, (one - self.fx) * self.fy),
            (1, 1, self.fx * self.fy),
        ]
    }
}

#[inline]
fn fetch<T: Scalar>(plane: &[T], h: usize, w: usize, x: isize, y: isize) -> T {
    if x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h {
        plane[y as usize * w + x as usize]
    } else {
        T::zero()
    }
}

#[inline]
fn sample_plane<T: Scalar>(plane: &[T], h: usize, w: usize, fp: &Footprint<T>) -> T {
    let mut acc = T::zero();
    for (dx, dy, wt) in fp.corners() {
        let x = fp.x0 + dx;
        let y = fp.y0 + dy;
        if x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h {
            acc += wt * plane[y as usize * w + x as usize];
        }
    }
    acc
}

#[inline]
fn scatter_plane<T: Scalar>(plane: &mut [T], h: usize, w: usize, fp: &Footprint<T>, g: T) {
    for (dx, dy, wt) in fp.corners() {
        let x = fp.x0 + dx;
        let y = fp.y0 + dy;
        if x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h {
            plane[y as usize * w + x as usize] += wt * g;
        }
    }
}

/// Partial derivatives of the sampled value w.r.t. the sample position.
#[inline]
fn position_grad<T: Scalar>(plane: &[T], h: usize, w: usize, fp: &Footprint<T>) -> (T, T) {
    let one = T::one();
    let v00 = fetch(plane, h, w, fp.x0, fp.y0);
    let v01 = fetch(plane, h, w, fp.x0 + 1, fp.y0);
    let v10 = fetch(plane, h, w, fp.x0, fp.y0 + 1);
    let v11 = fetch(plane, h, w, fp.x0 + 1, fp.y0 + 1);
    let dx = (one - fp.fy) * (v01 - v00) + fp.fy * (v11 - v10);
    let dy = (one - fp.fx) * (v10 - v00) + fp.fx * (v11 - v01);
    (dx, dy)
}

pub(crate) struct SampleDims {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub ho: usize,
    pub wo: usize,
}

pub(crate) fn bilinear_forward<T: Scalar>(src: &[T], coords: &[T], d: &SampleDims) -> Vec<T> {
    let (hw, ohw) = (d.h * d.w, d.ho * d.wo);
    let mut out = vec![T::zero(); d.n * d.c * ohw];
    for n in 0..d.n {
        let cx = &coords[(n * 2) * ohw..(n * 2 + 1) * ohw];
        let cy = &coords[(n * 2 + 1) * ohw..(n * 2 + 2) * ohw];
        for p in 0..ohw {
            let fp = Footprint::at(cx[p], cy[p]);
            for c in 0..d.c {
                let plane = &src[(n * d.c + c) * hw..(n * d.c + c + 1) * hw];
                out[(n * d.c + c) * ohw + p] = sample_plane(plane, d.h, d.w, &fp);
            }
        }
    }
    out
}

pub(crate) fn bilinear_backward<T: Scalar>(
    src: &[T],
    coords: &[T],
    dout: &[T],
    d: &SampleDims,
    mut dsrc: Option<&mut [T]>,
    mut dcoords: Option<&mut [T]>,
) {
    let (hw, ohw) = (d.h * d.w, d.ho * d.wo);
    for n in 0..d.n {
        let cx = &coords[(n * 2) * ohw..(n * 2 + 1) * ohw];
        let cy = &coords[(n * 2 + 1) * ohw..(n * 2 + 2) * ohw];
        for p in 0..ohw {
            let fp = Footprint::at(cx[p], cy[p]);
            let (mut gx, mut gy) = (T::zero(), T::zero());
            for c in 0..d.c {
                let base = (n * d.c + c) * hw;
                let g = dout[(n * d.c + c) * ohw + p];
                if let Some(ds) = dsrc.as_deref_mut() {
                    scatter_plane(&mut ds[base..base + hw], d.h, d.w, &fp, g);
                }
                if dcoords.is_some() {
                    let (px, py) = position_grad(&src[base..base + hw], d.h, d.w, &fp);
                    gx += g * px;
                    gy += g * py;
                }
            }
            if let Some(dc) = dcoords.as_deref_mut() {
                dc[(n * 2) * ohw + p] += gx;
                dc[(n * 2 + 1) * ohw + p] += gy;
            }
        }
    }
}

/// Dimensions for a correlation-pyramid lookup: the volume holds one
/// `vh x vw` plane per query pixel of an `h x w` grid.
pub(crate) struct LookupDims {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub vh: usize,
    pub vw: usize,
    pub radius: usize,
}

impl LookupDims {
    pub fn window(&self) -> usize {
        (2 * self.radius + 1) * (2 * self.radius + 1)
    }

    fn offsets<T: Scalar>(&self) -> impl Iterator<Item = (T, T)> + '_ {
        let r = self.radius as isize;
        (-r..=r).flat_map(move |dy| {
            (-r..=r).map(move |dx| (T::from_f64(dx as f64), T::from_f64(dy as f64)))
        })
    }
}

pub(crate) fn lookup_forward<T: Scalar>(
    volume: &[T],
    coords: &[T],
    scale: T,
    d: &LookupDims,
) -> Vec<T> {
    let (hw, vhw, k) = (d.h * d.w, d.vh * d.vw, d.window());
    let mut out = vec![T::zero(); d.n * k * hw];
    for n in 0..d.n {
        for p in 0..hw {
            let cx = coords[(n * 2) * hw + p] * scale;
            let cy = coords[(n * 2 + 1) * hw + p] * scale;
            let plane = &volume[(n * hw + p) * vhw..(n * hw + p + 1) * vhw];
            for (i, (ox, oy)) in d.offsets::<T>().enumerate() {
                let fp = Footprint::at(cx + ox, cy + oy);
                out[(n * k + i) * hw + p] = sample_plane(plane, d.vh, d.vw, &fp);
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn lookup_backward<T: Scalar>(
    volume: &[T],
    coords: &[T],
    scale: T,
    dout: &[T],
    d: &LookupDims,
    mut dvolume: Option<&mut [T]>,
    mut dcoords: Option<&mut [T]>,
) {
    let (hw, vhw, k) = (d.h * d.w, d.vh * d.vw, d.window());
    for n in 0..d.n {
        for p in 0..hw {
            let cx = coords[(n * 2) * hw + p] * scale;
            let cy = coords[(n * 2 + 1) * hw + p] * scale;
            let range = (n * hw + p) * vhw..(n * hw + p + 1) * vhw;
            let (mut gx, mut gy) = (T::zero(), T::zero());
            for (i, (ox, oy)) in d.offsets::<T>().enumerate() {
                let fp = Footprint::at(cx + ox, cy + oy);
                let g = dout[(n * k + i) * hw + p];
                if let Some(dv) = dvolume.as_deref_mut() {
                    scatter_plane(&mut dv[range.clone()], d.vh, d.vw, &fp, g);
                }
                if dcoords.is_some() {
                    let (px, py) = position_grad(&volume[range.clone()], d.vh, d.vw, &fp);
                    gx += g * px;
                    gy += g * py;
                }
            }
            if let Some(dc) = dcoords.as_deref_mut() {
                dc[(n * 2) * hw + p] += gx * scale;
                dc[(n * 2 + 1) * hw + p] += gy * scale;
            }
        }
    }
}
