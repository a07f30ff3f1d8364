use crate::tensor::Scalar;

pub(crate) fn avg_pool2_forward<T: Scalar>(x: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (ho, wo) = (h / 2, w / 2);
    let quarter = T::from_f64(0.25);
    let mut out = vec![T::zero(); planes * ho * wo];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * ho * wo..(p + 1) * ho * wo];
        for y in 0..ho {
            for xx in 0..wo {
                let i = 2 * y * w + 2 * xx;
                dst[y * wo + xx] = (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]) * quarter;
            }
        }
    }
    out
}

pub(crate) fn avg_pool2_backward<T: Scalar>(dout: &[T], planes: usize, h: usize, w: usize, dx: &mut [T]) {
    let (ho, wo) = (h / 2, w / 2);
    let quarter = T::from_f64(0.25);
    for p in 0..planes {
        let g = &dout[p * ho * wo..(p + 1) * ho * wo];
        let dst = &mut dx[p * h * w..(p + 1) * h * w];
        for y in 0..ho {
            for xx in 0..wo {
                let v = g[y * wo + xx] * quarter;
                let i = 2 * y * w + 2 * xx;
                dst[i] += v;
                dst[i + 1] += v;
                dst[i + w] += v;
                dst[i + w + 1] += v;
            }
        }
    }
}

/// Two-tap weights for output index `o` of a x2 linear upsampling with
/// half-pixel centers and edge clamping.
#[inline]
fn taps(o: usize, len: usize) -> [(usize, f64); 2] {
    let k = o / 2;
    if o.is_multiple_of(2) {
        [(k.saturating_sub(1), 0.25), (k, 0.75)]
    } else {
        [(k, 0.75), ((k + 1).min(len - 1), 0.25)]
    }
}

pub(crate) fn upsample2_forward<T: Scalar>(x: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (ho, wo) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); planes * ho * wo];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * ho * wo..(p + 1) * ho * wo];
        for oy in 0..ho {
            let ty = taps(oy, h);
            for ox in 0..wo {
                let tx = taps(ox, w);
                let mut acc = T::zero();
                for &(iy, wy) in &ty {
                    for &(ix, wx) in &tx {
                        acc += T::from_f64(wy * wx) * src[iy * w + ix];
                    }
                }
                dst[oy * wo + ox] = acc;
            }
        }
    }
    out
}

pub(crate) fn upsample2_backward<T: Scalar>(dout: &[T], planes: usize, h: usize, w: usize, dx: &mut [T]) {
    let (ho, wo) = (2 * h, 2 * w);
    for p in 0..planes {
        let g = &dout[p * ho * wo..(p + 1) * ho * wo];
        let dst = &mut dx[p * h * w..(p + 1) * h * w];
        for oy in 0..ho {
            let ty = taps(oy, h);
            for ox in 0..wo {
                let tx = taps(ox, w);
                let v = g[oy * wo + ox];
                for &(iy, wy) in &ty {
                    for &(ix, wx) in &tx {
                        dst[iy * w + ix] += T::from_f64(wy * wx) * v;
                    }
                }
            }
        }
    }
}

/// Shape bookkeeping for convex upsampling: coarse flow `[n, 2, h, w]`,
/// weights `[n, 9, f*f, h, w]`, output `[n, 2, h*f, w*f]`.
pub(crate) struct ConvexDims {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub factor: usize,
}

const NEIGHBORS: [(isize, isize); 9] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (-1, 0),
    (0, 0),
    (1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

pub(crate) fn convex_forward<T: Scalar>(flow: &[T], weights: &[T], d: &ConvexDims) -> Vec<T> {
    let (h, w, f) = (d.h, d.w, d.factor);
    let hw = h * w;
    let ff = f * f;
    let (ho, wo) = (h * f, w * f);
    let scale = T::from_f64(f as f64);
    let mut out = vec![T::zero(); d.n * 2 * ho * wo];
    for n in 0..d.n {
        for y in 0..h {
            for x in 0..w {
                for (k, &(dx, dy)) in NEIGHBORS.iter().enumerate() {
                    let (sx, sy) = (x as isize + dx, y as isize + dy);
                    if sx < 0 || sy < 0 || sx >= w as isize || sy >= h as isize {
                        continue;
                    }
                    let src = sy as usize * w + sx as usize;
                    for c in 0..2 {
                        let v = flow[(n * 2 + c) * hw + src] * scale;
                        for i in 0..f {
                            for j in 0..f {
                                let wt = weights[((n * 9 + k) * ff + i * f + j) * hw + y * w + x];
                                out[(n * 2 + c) * ho * wo + (y * f + i) * wo + x * f + j] += wt * v;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn convex_backward<T: Scalar>(
    flow: &[T],
    weights: &[T],
    dout: &[T],
    d: &ConvexDims,
    mut dflow: Option<&mut [T]>,
    mut dweights: Option<&mut [T]>,
) {
    let (h, w, f) = (d.h, d.w, d.factor);
    let hw = h * w;
    let ff = f * f;
    let (ho, wo) = (h * f, w * f);
    let scale = T::from_f64(f as f64);
    for n in 0..d.n {
        for y in 0..h {
            for x in 0..w {
                for (k, &(dx, dy)) in NEIGHBORS.iter().enumerate() {
                    let (sx, sy) = (x as isize + dx, y as isize + dy);
                    if sx < 0 || sy < 0 || sx >= w as isize || sy >= h as isize {
                        continue;
                    }
                    let src = sy as usize * w + sx as usize;
                    for c in 0..2 {
                        let v = flow[(n * 2 + c) * hw + src] * scale;
                        let mut gflow = T::zero();
                        for i in 0..f {
                            for j in 0..f {
                                let widx = ((n * 9 + k) * ff + i * f + j) * hw + y * w + x;
                                let g = dout[(n * 2 + c) * ho * wo + (y * f + i) * wo + x * f + j];
                                gflow += weights[widx] * g;
                                if let Some(dw) = dweights.as_deref_mut() {
                                    dw[widx] += g * v;
                                }
                            }
                        }
                        if let Some(df) = dflow.as_deref_mut() {
                            df[(n * 2 + c) * hw + src] += gflow * scale;
                        }
                    }
                }
            }
        }
    }
}
