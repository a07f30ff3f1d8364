use crate::tensor::Scalar;

pub(crate) struct CorrDims {
    pub n: usize,
    pub d: usize,
    pub h: usize,
    pub w: usize,
}

/// Index ranges `[lo, hi)` of positions `p` with `0 <= p + off < extent`.
#[inline]
fn shifted_range(off: isize, extent: usize) -> (usize, usize) {
    let lo = (-off).max(0) as usize;
    let hi = (extent as isize - off).clamp(0, extent as isize) as usize;
    (lo.min(hi), hi)
}

fn displacements(radius: usize) -> impl Iterator<Item = (isize, isize)> {
    let r = radius as isize;
    (-r..=r).flat_map(move |dy| (-r..=r).map(move |dx| (dx, dy)))
}

/// Channel `k` of the output holds `<f1(x), f2(x + delta_k)> / D`, with the
/// displacement grid enumerated row-major (dy outer, dx inner).
pub(crate) fn local_forward<T: Scalar>(f1: &[T], f2: &[T], radius: usize, s: &CorrDims) -> Vec<T> {
    let hw = s.h * s.w;
    let k_total = (2 * radius + 1) * (2 * radius + 1);
    let width = T::from_f64(s.d as f64);
    let mut out = vec![T::zero(); s.n * k_total * hw];
    for n in 0..s.n {
        for (k, (dx, dy)) in displacements(radius).enumerate() {
            let (y_lo, y_hi) = shifted_range(dy, s.h);
            let (x_lo, x_hi) = shifted_range(dx, s.w);
            let dst = &mut out[(n * k_total + k) * hw..(n * k_total + k + 1) * hw];
            for c in 0..s.d {
                let a = &f1[(n * s.d + c) * hw..(n * s.d + c + 1) * hw];
                let b = &f2[(n * s.d + c) * hw..(n * s.d + c + 1) * hw];
                for y in y_lo..y_hi {
                    let yb = (y as isize + dy) as usize;
                    let row_a = &a[y * s.w..(y + 1) * s.w];
                    let row_b = &b[yb * s.w..(yb + 1) * s.w];
                    let row_o = &mut dst[y * s.w..(y + 1) * s.w];
                    for x in x_lo..x_hi {
                        row_o[x] += row_a[x] * row_b[(x as isize + dx) as usize];
                    }
                }
            }
            dst.iter_mut().for_each(|v| *v = *v / width);
        }
    }
    out
}

pub(crate) fn local_backward<T: Scalar>(
    f1: &[T],
    f2: &[T],
    radius: usize,
    dout: &[T],
    s: &CorrDims,
    mut df1: Option<&mut [T]>,
    mut df2: Option<&mut [T]>,
) {
    let hw = s.h * s.w;
    let k_total = (2 * radius + 1) * (2 * radius + 1);
    let norm = T::one() / T::from_f64(s.d as f64);
    for n in 0..s.n {
        for (k, (dx, dy)) in displacements(radius).enumerate() {
            let (y_lo, y_hi) = shifted_range(dy, s.h);
            let (x_lo, x_hi) = shifted_range(dx, s.w);
            let g = &dout[(n * k_total + k) * hw..(n * k_total + k + 1) * hw];
            for c in 0..s.d {
                let base = (n * s.d + c) * hw;
                for y in y_lo..y_hi {
                    let yb = (y as isize + dy) as usize;
                    for x in x_lo..x_hi {
                        let xb = (x as isize + dx) as usize;
                        let gv = g[y * s.w + x] * norm;
                        if let Some(d1) = df1.as_deref_mut() {
                            d1[base + y * s.w + x] += gv * f2[base + yb * s.w + xb];
                        }
                        if let Some(d2) = df2.as_deref_mut() {
                            d2[base + yb * s.w + xb] += gv * f1[base + y * s.w + x];
                        }
                    }
                }
            }
        }
    }
}

/// Entry `(p1, p2)` is `<f1(p1), f2(p2)> / sqrt(D)`, laid out `[n, p1, p2]`.
pub(crate) fn all_pairs_forward<T: Scalar>(f1: &[T], f2: &[T], s: &CorrDims) -> Vec<T> {
    let hw = s.h * s.w;
    let norm = T::from_f64(s.d as f64).sqrt();
    let mut out = vec![T::zero(); s.n * hw * hw];
    for n in 0..s.n {
        let a = &f1[n * s.d * hw..(n + 1) * s.d * hw];
        let b = &f2[n * s.d * hw..(n + 1) * s.d * hw];
        let o = &mut out[n * hw * hw..(n + 1) * hw * hw];
        T::gemm(hw, s.d, hw, a, true, b, false, T::zero(), o);
        o.iter_mut().for_each(|v| *v = *v / norm);
    }
    out
}

pub(crate) fn all_pairs_backward<T: Scalar>(
    f1: &[T],
    f2: &[T],
    dout: &[T],
    s: &CorrDims,
    mut df1: Option<&mut [T]>,
    mut df2: Option<&mut [T]>,
) {
    let hw = s.h * s.w;
    let norm = T::one() / T::from_f64(s.d as f64).sqrt();
    let mut scaled = vec![T::zero(); hw * hw];
    for n in 0..s.n {
        let range = n * s.d * hw..(n + 1) * s.d * hw;
        scaled
            .iter_mut()
            .zip(&dout[n * hw * hw..(n + 1) * hw * hw])
            .for_each(|(d, &g)| *d = g * norm);
        if let Some(d1) = df1.as_deref_mut() {
            T::gemm(s.d, hw, hw, &f2[range.clone()], false, &scaled, true, T::one(), &mut d1[range.clone()]);
        }
        if let Some(d2) = df2.as_deref_mut() {
            T::gemm(s.d, hw, hw, &f1[range.clone()], false, &scaled, false, T::one(), &mut d2[range.clone()]);
        }
    }
}
