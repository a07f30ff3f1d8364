use crate::tensor::{Scalar, TensorError};

/// Geometry of a 2-d cross-correlation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub f: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(
        input: &[usize],
        kernel: &[usize],
        stride: usize,
        pad: usize,
    ) -> Result<Self, TensorError> {
        let mismatch = || TensorError::ShapeMismatch {
            op: "conv2d",
            lhs: input.to_vec(),
            rhs: kernel.to_vec(),
        };
        let (&[n, c, h, w], &[f, kc, kh, kw]) = (input, kernel) else {
            return Err(mismatch());
        };
        if kc != c || kh % 2 == 0 || kw % 2 == 0 || stride == 0 {
            return Err(mismatch());
        }
        let span_h = (h + 2 * pad).checked_sub(kh).ok_or_else(mismatch)?;
        let span_w = (w + 2 * pad).checked_sub(kw).ok_or_else(mismatch)?;
        if span_h % stride != 0 || span_w % stride != 0 {
            return Err(mismatch());
        }
        Ok(ConvGeom {
            n,
            c,
            h,
            w,
            f,
            kh,
            kw,
            stride,
            pad,
            ho: span_h / stride + 1,
            wo: span_w / stride + 1,
        })
    }

    pub fn col_rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    pub fn out_plane(&self) -> usize {
        self.ho * self.wo
    }

    fn pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    /// Output columns `ox` whose input column `ox*stride + k - pad` is inside the image.
    fn valid_range(&self, k: usize, extent: usize, out: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let off = k as isize - self.pad as isize;
        // smallest o with o*s + off >= 0
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        // largest o with o*s + off <= extent - 1
        let last = extent as isize - 1 - off;
        let hi = if last < 0 { 0 } else { (last / s + 1).min(out as isize) };
        let lo = lo.min(out as isize);
        (lo as usize, hi.max(lo) as usize)
    }
}

fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, col: &mut [T]) {
    let plane = g.out_plane();
    for c in 0..g.c {
        let src = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            let (oy_lo, oy_hi) = g.valid_range(ky, g.h, g.ho);
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut col[row * plane..(row + 1) * plane];
                let (ox_lo, ox_hi) = g.valid_range(kx, g.w, g.wo);
                for oy in 0..g.ho {
                    let line = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if oy < oy_lo || oy >= oy_hi {
                        line.fill(T::zero());
                        continue;
                    }
                    let iy = oy * g.stride + ky - g.pad;
                    line[..ox_lo].fill(T::zero());
                    line[ox_hi..].fill(T::zero());
                    let src_row = &src[iy * g.w..(iy + 1) * g.w];
                    if g.stride == 1 {
                        let ix0 = ox_lo + kx - g.pad;
                        line[ox_lo..ox_hi].copy_from_slice(&src_row[ix0..ix0 + (ox_hi - ox_lo)]);
                    } else {
                        for ox in ox_lo..ox_hi {
                            line[ox] = src_row[ox * g.stride + kx - g.pad];
                        }
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Scalar>(col: &[T], g: &ConvGeom, dx: &mut [T]) {
    let plane = g.out_plane();
    for c in 0..g.c {
        let dst = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            let (oy_lo, oy_hi) = g.valid_range(ky, g.h, g.ho);
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &col[row * plane..(row + 1) * plane];
                let (ox_lo, ox_hi) = g.valid_range(kx, g.w, g.wo);
                for oy in oy_lo..oy_hi {
                    let iy = oy * g.stride + ky - g.pad;
                    let line = &src[oy * g.wo..(oy + 1) * g.wo];
                    let dst_row = &mut dst[iy * g.w..(iy + 1) * g.w];
                    for ox in ox_lo..ox_hi {
                        dst_row[ox * g.stride + kx - g.pad] += line[ox];
                    }
                }
            }
        }
    }
}

pub(crate) fn forward<T: Scalar>(x: &[T], k: &[T], bias: Option<&[T]>, g: &ConvGeom) -> Vec<T> {
    let plane = g.out_plane();
    let in_sz = g.c * g.h * g.w;
    let out_sz = g.f * plane;
    let mut out = vec![T::zero(); g.n * out_sz];
    let mut col = if g.pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); g.col_rows() * plane]
    };
    for n in 0..g.n {
        let xn = &x[n * in_sz..(n + 1) * in_sz];
        let on = &mut out[n * out_sz..(n + 1) * out_sz];
        let rhs: &[T] = if g.pointwise() {
            xn
        } else {
            im2col(xn, g, &mut col);
            &col
        };
        T::gemm(g.f, g.col_rows(), plane, k, false, rhs, false, T::zero(), on);
        if let Some(b) = bias {
            for (f, chunk) in on.chunks_mut(plane).enumerate() {
                chunk.iter_mut().for_each(|v| *v += b[f]);
            }
        }
    }
    out
}

/// Accumulates gradients into whichever of `dx`, `dk`, `db` are requested.
pub(crate) fn backward<T: Scalar>(
    x: &[T],
    k: &[T],
    dout: &[T],
    g: &ConvGeom,
    mut dx: Option<&mut [T]>,
    mut dk: Option<&mut [T]>,
    db: Option<&mut [T]>,
) {
    let plane = g.out_plane();
    let in_sz = g.c * g.h * g.w;
    let out_sz = g.f * plane;
    let rows = g.col_rows();
    let mut col = if g.pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); rows * plane]
    };
    for n in 0..g.n {
        let xn = &x[n * in_sz..(n + 1) * in_sz];
        let dn = &dout[n * out_sz..(n + 1) * out_sz];
        if let Some(dk) = dk.as_deref_mut() {
            let rhs: &[T] = if g.pointwise() {
                xn
            } else {
                im2col(xn, g, &mut col);
                &col
            };
            T::gemm(g.f, plane, rows, dn, false, rhs, true, T::one(), dk);
        }
        if let Some(dx) = dx.as_deref_mut() {
            let dxn = &mut dx[n * in_sz..(n + 1) * in_sz];
            if g.pointwise() {
                T::gemm(rows, g.f, plane, k, true, dn, false, T::one(), dxn);
            } else {
                T::gemm(rows, g.f, plane, k, true, dn, false, T::zero(), &mut col);
                col2im_add(&col, g, dxn);
            }
        }
    }
    if let Some(db) = db {
        for n in 0..g.n {
            let dn = &dout[n * out_sz..(n + 1) * out_sz];
            for (f, chunk) in dn.chunks(plane).enumerate() {
                db[f] += chunk.iter().copied().sum::<T>();
            }
        }
    }
}
