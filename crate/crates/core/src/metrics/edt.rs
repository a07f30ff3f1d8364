//! Exact Euclidean distance transform (lower envelope of parabolas).

/// Squared distance transform of a 1D sampled function; infinite samples
/// are treated as absent.
fn dt1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let Some(first) = f.iter().position(|x| x.is_finite()) else {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    };
    let mut k = 0usize;
    v[0] = first;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in first + 1..f.len() {
        if !f[q].is_finite() {
            continue;
        }
        let meet = |p: usize| ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q - p) as f64);
        let mut s = meet(v[k]);
        while s <= z[k] {
            k -= 1;
            s = meet(v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Distance from every pixel to the nearest `true` pixel; infinite when
/// the mask is empty.
pub fn distance_transform(mask: &[bool], width: usize, height: usize) -> Vec<f64> {
    assert_eq!(mask.len(), width * height);
    let mut grid: Vec<f64> = mask.iter().map(|&b| if b { 0.0 } else { f64::INFINITY }).collect();
    let m = width.max(height);
    let (mut v, mut z) = (vec![0usize; m], vec![0.0f64; m + 1]);
    let (mut f, mut out) = (vec![0.0; m], vec![0.0; m]);
    for x in 0..width {
        for y in 0..height {
            f[y] = grid[y * width + x];
        }
        dt1d(&f[..height], &mut out[..height], &mut v, &mut z);
        for y in 0..height {
            grid[y * width + x] = out[y];
        }
    }
    for y in 0..height {
        let row = &mut grid[y * width..(y + 1) * width];
        f[..width].copy_from_slice(row);
        dt1d(&f[..width], &mut out[..width], &mut v, &mut z);
        row.copy_from_slice(&out[..width]);
    }
    grid.iter().map(|d| d.sqrt()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn matches_brute_force() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let (w, h) = (rng.gen_range(1..20), rng.gen_range(1..20));
            let p = rng.gen_range(0.0..0.3);
            let mask: Vec<bool> = (0..w * h).map(|_| rng.gen_bool(p)).collect();
            let d = distance_transform(&mask, w, h);
            for y in 0..h {
                for x in 0..w {
                    let mut best = f64::INFINITY;
                    for (j, &m) in mask.iter().enumerate() {
                        if m {
                            let (dx, dy) = (x as f64 - (j % w) as f64, y as f64 - (j / w) as f64);
                            best = best.min(dx.hypot(dy));
                        }
                    }
                    let got = d[y * w + x];
                    assert!(got == best || (got - best).abs() < 1e-12, "{got} vs {best}");
                }
            }
        }
    }
}
