//! Independent encoders written straight from the file layouts, sharing no
//! code with the library.
#![allow(dead_code)]

/// `.flo` writer: magic, LE width/height, interleaved LE f32 pairs.
pub fn flo_bytes(width: u32, height: u32, uv: &[(f32, f32)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&[0x50, 0x49, 0x45, 0x48]);
    for d in [width, height] {
        out.extend_from_slice(&[d as u8, (d >> 8) as u8, (d >> 16) as u8, (d >> 24) as u8]);
    }
    for &(u, v) in uv {
        for x in [u, v] {
            let b = x.to_bits();
            out.extend_from_slice(&[b as u8, (b >> 8) as u8, (b >> 16) as u8, (b >> 24) as u8]);
        }
    }
    out
}

fn crc32(bytes: &[u8]) -> u32 {
    let mut crc = 0xffff_ffffu32;
    for &b in bytes {
        crc ^= b as u32;
        for _ in 0..8 {
            crc = if crc & 1 == 1 { (crc >> 1) ^ 0xedb8_8320 } else { crc >> 1 };
        }
    }
    !crc
}

fn adler32(bytes: &[u8]) -> u32 {
    let (mut a, mut b) = (1u32, 0u32);
    for &x in bytes {
        a = (a + x as u32) % 65521;
        b = (b + a) % 65521;
    }
    (b << 16) | a
}

/// zlib stream made of stored (uncompressed) deflate blocks.
fn zlib_stored(data: &[u8]) -> Vec<u8> {
    let mut out = vec![0x78, 0x01];
    let blocks: Vec<&[u8]> = if data.is_empty() { vec![&[]] } else { data.chunks(65535).collect() };
    for (i, block) in blocks.iter().enumerate() {
        out.push(u8::from(i + 1 == blocks.len()));
        let len = block.len() as u16;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(&(!len).to_le_bytes());
        out.extend_from_slice(block);
    }
    out.extend_from_slice(&adler32(data).to_be_bytes());
    out
}

fn chunk(out: &mut Vec<u8>, kind: &[u8; 4], body: &[u8]) {
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    let mut crc_input = kind.to_vec();
    crc_input.extend_from_slice(body);
    out.extend_from_slice(&crc_input);
    out.extend_from_slice(&crc32(&crc_input).to_be_bytes());
}

/// Minimal PNG: RGB, given bit depth, filter type 0 on every row.
pub fn png_rgb(width: u32, height: u32, depth: u8, rows: &[Vec<u8>]) -> Vec<u8> {
    let mut out = vec![0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a];
    let mut ihdr = Vec::new();
    ihdr.extend_from_slice(&width.to_be_bytes());
    ihdr.extend_from_slice(&height.to_be_bytes());
    ihdr.extend_from_slice(&[depth, 2, 0, 0, 0]);
    chunk(&mut out, b"IHDR", &ihdr);
    let mut raw = Vec::new();
    for row in rows {
        raw.push(0);
        raw.extend_from_slice(row);
    }
    chunk(&mut out, b"IDAT", &zlib_stored(&raw));
    chunk(&mut out, b"IEND", &[]);
    out
}

/// KITTI flow PNG from `(u, v, valid)` triples via the stored-value formula.
pub fn kitti_png(width: u32, height: u32, px: &[(f64, f64, bool)]) -> Vec<u8> {
    let rows: Vec<Vec<u8>> = px
        .chunks(width as usize)
        .map(|row| {
            let mut r = Vec::new();
            for &(u, v, ok) in row {
                let vals = if ok {
                    [(u * 64.0 + 32768.0).round() as u16, (v * 64.0 + 32768.0).round() as u16, 1]
                } else {
                    [0, 0, 0]
                };
                for x in vals {
                    r.extend_from_slice(&x.to_be_bytes());
                }
            }
            r
        })
        .collect();
    png_rgb(width, height, 16, &rows)
}

/// Middlebury wheel built from the segment table by linear color ramps.
pub fn reference_wheel() -> Vec<[f64; 3]> {
    let segments: [(usize, [f64; 3], [f64; 3]); 6] = [
        (15, [255.0, 0.0, 0.0], [255.0, 255.0, 0.0]),
        (6, [255.0, 255.0, 0.0], [0.0, 255.0, 0.0]),
        (4, [0.0, 255.0, 0.0], [0.0, 255.0, 255.0]),
        (11, [0.0, 255.0, 255.0], [0.0, 0.0, 255.0]),
        (13, [0.0, 0.0, 255.0], [255.0, 0.0, 255.0]),
        (6, [255.0, 0.0, 255.0], [255.0, 0.0, 0.0]),
    ];
    let mut wheel = Vec::new();
    for (n, from, to) in segments {
        for i in 0..n {
            let t = i as f64 / n as f64;
            let mut c = [0.0; 3];
            for k in 0..3 {
                let x = from[k] + t * (to[k] - from[k]);
                c[k] = if to[k] >= from[k] { x.floor() } else { x.ceil() };
            }
            wheel.push(c);
        }
    }
    wheel
}

/// Wheel color of a normalized vector by direct construction.
pub fn reference_color(wheel: &[[f64; 3]], u: f64, v: f64) -> [f64; 3] {
    let n = wheel.len();
    let rad = u.hypot(v);
    let theta = (-v).atan2(-u);
    let a = if theta >= std::f64::consts::PI { -1.0 } else { theta / std::f64::consts::PI };
    let pos = (a + 1.0) * 0.5 * (n - 1) as f64;
    let k = pos.floor() as usize;
    let f = pos - k as f64;
    let mut out = [0.0; 3];
    for c in 0..3 {
        let base = (wheel[k][c] * (1.0 - f) + wheel[(k + 1) % n][c] * f) / 255.0;
        let s = if rad <= 1.0 { 1.0 - rad * (1.0 - base) } else { 0.75 * base };
        out[c] = 255.0 * s;
    }
    out
}
