//! KITTI flow PNG: 16-bit RGB, `stored = round(value * 64 + 2^15)` for u
//! and v, third channel is the validity flag.

use std::io::Cursor;

use super::{FlowField, FlowIoError};

pub const KITTI_SCALE: f64 = 64.0;
pub const KITTI_OFFSET: f64 = 32768.0;
const MAX_PIXELS: u64 = 1 << 26;

fn encode(value: f32) -> Option<u16> {
    if value.abs() >= 512.0 {
        return None;
    }
    let stored = (value as f64 * KITTI_SCALE + KITTI_OFFSET).round();
    (0.0..=65535.0).contains(&stored).then_some(stored as u16)
}

fn decode(stored: u16) -> f32 {
    ((stored as f64 - KITTI_OFFSET) / KITTI_SCALE) as f32
}

/// Raw 16-bit triplets in row-major order.
pub(crate) fn encode_triplets(flow: &FlowField) -> Result<Vec<[u16; 3]>, FlowIoError> {
    flow.check_finite()?;
    (0..flow.len())
        .map(|i| {
            if !flow.is_valid(i) {
                return Ok([0, 0, 0]);
            }
            let (u, v) = (flow.u()[i], flow.v()[i]);
            match (encode(u), encode(v)) {
                (Some(a), Some(b)) => Ok([a, b, 1]),
                _ => Err(FlowIoError::OutOfRange {
                    x: i % flow.width(),
                    y: i / flow.width(),
                    u,
                    v,
                }),
            }
        })
        .collect()
}

pub fn write_kitti_png(flow: &FlowField) -> Result<Vec<u8>, FlowIoError> {
    let triplets = encode_triplets(flow)?;
    let (w, h) = (flow.width() as u32, flow.height() as u32);
    if w == 0 || h == 0 {
        return Err(FlowIoError::Dimensions {
            width: w as i64,
            height: h as i64,
        });
    }
    let mut raw = Vec::with_capacity(triplets.len() * 6);
    for t in &triplets {
        for c in t {
            raw.extend_from_slice(&c.to_be_bytes());
        }
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w, h);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Sixteen);
        let mut writer = enc.write_header().map_err(|e| FlowIoError::Png(e.to_string()))?;
        writer.write_image_data(&raw).map_err(|e| FlowIoError::Png(e.to_string()))?;
        writer.finish().map_err(|e| FlowIoError::Png(e.to_string()))?;
    }
    Ok(out)
}

pub fn read_kitti_png(bytes: &[u8]) -> Result<FlowField, FlowIoError> {
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(png::Transformations::IDENTITY);
    let mut reader = dec.read_info().map_err(|e| FlowIoError::Png(e.to_string()))?;
    let info = reader.info();
    let (w, h) = (info.width as usize, info.height as usize);
    if info.bit_depth != png::BitDepth::Sixteen || info.color_type != png::ColorType::Rgb {
        return Err(FlowIoError::UnsupportedPng(format!(
            "{:?} {:?}, expected 16-bit RGB",
            info.bit_depth, info.color_type
        )));
    }
    if info.interlaced {
        return Err(FlowIoError::UnsupportedPng("interlaced".into()));
    }
    if w == 0 || h == 0 || (w as u64) * (h as u64) > MAX_PIXELS {
        return Err(FlowIoError::Dimensions {
            width: w as i64,
            height: h as i64,
        });
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| FlowIoError::Png("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let frame = reader.next_frame(&mut buf).map_err(|e| FlowIoError::Png(e.to_string()))?;
    let line = frame.line_size;
    let n = w * h;
    let (mut u, mut v, mut valid) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for y in 0..h {
        let row = &buf[y * line..y * line + 6 * w];
        for px in row.chunks_exact(6) {
            let ch = |k: usize| u16::from_be_bytes([px[2 * k], px[2 * k + 1]]);
            let ok = ch(2) != 0;
            u.push(if ok { decode(ch(0)) } else { 0.0 });
            v.push(if ok { decode(ch(1)) } else { 0.0 });
            valid.push(ok);
        }
    }
    let valid = if valid.iter().all(|&b| b) { None } else { Some(valid) };
    FlowField::from_parts(w, h, u, v, valid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offset_arithmetic() {
        let t = encode_triplets(&FlowField::zeros(1, 1)).unwrap();
        assert_eq!(t, vec![[32768, 32768, 1]]);
        let t = encode_triplets(&FlowField::constant(1, 1, 1.0, -0.5)).unwrap();
        assert_eq!(t, vec![[32832, 32736, 1]]);
    }

    #[test]
    fn rejects_unencodable_values() {
        assert!(matches!(
            encode_triplets(&FlowField::constant(2, 1, 512.0, 0.0)),
            Err(FlowIoError::OutOfRange { x: 0, y: 0, .. })
        ));
        assert!(encode_triplets(&FlowField::constant(1, 1, -512.0, 0.0)).is_err());
        assert_eq!(
            encode_triplets(&FlowField::constant(1, 1, -511.984_38, 511.984_38)).unwrap(),
            vec![[1, 65535, 1]]
        );
    }

    #[test]
    fn eight_bit_png_is_refused() {
        let img = crate::io::RgbImage::new(2, 2);
        let bytes = crate::io::write_png8(&img).unwrap();
        assert!(matches!(read_kitti_png(&bytes), Err(FlowIoError::UnsupportedPng(_))));
    }
}
