//! 8-bit RGB images with PNG and binary PPM output.

use std::io::Cursor;

use super::FlowIoError;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self, FlowIoError> {
        if data.len() != width * height * 3 {
            return Err(FlowIoError::Layout { width, height });
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = 3 * (y * self.width + x);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}

pub fn write_png8(img: &RgbImage) -> Result<Vec<u8>, FlowIoError> {
    if img.width == 0 || img.height == 0 {
        return Err(FlowIoError::Dimensions {
            width: img.width as i64,
            height: img.height as i64,
        });
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width as u32, img.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| FlowIoError::Png(e.to_string()))?;
        writer.write_image_data(&img.data).map_err(|e| FlowIoError::Png(e.to_string()))?;
        writer.finish().map_err(|e| FlowIoError::Png(e.to_string()))?;
    }
    Ok(out)
}

/// Binary `P6` with maxval 255.
pub fn write_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

/// Decodes a non-interlaced 8-bit RGB PNG.
pub fn decode_png8(bytes: &[u8]) -> Result<RgbImage, FlowIoError> {
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(png::Transformations::IDENTITY);
    let mut reader = dec.read_info().map_err(|e| FlowIoError::Png(e.to_string()))?;
    let info = reader.info();
    if info.bit_depth != png::BitDepth::Eight || info.color_type != png::ColorType::Rgb || info.interlaced {
        return Err(FlowIoError::UnsupportedPng(format!(
            "{:?} {:?} interlaced={}, expected 8-bit RGB",
            info.bit_depth, info.color_type, info.interlaced
        )));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    if (w as u64) * (h as u64) > 1 << 26 {
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
    let mut data = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        data.extend_from_slice(&buf[y * frame.line_size..y * frame.line_size + 3 * w]);
    }
    RgbImage::from_raw(w, h, data)
}
