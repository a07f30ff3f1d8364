//! Middlebury `.flo`: `"PIEH"`, little-endian i32 width and height, then
//! row-major interleaved little-endian f32 `(u, v)` pairs.

use super::{FlowField, FlowIoError};

pub const FLO_MAGIC: &[u8; 4] = b"PIEH";
/// Written for invalid pixels; anything above 1e9 reads back as invalid.
pub const UNKNOWN_FLOW: f32 = 1e10;
const UNKNOWN_THRESHOLD: f32 = 1e9;
const HEADER: usize = 12;
/// Upper bound on pixels accepted from a file header.
const MAX_PIXELS: u64 = 1 << 28;

pub fn write_flo(flow: &FlowField) -> Result<Vec<u8>, FlowIoError> {
    flow.check_finite()?;
    let (w, h) = (flow.width(), flow.height());
    if w == 0 || h == 0 || w > i32::MAX as usize || h > i32::MAX as usize {
        return Err(FlowIoError::Dimensions {
            width: w as i64,
            height: h as i64,
        });
    }
    let mut out = Vec::with_capacity(HEADER + 8 * flow.len());
    out.extend_from_slice(FLO_MAGIC);
    out.extend_from_slice(&(w as i32).to_le_bytes());
    out.extend_from_slice(&(h as i32).to_le_bytes());
    for i in 0..flow.len() {
        let (u, v) = if flow.is_valid(i) {
            (flow.u()[i], flow.v()[i])
        } else {
            (UNKNOWN_FLOW, UNKNOWN_FLOW)
        };
        out.extend_from_slice(&u.to_le_bytes());
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn word(bytes: &[u8], offset: usize) -> Result<[u8; 4], FlowIoError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| [b[0], b[1], b[2], b[3]])
        .ok_or(FlowIoError::Truncated {
            offset,
            needed: 4,
            available: bytes.len().saturating_sub(offset),
        })
}

pub fn read_flo(bytes: &[u8]) -> Result<FlowField, FlowIoError> {
    if word(bytes, 0)? != *FLO_MAGIC {
        return Err(FlowIoError::BadMagic {
            offset: 0,
            expected: "PIEH",
        });
    }
    let w = i32::from_le_bytes(word(bytes, 4)?) as i64;
    let h = i32::from_le_bytes(word(bytes, 8)?) as i64;
    if w <= 0 || h <= 0 || (w as u64) * (h as u64) > MAX_PIXELS {
        return Err(FlowIoError::Dimensions { width: w, height: h });
    }
    let (w, h) = (w as usize, h as usize);
    let n = w * h;
    let payload = &bytes[HEADER..];
    if payload.len() < 8 * n {
        return Err(FlowIoError::Truncated {
            offset: HEADER + payload.len() / 8 * 8,
            needed: 8 * n,
            available: payload.len(),
        });
    }
    if payload.len() > 8 * n {
        return Err(FlowIoError::Trailing { offset: HEADER + 8 * n });
    }
    let mut u = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    let mut valid = Vec::with_capacity(n);
    for pair in payload.chunks_exact(8) {
        let a = f32::from_le_bytes([pair[0], pair[1], pair[2], pair[3]]);
        let b = f32::from_le_bytes([pair[4], pair[5], pair[6], pair[7]]);
        let ok = a.is_finite() && b.is_finite() && a.abs() <= UNKNOWN_THRESHOLD && b.abs() <= UNKNOWN_THRESHOLD;
        u.push(a);
        v.push(b);
        valid.push(ok);
    }
    let valid = if valid.iter().all(|&b| b) { None } else { Some(valid) };
    FlowField::from_parts(w, h, u, v, valid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_pixel_file_is_twenty_bytes() {
        let bytes = write_flo(&FlowField::zeros(1, 1)).unwrap();
        assert_eq!(bytes.len(), 20);
        assert_eq!(&bytes[..4], b"PIEH");
        assert_eq!(f32::from_le_bytes(bytes[..4].try_into().unwrap()), 202021.25);
    }

    #[test]
    fn errors_report_offsets() {
        let mut bytes = write_flo(&FlowField::constant(3, 2, 1.0, -1.0)).unwrap();
        bytes[0] = b'X';
        assert!(matches!(read_flo(&bytes), Err(FlowIoError::BadMagic { offset: 0, .. })));
        bytes[0] = b'P';
        let cut = &bytes[..bytes.len() - 5];
        match read_flo(cut) {
            Err(FlowIoError::Truncated { offset, .. }) => assert_eq!(offset, 12 + 40),
            other => panic!("{other:?}"),
        }
        assert!(matches!(read_flo(&bytes[..7]), Err(FlowIoError::Truncated { offset: 4, .. })));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(read_flo(&long), Err(FlowIoError::Trailing { offset: 60 })));
    }

    #[test]
    fn invalid_pixels_survive_as_unknown() {
        let mut f = FlowField::constant(2, 2, 0.5, 0.25);
        f.set_valid(Some(vec![true, false, true, true])).unwrap();
        let back = read_flo(&write_flo(&f).unwrap()).unwrap();
        assert!(back.same_on_valid(&f));
        assert_eq!(back.valid_count(), 3);
    }
}
