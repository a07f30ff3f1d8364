//! Flow interchange formats and visualization.

mod color;
mod field;
mod flo;
mod image;
mod kitti;

pub use color::{flow_to_color, wheel_color, COLOR_WHEEL_SEGMENTS};
pub use field::FlowField;
pub use flo::{read_flo, write_flo, FLO_MAGIC, UNKNOWN_FLOW};
pub use image::{decode_png8, write_png8, write_ppm, RgbImage};
pub use kitti::{read_kitti_png, write_kitti_png, KITTI_OFFSET, KITTI_SCALE};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FlowIoError {
    #[error("bad magic at byte offset {offset}: expected {expected:?}")]
    BadMagic { offset: usize, expected: &'static str },
    #[error("truncated payload at byte offset {offset}: need {needed} bytes, have {available}")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("trailing data at byte offset {offset}")]
    Trailing { offset: usize },
    #[error("invalid dimensions {width}x{height}")]
    Dimensions { width: i64, height: i64 },
    #[error("field arrays do not match {width}x{height}")]
    Layout { width: usize, height: usize },
    #[error("non-finite flow at valid pixel ({x}, {y})")]
    NonFinite { x: usize, y: usize },
    #[error("flow ({u}, {v}) at ({x}, {y}) is outside the encodable range")]
    OutOfRange { x: usize, y: usize, u: f32, v: f32 },
    #[error("unsupported png: {0}")]
    UnsupportedPng(String),
    #[error("png: {0}")]
    Png(String),
}
