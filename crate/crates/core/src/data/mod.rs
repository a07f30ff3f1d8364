//! Synthetic layered-motion data, augmentation, mixtures and splits.

mod augment;
mod histogram;
mod manifest;
mod mixture;
mod scene;

pub use augment::{augment, crop, erase, vflip, Applied, AugmentPolicy, Rect, ERASE_ASPECT, ERASE_AREA};
pub use histogram::{
    build_splits, motion_histogram, shifted_policy, train_policy, uniform_edges, MotionHistogram, SplitMode, Splits,
};
pub use manifest::{Manifest, ManifestRecord, MANIFEST_VERSION};
pub use mixture::{DatasetMixture, Draw, MixtureSource};
pub use scene::{
    generate_sample, render, Jitter, Layer, Motion, Rendered, SceneSpec, ScenePolicy, Shape, Texture, Wave, MAX_LAYERS,
};

use thiserror::Error;

use crate::io::{FlowField, FlowIoError};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid scene policy: {0}")]
    Policy(String),
    #[error("invalid frame size {height}x{width}")]
    Size { height: usize, width: usize },
    #[error("layer {0} stays empty after regeneration")]
    DegenerateLayer(usize),
    #[error("crop {crop:?} does not fit frame {frame:?}")]
    Crop { crop: (usize, usize), frame: (usize, usize) },
    #[error("{name} probability {value} outside [0, 1]")]
    Probability { name: &'static str, value: f64 },
    #[error("invalid mixture: {0}")]
    Mixture(String),
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("record {index}: scene fingerprint {got} does not match {expected}")]
    Fingerprint { index: u64, expected: String, got: String },
    #[error("{0}")]
    Histogram(String),
    #[error("empty sample set")]
    Empty,
    #[error(transparent)]
    Io(#[from] FlowIoError),
}

/// Two frames in `[0, 1]` with layout `[3, H, W]` and the GT flow; synthetic
/// samples are valid everywhere.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowSample {
    pub frame1: Tensor<f32>,
    pub frame2: Tensor<f32>,
    pub flow: FlowField,
}

impl FlowSample {
    /// `(height, width)`.
    pub fn size(&self) -> (usize, usize) {
        (self.flow.height(), self.flow.width())
    }
}

/// `(frame1, frame2, flow)` batch tensors.
pub type Batch = (Tensor<f32>, Tensor<f32>, Tensor<f32>);

/// Stacks samples into `[N, 3, H, W]` frame tensors and a `[N, 2, H, W]` flow.
pub fn batch(samples: &[&FlowSample]) -> Result<Batch, DataError> {
    let first = samples.first().ok_or(DataError::Empty)?;
    let (h, w) = first.size();
    let n = samples.len();
    let mut f1 = Vec::with_capacity(n * 3 * h * w);
    let mut f2 = Vec::with_capacity(n * 3 * h * w);
    let mut fl = Vec::with_capacity(n * 2 * h * w);
    for s in samples {
        if s.size() != (h, w) {
            return Err(DataError::Size {
                height: s.size().0,
                width: s.size().1,
            });
        }
        f1.extend_from_slice(s.frame1.data());
        f2.extend_from_slice(s.frame2.data());
        fl.extend_from_slice(&s.flow.to_planar());
    }
    let t = |c, d| Tensor::from_vec([n, c, h, w], d).expect("batch length matches");
    Ok((t(3, f1), t(3, f2), t(2, fl)))
}
