//! Forward and backward kernels on raw slices. Backward kernels accumulate
//! into caller-provided gradient buffers.

pub(crate) mod conv;
pub(crate) mod corr;
pub(crate) mod resample;
pub(crate) mod sample;
