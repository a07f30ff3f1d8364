//! Desk-scale optical flow laboratory.

pub mod arch;
pub mod data;
pub mod experiment;
pub mod io;
pub mod metrics;
pub mod profile;
pub mod seed;
pub mod tensor;
pub mod train;
