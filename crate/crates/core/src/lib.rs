pub mod correlate;
pub mod denoise;
pub mod error;
pub(crate) mod fft;
pub mod fingerprint;
pub mod geometry;
pub mod imagery;
pub mod numeric;
pub mod pipeline;
pub mod plane;
pub mod report;
pub mod search;
pub mod simulator;
