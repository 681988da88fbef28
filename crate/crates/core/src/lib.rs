//! Frequency-decomposition preprocessing for reconstruction-based anomaly
//! detection in volumetric images.
//!
//! Each slice is split in the centered Fourier domain into a low-frequency
//! disk and a high-frequency remainder. The disk is replaced by an
//! attention readout over a bank of healthy low-frequency prior contexts,
//! the spectrum is merged and inverted, and a healthy-image reconstructor
//! maps the result back to image space. The high-frequency image is added
//! to the output, and anomaly scores are absolute residuals.

pub mod analysis;
pub mod error;
pub mod evaluation;
pub mod frm;
pub mod matrix;
pub mod par;
pub mod phantom;
pub mod pipeline;
pub mod reconstructor;
pub mod spectral;
pub mod volume;

pub use error::{FdpError, Result};
