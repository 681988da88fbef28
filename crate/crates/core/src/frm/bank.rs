//! Bank files: `<stem>.json` header plus `<stem>.bin` little-endian f32
//! payload of `k · d` values, context-major.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{LowFreqGeometry, LowFreqVector, PriorContextBank};
use crate::error::{FdpError, Result};
use crate::matrix::DataMatrix;
use crate::spectral::idft2_real;
use crate::volume::{min_max_scale, SliceImage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BankHeader {
    pub k: usize,
    #[serde(rename = "H")]
    pub height: usize,
    #[serde(rename = "W")]
    pub width: usize,
    pub m: f64,
    pub n_disk: usize,
    pub d: usize,
    pub seed: u64,
}

pub(crate) fn payload_path(header_path: &Path) -> PathBuf {
    header_path.with_extension("bin")
}

pub(crate) fn write_f32_payload(path: &Path, values: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for &v in values {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub(crate) fn read_f32_payload(path: &Path, expected: usize) -> Result<Vec<f64>> {
    let bytes = fs::read(path)?;
    if bytes.len() != expected * 4 {
        return Err(FdpError::TruncatedPayload);
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect())
}

/// Writes `path` (JSON header) and its sibling `.bin` payload.
pub fn save_bank(bank: &PriorContextBank, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let g = bank.geometry();
    let header = BankHeader {
        k: bank.k(),
        height: g.height,
        width: g.width,
        m: g.m,
        n_disk: g.n_disk,
        d: g.dim(),
        seed: bank.seed,
    };
    fs::write(path, serde_json::to_string_pretty(&header)? + "\n")?;
    write_f32_payload(&payload_path(path), bank.contexts())
}

pub fn load_bank(path: impl AsRef<Path>) -> Result<PriorContextBank> {
    let path = path.as_ref();
    let header: BankHeader = serde_json::from_str(&fs::read_to_string(path)?)?;
    let geometry = LowFreqGeometry::new(header.height, header.width, header.m)?;
    if geometry.n_disk != header.n_disk || geometry.dim() != header.d {
        return Err(FdpError::MalformedHeader(format!(
            "n_disk {} / d {} inconsistent with {}x{} at m = {}",
            header.n_disk, header.d, header.height, header.width, header.m
        )));
    }
    let values = read_f32_payload(&payload_path(path), header.k * header.d)?;
    PriorContextBank::new(geometry, DataMatrix::new(header.k, header.d, values)?, header.seed)
}

/// Context `i` in the spatial domain: high frequencies zeroed, inverse
/// transformed, min-max scaled to `[0, 1]`.
pub fn render_context(bank: &PriorContextBank, i: usize) -> Result<SliceImage> {
    let v = LowFreqVector { geometry: bank.geometry(), values: bank.context(i).to_vec() };
    let img = idft2_real(&v.to_block()?.to_spectrum());
    SliceImage::new(img.height(), img.width(), min_max_scale(img.pixels()))
}
