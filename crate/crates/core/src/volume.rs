//! Image containers, intensity normalization and on-disk formats.
//!
//! Volumes are stored slice-major: voxel `(z, y, x)` lives at
//! `z * H * W + y * W + x`.
//!
//! The `FVOL` layout is little-endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 4 | magic `46 56 4F 4C` |
//! | 4 | u32 version (1) |
//! | 12 | u32 D, H, W |
//! | 1 | u8 has_mask |
//! | 4·D·H·W | f32 voxels |
//! | D·H·W | mask bytes (0/1), only when has_mask = 1 |

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{FdpError, Result};

pub const FVOL_MAGIC: [u8; 4] = *b"FVOL";
pub const FVOL_VERSION: u32 = 1;
const FVOL_HEADER_LEN: usize = 4 + 4 + 12 + 1;
/// Largest voxel count accepted from a file header.
const MAX_VOXELS: u64 = 1 << 31;

/// Volume dimensions `(depth, height, width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub depth: usize,
    pub height: usize,
    pub width: usize,
}

impl Dims {
    pub fn new(depth: usize, height: usize, width: usize) -> Self {
        Self { depth, height, width }
    }

    pub fn len(&self) -> usize {
        self.depth * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn slice_len(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.height + y) * self.width + x
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.depth, self.height, self.width)
    }
}

/// A 3D grid of 32-bit intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: Dims,
    voxels: Vec<f32>,
    pub spacing: Option<[f32; 3]>,
}

impl Volume {
    pub fn new(dims: Dims, voxels: Vec<f32>) -> Result<Self> {
        if dims.depth == 0 || dims.height == 0 || dims.width == 0 {
            return Err(FdpError::InvalidDims(format!("zero extent in {dims}")));
        }
        if voxels.len() != dims.len() {
            return Err(FdpError::InvalidDims(format!(
                "{} voxels for dims {dims}",
                voxels.len()
            )));
        }
        if let Some(bad) = voxels.iter().find(|v| !v.is_finite()) {
            return Err(FdpError::InvalidParameter(format!("non-finite voxel {bad}")));
        }
        Ok(Self { dims, voxels, spacing: None })
    }

    pub fn zeros(dims: Dims) -> Self {
        Self { dims, voxels: vec![0.0; dims.len()], spacing: None }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn voxels(&self) -> &[f32] {
        &self.voxels
    }

    pub fn voxels_mut(&mut self) -> &mut [f32] {
        &mut self.voxels
    }

    pub fn into_voxels(self) -> Vec<f32> {
        self.voxels
    }

    pub fn get(&self, z: usize, y: usize, x: usize) -> f32 {
        self.voxels[self.dims.index(z, y, x)]
    }

    /// Copies slice `z` out as an analysis-precision image.
    pub fn slice(&self, z: usize) -> Result<SliceImage> {
        SliceImage::new(self.dims.height, self.dims.width, self.slice_f64(z))
    }

    fn slice_f64(&self, z: usize) -> Vec<f64> {
        let n = self.dims.slice_len();
        self.voxels[z * n..(z + 1) * n].iter().map(|&v| v as f64).collect()
    }

    pub fn slices(&self) -> Result<Vec<SliceImage>> {
        (0..self.dims.depth).map(|z| self.slice(z)).collect()
    }

    /// Stacks equally sized slices into a volume.
    pub fn from_slices(slices: &[SliceImage]) -> Result<Self> {
        let first = slices.first().ok_or(FdpError::EmptyInput)?;
        let (h, w) = (first.height(), first.width());
        let mut voxels = Vec::with_capacity(slices.len() * h * w);
        for s in slices {
            if s.height() != h || s.width() != w {
                return Err(FdpError::DimMismatch(format!(
                    "slice {}x{} vs {h}x{w}",
                    s.height(),
                    s.width()
                )));
            }
            voxels.extend(s.pixels().iter().map(|&p| p as f32));
        }
        Volume::new(Dims::new(slices.len(), h, w), voxels)
    }
}

/// One 2D slice with even height and width of at least 8.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceImage {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl SliceImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        check_slice_dims(height, width)?;
        if pixels.len() != height * width {
            return Err(FdpError::InvalidDims(format!(
                "{} pixels for {height}x{width}",
                pixels.len()
            )));
        }
        Ok(Self { height, width, pixels })
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![0.0; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / self.pixels.len() as f64
    }

    pub fn same_shape(&self, other: &SliceImage) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Elementwise `self + scale * other`.
    pub fn add_scaled(&self, other: &SliceImage, scale: f64) -> Result<SliceImage> {
        if !self.same_shape(other) {
            return Err(FdpError::DimMismatch(format!(
                "{}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        let pixels = self
            .pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| a + scale * b)
            .collect();
        Ok(SliceImage { height: self.height, width: self.width, pixels })
    }

    pub fn max_abs_diff(&self, other: &SliceImage) -> f64 {
        self.pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

pub(crate) fn check_slice_dims(height: usize, width: usize) -> Result<()> {
    if height < 8 || width < 8 || height % 2 != 0 || width % 2 != 0 {
        return Err(FdpError::InvalidDims(format!(
            "slice {height}x{width} must be even and at least 8x8"
        )));
    }
    Ok(())
}

/// Boolean foreground mask paired with a [`Volume`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BrainMask {
    dims: Dims,
    bits: Vec<bool>,
}

impl BrainMask {
    pub fn new(dims: Dims, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != dims.len() {
            return Err(FdpError::InvalidDims(format!(
                "{} mask bits for dims {dims}",
                bits.len()
            )));
        }
        Ok(Self { dims, bits })
    }

    pub fn empty(dims: Dims) -> Self {
        Self { dims, bits: vec![false; dims.len()] }
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(dims.len());
        for z in 0..dims.depth {
            for y in 0..dims.height {
                for x in 0..dims.width {
                    bits.push(f(z, y, x));
                }
            }
        }
        Self { dims, bits }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn bits_mut(&mut self) -> &mut [bool] {
        &mut self.bits
    }

    pub fn get(&self, z: usize, y: usize, x: usize) -> bool {
        self.bits[self.dims.index(z, y, x)]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_subset_of(&self, other: &BrainMask) -> bool {
        self.dims == other.dims && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    pub fn slice_bits(&self, z: usize) -> &[bool] {
        let n = self.dims.slice_len();
        &self.bits[z * n..(z + 1) * n]
    }
}

/// Scales by the `pct`-th percentile (nearest rank) of the positive
/// voxels and clamps to `[0, 1]`.
pub fn normalize_volume(v: &Volume, pct: f64) -> Result<Volume> {
    if !(pct > 50.0 && pct <= 100.0) {
        return Err(FdpError::InvalidParameter(format!("percentile {pct} not in (50, 100]")));
    }
    let mut positive: Vec<f32> = v.voxels.iter().copied().filter(|&x| x > 0.0).collect();
    if positive.is_empty() {
        return Err(FdpError::EmptyVolume);
    }
    positive.sort_by(f32::total_cmp);
    let rank = ((pct / 100.0) * positive.len() as f64).ceil() as usize;
    let scale = positive[rank.clamp(1, positive.len()) - 1];
    let voxels = v.voxels.iter().map(|&x| (x / scale).clamp(0.0, 1.0)).collect();
    Ok(Volume { dims: v.dims, voxels, spacing: v.spacing })
}

/// Serializes a volume (and optional mask) to `FVOL` bytes.
pub fn encode_volume(v: &Volume, mask: Option<&BrainMask>) -> Result<Vec<u8>> {
    if let Some(m) = mask {
        if m.dims != v.dims {
            return Err(FdpError::DimMismatch(format!("mask {} vs volume {}", m.dims, v.dims)));
        }
    }
    let d = v.dims;
    let to_u32 = |n: usize| u32::try_from(n).map_err(|_| FdpError::DimOverflow);
    let mut out = Vec::with_capacity(FVOL_HEADER_LEN + d.len() * 5);
    out.extend_from_slice(&FVOL_MAGIC);
    out.extend_from_slice(&FVOL_VERSION.to_le_bytes());
    out.extend_from_slice(&to_u32(d.depth)?.to_le_bytes());
    out.extend_from_slice(&to_u32(d.height)?.to_le_bytes());
    out.extend_from_slice(&to_u32(d.width)?.to_le_bytes());
    out.push(mask.is_some() as u8);
    for x in &v.voxels {
        out.extend_from_slice(&x.to_le_bytes());
    }
    if let Some(m) = mask {
        out.extend(m.bits.iter().map(|&b| b as u8));
    }
    Ok(out)
}

/// Parses `FVOL` bytes.
pub fn decode_volume(bytes: &[u8]) -> Result<(Volume, Option<BrainMask>)> {
    if bytes.len() < 4 || bytes[..4] != FVOL_MAGIC {
        return Err(FdpError::BadMagic);
    }
    if bytes.len() < FVOL_HEADER_LEN {
        return Err(FdpError::TruncatedPayload);
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != FVOL_VERSION {
        return Err(FdpError::UnsupportedVersion(version));
    }
    let (depth, height, width) = (word(8), word(12), word(16));
    let has_mask = match bytes[20] {
        0 => false,
        1 => true,
        other => return Err(FdpError::MalformedHeader(format!("has_mask byte {other}"))),
    };
    let count = (depth as u64)
        .checked_mul(height as u64)
        .and_then(|n| n.checked_mul(width as u64))
        .filter(|&n| n <= MAX_VOXELS)
        .ok_or(FdpError::DimOverflow)? as usize;
    let dims = Dims::new(depth as usize, height as usize, width as usize);
    let payload = &bytes[FVOL_HEADER_LEN..];
    let expected = count * 4 + if has_mask { count } else { 0 };
    if payload.len() < expected {
        return Err(FdpError::TruncatedPayload);
    }
    if payload.len() > expected {
        return Err(FdpError::MalformedHeader(format!(
            "{} trailing bytes",
            payload.len() - expected
        )));
    }
    let voxels = payload[..count * 4]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let volume = Volume::new(dims, voxels)?;
    let mask = if has_mask {
        let bits = payload[count * 4..]
            .iter()
            .map(|&b| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(FdpError::MalformedHeader(format!("mask byte {other}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Some(BrainMask::new(dims, bits)?)
    } else {
        None
    };
    Ok((volume, mask))
}

pub fn write_volume(path: impl AsRef<Path>, v: &Volume, mask: Option<&BrainMask>) -> Result<()> {
    let bytes = encode_volume(v, mask)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<(Volume, Option<BrainMask>)> {
    decode_volume(&fs::read(path)?)
}

/// Encodes pixels in `[0, 1]` as a binary 8-bit PGM (`P5`).
pub fn encode_pgm(height: usize, width: usize, pixels: &[f64]) -> Result<Vec<u8>> {
    if pixels.len() != height * width {
        return Err(FdpError::InvalidDims(format!("{} pixels for {height}x{width}", pixels.len())));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    for &p in pixels {
        if !(0.0..=1.0).contains(&p) {
            return Err(FdpError::OutOfRange(p));
        }
        out.push((p * 255.0).round() as u8);
    }
    Ok(out)
}

pub fn export_slice_pgm(path: impl AsRef<Path>, s: &SliceImage) -> Result<()> {
    fs::write(path, encode_pgm(s.height, s.width, &s.pixels)?)?;
    Ok(())
}

/// Min-max scales `pixels` into `[0, 1]`; a constant input maps to zeros.
pub fn min_max_scale(pixels: &[f64]) -> Vec<f64> {
    let lo = pixels.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = pixels.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if !(span > 0.0) {
        return vec![0.0; pixels.len()];
    }
    pixels.iter().map(|&p| ((p - lo) / span).clamp(0.0, 1.0)).collect()
}
