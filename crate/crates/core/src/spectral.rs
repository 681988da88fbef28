//! Centered 2D DFT, the ideal high-pass filter and low/high splitting.
//!
//! Spectra use the centered convention: the DC coefficient sits at
//! `(H/2, W/2)`, and the un-centered frequency index `u` maps to row
//! `(u + H/2) mod H`.

use std::cell::RefCell;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{FdpError, Result};
use crate::volume::{check_slice_dims, SliceImage};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(len)
        } else {
            p.plan_fft_forward(len)
        }
    })
}

/// Centered complex frequency grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    height: usize,
    width: usize,
    coeffs: Vec<Complex64>,
}

impl Spectrum {
    pub fn new(height: usize, width: usize, coeffs: Vec<Complex64>) -> Result<Self> {
        check_slice_dims(height, width)?;
        if coeffs.len() != height * width {
            return Err(FdpError::InvalidDims(format!(
                "{} coefficients for {height}x{width}",
                coeffs.len()
            )));
        }
        Ok(Self { height, width, coeffs })
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![Complex64::new(0.0, 0.0); height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    /// Coefficient at centered position `(u, v)`.
    pub fn get(&self, u: usize, v: usize) -> Complex64 {
        self.coeffs[u * self.width + v]
    }

    pub fn dc(&self) -> Complex64 {
        self.get(self.height / 2, self.width / 2)
    }

    pub fn energy(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }

    /// Largest deviation from conjugate symmetry, relative to the largest
    /// coefficient magnitude.
    pub fn hermitian_defect(&self) -> f64 {
        let (h, w) = (self.height, self.width);
        let scale = self.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let mut worst = 0.0f64;
        for u in 0..h {
            for v in 0..w {
                // Centered (u, v) mirrors to centered (H - u, W - v) mod size.
                let mu = (h - u) % h;
                let mv = (w - v) % w;
                let d = (self.get(u, v) - self.get(mu, mv).conj()).norm();
                worst = worst.max(d);
            }
        }
        worst / scale
    }
}

fn fft2_in_place(buf: &mut [Complex64], height: usize, width: usize, inverse: bool) {
    plan(width, inverse).process(buf);
    let mut t = vec![Complex64::new(0.0, 0.0); buf.len()];
    for y in 0..height {
        for x in 0..width {
            t[x * height + y] = buf[y * width + x];
        }
    }
    plan(height, inverse).process(&mut t);
    for x in 0..width {
        for y in 0..height {
            buf[y * width + x] = t[x * height + y];
        }
    }
}

/// Swaps quadrants; self-inverse for even dimensions.
fn shift_quadrants(buf: &[Complex64], height: usize, width: usize) -> Vec<Complex64> {
    let (hh, hw) = (height / 2, width / 2);
    let mut out = vec![Complex64::new(0.0, 0.0); buf.len()];
    for y in 0..height {
        let sy = (y + hh) % height;
        for x in 0..width {
            out[sy * width + (x + hw) % width] = buf[y * width + x];
        }
    }
    out
}

/// Forward 2D DFT with DC moved to `(H/2, W/2)`.
pub fn dft2_centered(s: &SliceImage) -> Spectrum {
    let (h, w) = (s.height(), s.width());
    let mut buf: Vec<Complex64> = s.pixels().iter().map(|&p| Complex64::new(p, 0.0)).collect();
    fft2_in_place(&mut buf, h, w, false);
    Spectrum { height: h, width: w, coeffs: shift_quadrants(&buf, h, w) }
}

/// Inverse transform with `1/(HW)` scaling. Returns the real part and the
/// energy of the discarded imaginary part.
pub fn idft2_with_residual(f: &Spectrum) -> (SliceImage, f64) {
    let (h, w) = (f.height, f.width);
    let mut buf = shift_quadrants(&f.coeffs, h, w);
    fft2_in_place(&mut buf, h, w, true);
    let scale = 1.0 / (h * w) as f64;
    let mut imag_energy = 0.0;
    let pixels = buf
        .iter()
        .map(|c| {
            imag_energy += (c.im * scale).powi(2);
            c.re * scale
        })
        .collect();
    let image = SliceImage::new(h, w, pixels).expect("spectrum dims are valid slice dims");
    (image, imag_energy)
}

pub fn idft2_real(f: &Spectrum) -> SliceImage {
    idft2_with_residual(f).0
}

/// Ideal high-pass filter geometry with cutoff `D0 = min(m·H, m·W)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HighpassFilterSpec {
    pub m: f64,
    pub height: usize,
    pub width: usize,
    pub cutoff: f64,
}

impl HighpassFilterSpec {
    /// Distance of centered position `(u, v)` from the frequency origin.
    pub fn distance(&self, u: usize, v: usize) -> f64 {
        let du = u as f64 - (self.height / 2) as f64;
        let dv = v as f64 - (self.width / 2) as f64;
        (du * du + dv * dv).sqrt()
    }

    /// Filter value 0: the point belongs to the low-frequency disk.
    pub fn stops(&self, u: usize, v: usize) -> bool {
        self.distance(u, v) <= self.cutoff
    }

    /// Stopped positions in ascending `(u, v)` order.
    pub fn stopped_points(&self) -> Vec<(usize, usize)> {
        let (hh, hw) = (self.height / 2, self.width / 2);
        let r = self.cutoff.floor() as usize;
        let mut pts = Vec::new();
        for u in hh.saturating_sub(r)..(hh + r + 1).min(self.height) {
            for v in hw.saturating_sub(r)..(hw + r + 1).min(self.width) {
                if self.stops(u, v) {
                    pts.push((u, v));
                }
            }
        }
        pts
    }

    pub fn stopped_count(&self) -> usize {
        self.stopped_points().len()
    }

    pub fn same_geometry(&self, other: &HighpassFilterSpec) -> bool {
        self.height == other.height && self.width == other.width && self.m == other.m
    }
}

pub fn build_filter(height: usize, width: usize, m: f64) -> Result<HighpassFilterSpec> {
    if !(0.0..=1.0).contains(&m) {
        return Err(FdpError::InvalidParameter(format!("threshold m = {m} not in [0, 1]")));
    }
    check_slice_dims(height, width)?;
    let cutoff = (m * height as f64).min(m * width as f64);
    Ok(HighpassFilterSpec { m, height, width, cutoff })
}

/// Coefficients of the low-frequency disk, in canonical `(u, v)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct LowBlock {
    pub filter: HighpassFilterSpec,
    pub points: Vec<(usize, usize)>,
    pub values: Vec<Complex64>,
}

impl LowBlock {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zeroed(&self) -> LowBlock {
        LowBlock { values: vec![Complex64::new(0.0, 0.0); self.values.len()], ..self.clone() }
    }

    /// Full spectrum holding only this block.
    pub fn to_spectrum(&self) -> Spectrum {
        let mut s = Spectrum::zeros(self.filter.height, self.filter.width)
            .expect("filter dims are valid slice dims");
        for (&(u, v), &c) in self.points.iter().zip(&self.values) {
            s.coeffs[u * s.width + v] = c;
        }
        s
    }

    /// Interleaved `re, im` values.
    pub fn to_interleaved(&self) -> Vec<f64> {
        self.values.iter().flat_map(|c| [c.re, c.im]).collect()
    }

    pub fn from_interleaved(filter: HighpassFilterSpec, values: &[f64]) -> Result<LowBlock> {
        let points = filter.stopped_points();
        if values.len() != 2 * points.len() {
            return Err(FdpError::GeometryMismatch(format!(
                "{} values for a {}-point disk",
                values.len(),
                points.len()
            )));
        }
        let values = values.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect();
        Ok(LowBlock { filter, points, values })
    }
}

/// A spectrum split into its low-frequency disk and high-frequency remainder.
#[derive(Debug, Clone, PartialEq)]
pub struct FreqDecomposition {
    pub low: LowBlock,
    pub high: Spectrum,
    pub filter: HighpassFilterSpec,
}

pub fn decompose_spectrum(f: &Spectrum, m: f64) -> Result<FreqDecomposition> {
    let filter = build_filter(f.height, f.width, m)?;
    let points = filter.stopped_points();
    let mut high = f.clone();
    let mut values = Vec::with_capacity(points.len());
    for &(u, v) in &points {
        let idx = u * f.width + v;
        values.push(f.coeffs[idx]);
        high.coeffs[idx] = Complex64::new(0.0, 0.0);
    }
    Ok(FreqDecomposition { low: LowBlock { filter, points, values }, high, filter })
}

pub fn decompose(s: &SliceImage, m: f64) -> Result<FreqDecomposition> {
    decompose_spectrum(&dft2_centered(s), m)
}

/// Writes `low` back into `high` at its disk positions.
pub fn merge(low: &LowBlock, high: &Spectrum, filter: &HighpassFilterSpec) -> Result<Spectrum> {
    if !low.filter.same_geometry(filter) {
        return Err(FdpError::GeometryMismatch(format!(
            "low block built for m = {} on {}x{}, expected m = {} on {}x{}",
            low.filter.m, low.filter.height, low.filter.width, filter.m, filter.height, filter.width
        )));
    }
    if high.height != filter.height || high.width != filter.width {
        return Err(FdpError::GeometryMismatch(format!(
            "spectrum {}x{} vs filter {}x{}",
            high.height, high.width, filter.height, filter.width
        )));
    }
    if low.points.len() != low.values.len() {
        return Err(FdpError::GeometryMismatch("low block points/values length".into()));
    }
    let mut out = high.clone();
    for (&(u, v), &c) in low.points.iter().zip(&low.values) {
        out.coeffs[u * out.width + v] = c;
    }
    Ok(out)
}

impl FreqDecomposition {
    pub fn merge_with(&self, low: &LowBlock) -> Result<Spectrum> {
        merge(low, &self.high, &self.filter)
    }
}

/// Spatial image of the high-frequency part; may be negative.
pub fn highfreq_image(s: &SliceImage, m: f64) -> Result<SliceImage> {
    Ok(idft2_real(&decompose(s, m)?.high))
}
