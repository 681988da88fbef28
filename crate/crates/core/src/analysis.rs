//! Frequency-domain evidence on cohorts: the high-pass DICE sweep, band-wise
//! low-frequency dispersion, PCA variance ratios and the Levina–Bickel
//! intrinsic-dimension estimate.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{FdpError, Result};
use crate::evaluation::{greedy_threshold, EvalCase, SlicePolicy, DEFAULT_GRID_SIZE};
use crate::matrix::{squared_distance, DataMatrix};
use crate::par::*;
use crate::pipeline::AnomalyMap;
use crate::spectral::{build_filter, dft2_centered, highfreq_image, Spectrum};
use crate::volume::{BrainMask, SliceImage, Volume};

pub const DEFAULT_SWEEP_GRID: [f64; 5] = [0.01, 0.05, 0.10, 0.20, 0.30];
pub const DEFAULT_DISPERSION_BANDS: [f64; 6] = [0.0, 0.02, 0.05, 0.10, 0.20, 0.30];

/// A lesioned volume with its ground truth and the area searched.
#[derive(Debug, Clone, Copy)]
pub struct SweepSample<'a> {
    pub volume: &'a Volume,
    pub lesion: &'a BrainMask,
    pub area: &'a BrainMask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCurve {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub volumes: usize,
    pub lesion_slices: usize,
}

/// `|I_h|` of every slice of `v` at cutoff `m`.
pub fn highfreq_magnitude(v: &Volume, m: f64) -> Result<AnomalyMap> {
    let d = v.dims();
    let mut scores = Vec::with_capacity(d.len());
    for s in v.slices()? {
        scores.extend(highfreq_image(&s, m)?.pixels().iter().map(|p| p.abs() as f32));
    }
    AnomalyMap::new(d, scores)
}

/// Best achievable lesion-slice DICE of `|I_h|` for each `m` in `grid`.
pub fn freq_sweep_dice(samples: &[SweepSample<'_>], grid: &[f64]) -> Result<SweepCurve> {
    if grid.is_empty() {
        return Err(FdpError::InvalidParameter("empty m grid".into()));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) || grid.iter().any(|&m| !(m > 0.0 && m <= 0.5)) {
        return Err(FdpError::InvalidParameter("m grid must be strictly increasing within (0, 0.5]".into()));
    }
    if samples.is_empty() {
        return Err(FdpError::EmptyInput);
    }
    let lesion_slices = samples
        .iter()
        .map(|s| (0..s.lesion.dims().depth).filter(|&z| s.lesion.slice_bits(z).iter().any(|&b| b)).count())
        .sum();
    if lesion_slices == 0 {
        return Err(FdpError::EmptyLesions);
    }
    let mut values = Vec::with_capacity(grid.len());
    let mut thresholds = Vec::with_capacity(grid.len());
    for &m in grid {
        let maps = samples
            .par_iter()
            .map(|s| highfreq_magnitude(s.volume, m))
            .collect::<Result<Vec<_>>>()?;
        let cases: Vec<EvalCase<'_>> = maps
            .iter()
            .zip(samples)
            .map(|(scores, s)| EvalCase { scores, lesion: s.lesion, area: s.area })
            .collect();
        let best = greedy_threshold(&cases, DEFAULT_GRID_SIZE, SlicePolicy::LesionSlices)?;
        values.push(best.best_dice);
        thresholds.push(best.threshold);
    }
    Ok(SweepCurve { grid: grid.to_vec(), values, thresholds, volumes: samples.len(), lesion_slices })
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(FdpError::InvalidParameter("spearman needs two equal-length series of length ≥ 2".into()));
    }
    let ra = ranks(a);
    let rb = ranks(b);
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(FdpError::ZeroVariance);
    }
    Ok(cov / (va * vb).sqrt())
}

fn ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CohortBandStats {
    pub mean_real: f64,
    pub std_real: f64,
    pub mean_imag: f64,
    pub std_imag: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandStats {
    pub m_lo: f64,
    pub m_hi: f64,
    /// Coefficients in the band's non-redundant half plane.
    pub points: usize,
    pub healthy: CohortBandStats,
    pub lesioned: CohortBandStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispersionStats {
    pub bands: Vec<BandStats>,
    pub healthy_slices: usize,
    pub lesioned_slices: usize,
}

fn slog(x: f64) -> f64 {
    x.signum() * x.abs().ln_1p()
}

/// Band membership of the non-redundant half plane: frequencies with
/// `fy > 0`, or `fy == 0 && fx >= 0`. The other half carries conjugates,
/// which would cancel the imaginary mean.
fn band_points(h: usize, w: usize, lo: f64, hi: f64, first: bool) -> Result<Vec<(usize, usize)>> {
    let outer = build_filter(h, w, hi)?;
    let inner = (!first).then(|| build_filter(h, w, lo)).transpose()?;
    Ok(outer
        .stopped_points()
        .into_iter()
        .filter(|&(u, v)| inner.is_none_or(|f| !f.stops(u, v)))
        .filter(|&(u, v)| {
            let (fy, fx) = (u as i64 - (h / 2) as i64, v as i64 - (w / 2) as i64);
            fy > 0 || (fy == 0 && fx >= 0)
        })
        .collect())
}

fn band_statistic(f: &Spectrum, points: &[(usize, usize)]) -> (f64, f64) {
    let n = points.len().max(1) as f64;
    let (mut re, mut im) = (0.0, 0.0);
    for &(u, v) in points {
        let c = f.get(u, v);
        re += slog(c.re);
        im += slog(c.im);
    }
    (re / n, im / n)
}

fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Cohort dispersion of the signed-log band means. `edges` are increasing
/// m values; band `i` is the annulus `(edges[i], edges[i+1]]`, the first
/// band including the DC term. Each band statistic is divided by its
/// largest magnitude across both cohorts.
pub fn lowfreq_dispersion(healthy: &[SliceImage], lesioned: &[SliceImage], edges: &[f64]) -> Result<DispersionStats> {
    if healthy.is_empty() || lesioned.is_empty() {
        return Err(FdpError::EmptyInput);
    }
    if edges.len() < 2 || edges.windows(2).any(|w| w[0] >= w[1]) || edges[0] < 0.0 {
        return Err(FdpError::InvalidParameter("band edges must be increasing and non-negative".into()));
    }
    let (h, w) = (healthy[0].height(), healthy[0].width());
    if let Some(s) = healthy.iter().chain(lesioned).find(|s| s.height() != h || s.width() != w) {
        return Err(FdpError::DimMismatch(format!("{h}x{w} vs {}x{}", s.height(), s.width())));
    }
    let bands: Vec<Vec<(usize, usize)>> = edges
        .windows(2)
        .enumerate()
        .map(|(i, e)| band_points(h, w, e[0], e[1], i == 0))
        .collect::<Result<_>>()?;
    let stats = |cohort: &[SliceImage]| -> Vec<Vec<(f64, f64)>> {
        cohort
            .par_iter()
            .map(|s| {
                let f = dft2_centered(s);
                bands.iter().map(|p| band_statistic(&f, p)).collect()
            })
            .collect()
    };
    let hs = stats(healthy);
    let ls = stats(lesioned);
    let mut out = Vec::with_capacity(bands.len());
    for (b, points) in bands.iter().enumerate() {
        let summarize = |part: fn(&(f64, f64)) -> f64| {
            let scale = hs.iter().chain(&ls).map(|s| part(&s[b]).abs()).fold(0.0, f64::max);
            let norm = |cohort: &[Vec<(f64, f64)>]| -> Vec<f64> {
                cohort.iter().map(|s| if scale > 0.0 { part(&s[b]) / scale } else { 0.0 }).collect()
            };
            (mean_std(&norm(&hs)), mean_std(&norm(&ls)))
        };
        let ((hr_m, hr_s), (lr_m, lr_s)) = summarize(|s| s.0);
        let ((hi_m, hi_s), (li_m, li_s)) = summarize(|s| s.1);
        out.push(BandStats {
            m_lo: edges[b],
            m_hi: edges[b + 1],
            points: points.len(),
            healthy: CohortBandStats { mean_real: hr_m, std_real: hr_s, mean_imag: hi_m, std_imag: hi_s },
            lesioned: CohortBandStats { mean_real: lr_m, std_real: lr_s, mean_imag: li_m, std_imag: li_s },
        });
    }
    Ok(DispersionStats { bands: out, healthy_slices: healthy.len(), lesioned_slices: lesioned.len() })
}

/// Slice pairs for [`lowfreq_dispersion`]: for lesioned volume `i`, the
/// slice with the largest lesion area (lowest index on ties), and the same
/// slice index from healthy volume `i mod n`. Pairing by index keeps the
/// two cohorts at matching anatomical positions.
pub fn paired_slices(healthy: &[Volume], lesioned: &[(&Volume, &BrainMask)]) -> Result<(Vec<SliceImage>, Vec<SliceImage>)> {
    if healthy.is_empty() || lesioned.is_empty() {
        return Err(FdpError::EmptyInput);
    }
    let mut hs = Vec::with_capacity(lesioned.len());
    let mut ls = Vec::with_capacity(lesioned.len());
    for (i, (v, mask)) in lesioned.iter().enumerate() {
        let h = &healthy[i % healthy.len()];
        if h.dims() != v.dims() || mask.dims() != v.dims() {
            return Err(FdpError::DimMismatch(format!("{} vs {}", h.dims(), v.dims())));
        }
        let area = |z: usize| mask.slice_bits(z).iter().filter(|&&b| b).count();
        let mut best = 0;
        for z in 1..v.dims().depth {
            if area(z) > area(best) {
                best = z;
            }
        }
        if area(best) == 0 {
            return Err(FdpError::EmptyLesions);
        }
        ls.push(v.slice(best)?);
        hs.push(h.slice(best)?);
    }
    Ok((hs, ls))
}

/// Explained-variance ratios of the centered rows, descending. Uses the
/// smaller of the Gram and covariance matrices; both share the nonzero
/// spectrum.
pub fn pca_variance(data: &DataMatrix) -> Result<Vec<f64>> {
    let (n, d) = (data.rows(), data.cols());
    if n < 2 {
        return Err(FdpError::InvalidParameter("pca_variance needs at least two rows".into()));
    }
    let mean = data.column_mean();
    let xc = DMatrix::from_fn(n, d, |i, j| data.row(i)[j] - mean[j]);
    let small = if n <= d { &xc * xc.transpose() } else { xc.transpose() * &xc };
    let mut eig: Vec<f64> = small.symmetric_eigen().eigenvalues.iter().map(|&l| l.max(0.0)).collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = eig.iter().sum();
    if !(total > 0.0) {
        return Err(FdpError::ZeroVariance);
    }
    Ok(eig.iter().map(|l| l / total).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn of(values: &[f64], bins: usize) -> Self {
        let bins = bins.max(1);
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (lo, hi) = if values.is_empty() { (0.0, 1.0) } else if lo == hi { (lo - 0.5, hi + 0.5) } else { (lo, hi) };
        let width = (hi - lo) / bins as f64;
        let edges = (0..=bins).map(|i| lo + i as f64 * width).collect();
        let mut counts = vec![0; bins];
        for &v in values {
            let b = (((v - lo) / width) as usize).min(bins - 1);
            counts[b] += 1;
        }
        Self { edges, counts }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicDim {
    pub k: usize,
    pub estimates: Vec<f64>,
    pub mean: f64,
    pub histogram: Histogram,
}

pub const INTRINSIC_DIM_BINS: usize = 20;

/// Levina–Bickel estimate per point from exact `k` nearest neighbors:
/// `[ (1/(k−1)) Σ_{j<k} ln(T_k / T_j) ]^{-1}`.
pub fn intrinsic_dim_mle(data: &DataMatrix, k: usize) -> Result<IntrinsicDim> {
    let n = data.rows();
    if k < 3 || n <= k {
        return Err(FdpError::InvalidParameter(format!("need N > k >= 3, got N={n}, k={k}")));
    }
    let estimates = (0..n)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let x = data.row(i);
            let mut dist: Vec<f64> = (0..n)
                .filter(|&j| j != i)
                .map(|j| squared_distance(x, data.row(j)))
                .collect();
            dist.select_nth_unstable_by(k - 1, f64::total_cmp);
            let near = &mut dist[..k];
            near.sort_by(f64::total_cmp);
            if near[0] == 0.0 {
                return Err(FdpError::ZeroNeighborDistance);
            }
            let tk = near[k - 1].sqrt();
            let s: f64 = near[..k - 1].iter().map(|&t| (tk / t.sqrt()).ln()).sum::<f64>() / (k - 1) as f64;
            if s == 0.0 {
                return Err(FdpError::DegenerateData);
            }
            Ok(1.0 / s)
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = estimates.iter().sum::<f64>() / n as f64;
    let histogram = Histogram::of(&estimates, INTRINSIC_DIM_BINS);
    Ok(IntrinsicDim { k, estimates, mean, histogram })
}
