//! Segmentation metrics, post-processing and threshold search.
//!
//! Post-processing order: 3D mean filter on the score maps, erosion of the
//! brain mask (the eroded mask is the effective area), greedy threshold
//! search on the validation cases, then metrics on the test cases. A voxel
//! is predicted anomalous when its score is `>=` the threshold.

use serde::{Deserialize, Serialize};

use crate::error::{FdpError, Result};
use crate::par::*;
use crate::pipeline::AnomalyMap;
use crate::volume::{BrainMask, Dims};

pub const DEFAULT_FILTER_KERNEL: usize = 5;
pub const DEFAULT_EROSION_ITERS: usize = 3;
pub const DEFAULT_GRID_SIZE: usize = 100;

/// `2|A∩B| / (|A|+|B|)`, with two empty masks scoring 1.
pub fn dice(pred: &[bool], gt: &[bool]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(FdpError::DimMismatch(format!("{} vs {} voxels", pred.len(), gt.len())));
    }
    let (mut a, mut b, mut both) = (0usize, 0usize, 0usize);
    for (&p, &g) in pred.iter().zip(gt) {
        a += p as usize;
        b += g as usize;
        both += (p && g) as usize;
    }
    if a + b == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (a + b) as f64)
}

/// Groups `(score, label)` pairs by equal score, ascending. Each entry is
/// `(positives, negatives)` for one distinct score.
fn tie_groups(scores: &[f64], labels: &[bool]) -> Result<Vec<(u64, u64)>> {
    if scores.len() != labels.len() {
        return Err(FdpError::DimMismatch(format!("{} scores vs {} labels", scores.len(), labels.len())));
    }
    if let Some(bad) = scores.iter().find(|s| s.is_nan()) {
        return Err(FdpError::InvalidParameter(format!("score {bad}")));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut groups: Vec<(u64, u64)> = Vec::new();
    let mut last = None;
    for i in idx {
        // -0.0 and 0.0 are one tie group.
        if last != Some(scores[i]) {
            groups.push((0, 0));
            last = Some(scores[i]);
        }
        let g = groups.last_mut().unwrap();
        if labels[i] {
            g.0 += 1;
        } else {
            g.1 += 1;
        }
    }
    Ok(groups)
}

/// Mann–Whitney probability that a positive outranks a negative, ties ½.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let groups = tie_groups(scores, labels)?;
    let (pos, neg) = groups.iter().fold((0, 0), |(p, n), g| (p + g.0, n + g.1));
    if pos == 0 || neg == 0 {
        return Err(FdpError::UndefinedAuroc);
    }
    // Doubled Mann–Whitney U, kept integral.
    let mut twice_u: u128 = 0;
    let mut neg_below: u128 = 0;
    for &(p, n) in &groups {
        twice_u += p as u128 * (2 * neg_below + n as u128);
        neg_below += n as u128;
    }
    Ok(twice_u as f64 / (2 * pos as u128 * neg as u128) as f64)
}

/// Average precision `Σ (R_n − R_{n−1}) P_n` over descending distinct scores.
pub fn auprc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let groups = tie_groups(scores, labels)?;
    let pos: u64 = groups.iter().map(|g| g.0).sum();
    if pos == 0 {
        return Err(FdpError::UndefinedAuprc);
    }
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut ap = 0.0;
    for &(p, n) in groups.iter().rev() {
        tp += p;
        fp += n;
        if p > 0 {
            ap += (p as f64 / pos as f64) * (tp as f64 / (tp + fp) as f64);
        }
    }
    Ok(ap)
}

fn box_pass(src: &[f64], dims: Dims, axis: usize, radius: usize) -> Vec<f64> {
    let (d, h, w) = (dims.depth, dims.height, dims.width);
    let (len, stride) = match axis {
        0 => (d, h * w),
        1 => (h, w),
        _ => (w, 1),
    };
    let r = radius as isize;
    let mut out = vec![0.0; src.len()];
    for (i, o) in out.iter_mut().enumerate() {
        let pos = (i / stride) % len;
        let base = i - pos * stride;
        let mut acc = 0.0;
        for off in -r..=r {
            let p = (pos as isize + off).clamp(0, len as isize - 1) as usize;
            acc += src[base + p * stride];
        }
        *o = acc;
    }
    out
}

/// Mean over the `k³` neighborhood with replicated borders.
pub fn mean_filter_3d(map: &AnomalyMap, k: usize) -> Result<AnomalyMap> {
    if k % 2 == 0 {
        return Err(FdpError::InvalidParameter(format!("mean filter kernel {k} must be odd")));
    }
    let dims = map.dims();
    let radius = k / 2;
    let src: Vec<f64> = map.scores().iter().map(|&s| s as f64).collect();
    let a = box_pass(&src, dims, 2, radius);
    let b = box_pass(&a, dims, 1, radius);
    let c = box_pass(&b, dims, 0, radius);
    let norm = 1.0 / (k * k * k) as f64;
    AnomalyMap::new(dims, c.into_iter().map(|x| (x * norm) as f32).collect())
}

/// Iterated erosion with the 6-connected cross; outside the grid is false.
pub fn erode_mask(mask: &BrainMask, iters: usize) -> BrainMask {
    let dims = mask.dims();
    let (d, h, w) = (dims.depth, dims.height, dims.width);
    let mut cur = mask.clone();
    for _ in 0..iters {
        let next = BrainMask::from_fn(dims, |z, y, x| {
            cur.get(z, y, x)
                && z > 0
                && z + 1 < d
                && y > 0
                && y + 1 < h
                && x > 0
                && x + 1 < w
                && cur.get(z - 1, y, x)
                && cur.get(z + 1, y, x)
                && cur.get(z, y - 1, x)
                && cur.get(z, y + 1, x)
                && cur.get(z, y, x - 1)
                && cur.get(z, y, x + 1)
        });
        cur = next;
    }
    cur
}

/// Which slices enter the per-volume DICE average.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SlicePolicy {
    /// Every slice with a nonempty effective area; empty prediction on
    /// empty ground truth scores 1.
    AllSlices,
    /// Only slices whose ground truth intersects the effective area.
    LesionSlices,
}

/// One scored volume with its lesion ground truth and effective area.
#[derive(Debug, Clone, Copy)]
pub struct EvalCase<'a> {
    pub scores: &'a AnomalyMap,
    pub lesion: &'a BrainMask,
    pub area: &'a BrainMask,
}

impl EvalCase<'_> {
    fn check(&self) -> Result<()> {
        let d = self.scores.dims();
        if self.lesion.dims() != d || self.area.dims() != d {
            return Err(FdpError::DimMismatch(format!(
                "scores {d}, lesion {}, area {}",
                self.lesion.dims(),
                self.area.dims()
            )));
        }
        Ok(())
    }

    /// In-area `(score, label)` vectors of slice `z`.
    fn slice_values(&self, z: usize) -> (Vec<f64>, Vec<bool>) {
        let n = self.scores.dims().slice_len();
        let s = &self.scores.scores()[z * n..(z + 1) * n];
        let g = self.lesion.slice_bits(z);
        let a = self.area.slice_bits(z);
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            if a[i] {
                scores.push(s[i] as f64);
                labels.push(g[i]);
            }
        }
        (scores, labels)
    }

    fn has_lesion(&self) -> bool {
        self.lesion.bits().iter().zip(self.area.bits()).any(|(&g, &a)| g && a)
    }
}

fn slice_dice(scores: &[f64], labels: &[bool], threshold: f64) -> f64 {
    let (mut a, mut b, mut both) = (0usize, 0usize, 0usize);
    for (&s, &g) in scores.iter().zip(labels) {
        let p = s >= threshold;
        a += p as usize;
        b += g as usize;
        both += (p && g) as usize;
    }
    if a + b == 0 {
        1.0
    } else {
        2.0 * both as f64 / (a + b) as f64
    }
}

/// Mean per-slice DICE of one volume; `None` when no slice qualifies.
pub fn volume_dice(case: &EvalCase<'_>, threshold: f64, policy: SlicePolicy) -> Result<Option<f64>> {
    case.check()?;
    let mut total = 0.0;
    let mut count = 0usize;
    for z in 0..case.scores.dims().depth {
        let (scores, labels) = case.slice_values(z);
        if scores.is_empty() {
            continue;
        }
        if policy == SlicePolicy::LesionSlices && !labels.iter().any(|&l| l) {
            continue;
        }
        total += slice_dice(&scores, &labels, threshold);
        count += 1;
    }
    Ok((count > 0).then(|| total / count as f64))
}

/// Mean over cases of [`volume_dice`].
pub fn mean_dice(cases: &[EvalCase<'_>], threshold: f64, policy: SlicePolicy) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for c in cases {
        if let Some(d) = volume_dice(c, threshold, policy)? {
            total += d;
            count += 1;
        }
    }
    if count == 0 {
        return Err(FdpError::EmptyInput);
    }
    Ok(total / count as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSearchResult {
    pub threshold: f64,
    pub best_dice: f64,
    pub grid: Vec<f64>,
    pub dice: Vec<f64>,
}

/// Candidate thresholds: `grid_size` evenly spaced nearest-rank quantiles
/// of the pooled in-area scores (minimum through maximum), deduplicated.
pub fn quantile_grid(cases: &[EvalCase<'_>], grid_size: usize) -> Result<Vec<f64>> {
    if grid_size == 0 {
        return Err(FdpError::InvalidParameter("grid_size must be at least 1".into()));
    }
    let mut pooled: Vec<f64> = Vec::new();
    for c in cases {
        c.check()?;
        pooled.extend(
            c.scores
                .scores()
                .iter()
                .zip(c.area.bits())
                .filter(|(_, &a)| a)
                .map(|(&s, _)| s as f64),
        );
    }
    if pooled.is_empty() {
        return Err(FdpError::EmptyInput);
    }
    pooled.sort_by(f64::total_cmp);
    let last = (pooled.len() - 1) as f64;
    let mut grid: Vec<f64> = if grid_size == 1 {
        vec![pooled[(0.5 * last).round() as usize]]
    } else {
        (0..grid_size)
            .map(|i| pooled[((i as f64 / (grid_size - 1) as f64) * last).round() as usize])
            .collect()
    };
    grid.dedup();
    Ok(grid)
}

/// Best volume-averaged DICE over the quantile grid; ties go to the
/// smallest threshold.
pub fn greedy_threshold(cases: &[EvalCase<'_>], grid_size: usize, policy: SlicePolicy) -> Result<ThresholdSearchResult> {
    if cases.is_empty() {
        return Err(FdpError::EmptyInput);
    }
    for c in cases {
        c.check()?;
    }
    if !cases.iter().any(EvalCase::has_lesion) {
        return Err(FdpError::EmptyLesions);
    }
    let grid = quantile_grid(cases, grid_size)?;
    let dice: Vec<f64> = grid
        .par_iter()
        .map(|&t| mean_dice(cases, t, policy))
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (i, &d) in dice.iter().enumerate() {
        if d > dice[best] {
            best = i;
        }
    }
    Ok(ThresholdSearchResult { threshold: grid[best], best_dice: dice[best], grid, dice })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceMetrics {
    pub z: usize,
    pub dice: f64,
    pub auprc: Option<f64>,
    pub auroc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeMetrics {
    pub dice: f64,
    pub auprc: Option<f64>,
    pub auroc: Option<f64>,
    /// Slices with a nonempty effective area.
    pub slices_counted: usize,
    /// Slices skipped because the effective area is empty.
    pub slices_empty_area: usize,
    /// Counted slices without AUPRC/AUROC (one class absent).
    pub slices_without_auc: usize,
    pub slices: Vec<SliceMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub threshold: f64,
    pub dice: f64,
    pub auprc: f64,
    pub auroc: f64,
    pub volumes: Vec<VolumeMetrics>,
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn evaluate_volume(case: &EvalCase<'_>, threshold: f64) -> Result<VolumeMetrics> {
    case.check()?;
    let mut slices = Vec::new();
    let mut empty_area = 0;
    let mut without_auc = 0;
    for z in 0..case.scores.dims().depth {
        let (scores, labels) = case.slice_values(z);
        if scores.is_empty() {
            empty_area += 1;
            continue;
        }
        let dice = slice_dice(&scores, &labels, threshold);
        let has_pos = labels.iter().any(|&l| l);
        let has_neg = labels.iter().any(|&l| !l);
        let (auprc_v, auroc_v) = if has_pos && has_neg {
            (Some(auprc(&scores, &labels)?), Some(auroc(&scores, &labels)?))
        } else {
            without_auc += 1;
            (None, None)
        };
        slices.push(SliceMetrics { z, dice, auprc: auprc_v, auroc: auroc_v });
    }
    Ok(VolumeMetrics {
        dice: mean_of(slices.iter().map(|s| s.dice)).unwrap_or(f64::NAN),
        auprc: mean_of(slices.iter().filter_map(|s| s.auprc)),
        auroc: mean_of(slices.iter().filter_map(|s| s.auroc)),
        slices_counted: slices.len(),
        slices_empty_area: empty_area,
        slices_without_auc: without_auc,
        slices,
    })
}

/// Per-slice metrics over the effective area, averaged per volume, then
/// over volumes.
pub fn evaluate(cases: &[EvalCase<'_>], threshold: f64) -> Result<MetricsReport> {
    let volumes: Vec<VolumeMetrics> = cases
        .par_iter()
        .map(|c| evaluate_volume(c, threshold))
        .collect::<Result<_>>()?;
    let dice = mean_of(volumes.iter().map(|v| v.dice).filter(|d| !d.is_nan())).ok_or(FdpError::EmptyInput)?;
    Ok(MetricsReport {
        threshold,
        dice,
        auprc: mean_of(volumes.iter().filter_map(|v| v.auprc)).unwrap_or(f64::NAN),
        auroc: mean_of(volumes.iter().filter_map(|v| v.auroc)).unwrap_or(f64::NAN),
        volumes,
    })
}

/// Filtered score maps and eroded effective areas, ready for thresholding.
pub struct Prepared {
    pub scores: Vec<AnomalyMap>,
    pub areas: Vec<BrainMask>,
}

pub fn postprocess(maps: &[AnomalyMap], brains: &[BrainMask], kernel: usize, erosion_iters: usize) -> Result<Prepared> {
    if maps.len() != brains.len() {
        return Err(FdpError::DimMismatch(format!("{} maps vs {} masks", maps.len(), brains.len())));
    }
    let scores = maps.par_iter().map(|m| mean_filter_3d(m, kernel)).collect::<Result<Vec<_>>>()?;
    let areas = brains.par_iter().map(|b| erode_mask(b, erosion_iters)).collect();
    Ok(Prepared { scores, areas })
}

impl Prepared {
    pub fn cases<'a>(&'a self, lesions: &'a [BrainMask]) -> Vec<EvalCase<'a>> {
        self.scores
            .iter()
            .zip(&self.areas)
            .zip(lesions)
            .map(|((scores, area), lesion)| EvalCase { scores, lesion, area })
            .collect()
    }
}
