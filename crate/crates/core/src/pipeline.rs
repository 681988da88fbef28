//! Training and inference composition.
//!
//! Inference per slice `I`:
//!
//! ```text
//! Î     = IDFT(MERGE(attend(f_l), f_h))        (FRM on, threshold m_frm)
//! I_h   = IDFT(f_h)                            (HFSup on, threshold m_hfsup)
//! I_rec = R(Î) + α · I_h
//! score = |I − I_rec|
//! ```
//!
//! `R` is trained on healthy slices with inputs `Î` and targets `I − α·I_h`.

use serde::{Deserialize, Serialize};

use crate::error::{FdpError, Result};
use crate::frm::{reconstruct_lowfreq, PriorContextBank};
use crate::par::*;
use crate::reconstructor::{train_pca, Reconstructor};
use crate::spectral::{decompose, highfreq_image, idft2_with_residual};
use crate::volume::{Dims, SliceImage, Volume};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FdpConfig {
    pub m_frm: f64,
    pub m_hfsup: f64,
    pub use_frm: bool,
    pub use_hfsup: bool,
    pub hfsup_weight: f64,
}

impl Default for FdpConfig {
    fn default() -> Self {
        Self { m_frm: 0.10, m_hfsup: 0.10, use_frm: true, use_hfsup: true, hfsup_weight: 1.0 }
    }
}

impl FdpConfig {
    pub fn disabled() -> Self {
        Self { use_frm: false, use_hfsup: false, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, m) in [("m_frm", self.m_frm), ("m_hfsup", self.m_hfsup)] {
            if !(0.0..=1.0).contains(&m) {
                return Err(FdpError::InvalidParameter(format!("{name} = {m} not in [0, 1]")));
            }
        }
        if !self.hfsup_weight.is_finite() {
            return Err(FdpError::InvalidParameter("hfsup_weight must be finite".into()));
        }
        Ok(())
    }

    /// Weight actually applied to the high-frequency image.
    pub fn effective_weight(&self) -> f64 {
        if self.use_hfsup {
            self.hfsup_weight
        } else {
            0.0
        }
    }
}

/// Per-voxel nonnegative anomaly scores.
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyMap {
    dims: Dims,
    scores: Vec<f32>,
}

impl AnomalyMap {
    pub fn new(dims: Dims, scores: Vec<f32>) -> Result<Self> {
        if scores.len() != dims.len() {
            return Err(FdpError::InvalidDims(format!("{} scores for dims {dims}", scores.len())));
        }
        if let Some(bad) = scores.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
            return Err(FdpError::InvalidParameter(format!("anomaly score {bad}")));
        }
        Ok(Self { dims, scores })
    }

    /// `|a − b|` voxelwise.
    pub fn residual(a: &Volume, b: &Volume) -> Result<Self> {
        if a.dims() != b.dims() {
            return Err(FdpError::DimMismatch(format!("{} vs {}", a.dims(), b.dims())));
        }
        let scores = a.voxels().iter().zip(b.voxels()).map(|(x, y)| (x - y).abs()).collect();
        Self::new(a.dims(), scores)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn scores(&self) -> &[f32] {
        &self.scores
    }

    pub fn to_volume(&self) -> Volume {
        Volume::new(self.dims, self.scores.clone()).expect("scores are finite")
    }
}

/// Returns `(Î, I_h)` and the imaginary energy dropped when inverting the
/// merged spectrum.
pub fn fdp_preprocess_with_residual(
    s: &SliceImage,
    bank: Option<&PriorContextBank>,
    cfg: &FdpConfig,
) -> Result<(SliceImage, SliceImage, f64)> {
    let (i_hat, dropped) = if cfg.use_frm {
        let bank = bank.ok_or_else(|| FdpError::InvalidParameter("FRM enabled without a bank".into()))?;
        let low = reconstruct_lowfreq(s, bank, cfg.m_frm)?;
        let dec = decompose(s, cfg.m_frm)?;
        idft2_with_residual(&dec.merge_with(&low)?)
    } else {
        (s.clone(), 0.0)
    };
    let i_h = if cfg.use_hfsup {
        highfreq_image(s, cfg.m_hfsup)?
    } else {
        SliceImage::zeros(s.height(), s.width())?
    };
    Ok((i_hat, i_h, dropped))
}

pub fn fdp_preprocess(s: &SliceImage, bank: Option<&PriorContextBank>, cfg: &FdpConfig) -> Result<(SliceImage, SliceImage)> {
    let (a, b, _) = fdp_preprocess_with_residual(s, bank, cfg)?;
    Ok((a, b))
}

fn all_slices(volumes: &[Volume]) -> Result<Vec<SliceImage>> {
    let mut out = Vec::new();
    for v in volumes {
        out.extend(v.slices()?);
    }
    Ok(out)
}

/// Training pairs `(Î, I − α·I_h)` for every slice of `volumes`.
pub fn training_pairs(
    volumes: &[Volume],
    bank: Option<&PriorContextBank>,
    cfg: &FdpConfig,
) -> Result<(Vec<SliceImage>, Vec<SliceImage>)> {
    cfg.validate()?;
    let slices = all_slices(volumes)?;
    let alpha = cfg.effective_weight();
    let pairs: Vec<(SliceImage, SliceImage)> = slices
        .par_iter()
        .map(|s| -> Result<_> {
            let (i_hat, i_h) = fdp_preprocess(s, bank, cfg)?;
            Ok((i_hat, s.add_scaled(&i_h, -alpha)?))
        })
        .collect::<Result<_>>()?;
    Ok(pairs.into_iter().unzip())
}

/// Second training stage: fits the rank-`r` reconstructor on FDP-processed
/// healthy slices. The bank is frozen.
pub fn train_pipeline(
    volumes: &[Volume],
    cfg: &FdpConfig,
    bank: Option<&PriorContextBank>,
    rank: usize,
) -> Result<Reconstructor> {
    if volumes.is_empty() {
        return Err(FdpError::EmptyInput);
    }
    let (inputs, targets) = training_pairs(volumes, bank, cfg)?;
    Ok(Reconstructor::Pca(train_pca(&inputs, &targets, rank)?))
}

#[derive(Debug, Clone)]
pub struct Inference {
    /// FDP-processed input `Î`.
    pub preprocessed: Volume,
    /// Final reconstruction `R(Î) + α·I_h`.
    pub recon: Volume,
    pub amap: AnomalyMap,
    /// Total imaginary energy dropped by the real-part projection.
    pub dropped_imag_energy: f64,
}

pub fn infer_volume(
    v: &Volume,
    bank: Option<&PriorContextBank>,
    model: &Reconstructor,
    cfg: &FdpConfig,
) -> Result<Inference> {
    cfg.validate()?;
    let alpha = cfg.effective_weight();
    let slices = v.slices()?;
    let per_slice: Vec<(SliceImage, SliceImage, f64)> = slices
        .par_iter()
        .map(|s| -> Result<_> {
            let (i_hat, i_h, dropped) = fdp_preprocess_with_residual(s, bank, cfg)?;
            let recon = model.reconstruct(&i_hat)?.add_scaled(&i_h, alpha)?;
            Ok((i_hat, recon, dropped))
        })
        .collect::<Result<_>>()?;
    let dropped_imag_energy = per_slice.iter().map(|p| p.2).sum();
    let (hats, recons): (Vec<SliceImage>, Vec<SliceImage>) = per_slice.into_iter().map(|(a, b, _)| (a, b)).unzip();
    let recon = Volume::from_slices(&recons)?;
    let amap = AnomalyMap::residual(v, &recon)?;
    Ok(Inference { preprocessed: Volume::from_slices(&hats)?, recon, amap, dropped_imag_energy })
}
