//! Frequency reconstruction: a learnable bank of low-frequency prior
//! contexts queried by dot-product attention.
//!
//! A low-frequency vector is the interleaved `re, im` list of the
//! canonical-ordered disk coefficients, so `d = 2 · n_disk`. Attention uses
//! the contexts as both keys and values with temperature `sqrt(d)`:
//!
//! ```text
//! w_i   = softmax_i(<q, p_i> / sqrt(d))
//! recon = sum_i w_i p_i
//! ```

mod adam;
pub(crate) mod bank;
pub mod kmeans;
mod train;

pub use adam::{adam_step, AdamState};
pub use bank::{load_bank, render_context, save_bank, BankHeader};
pub use train::{collect_lowfreq_vectors, train_frm, FrmTrainConfig, TrainReport};

use serde::{Deserialize, Serialize};

use crate::error::{FdpError, Result};
use crate::matrix::{dot, DataMatrix};
use crate::par::*;
use crate::spectral::{build_filter, decompose, HighpassFilterSpec, LowBlock};
use crate::volume::SliceImage;

/// Shape of a low-frequency vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LowFreqGeometry {
    pub height: usize,
    pub width: usize,
    pub m: f64,
    pub n_disk: usize,
}

impl LowFreqGeometry {
    pub fn new(height: usize, width: usize, m: f64) -> Result<Self> {
        let filter = build_filter(height, width, m)?;
        Ok(Self { height, width, m, n_disk: filter.stopped_count() })
    }

    pub fn dim(&self) -> usize {
        2 * self.n_disk
    }

    pub fn filter(&self) -> HighpassFilterSpec {
        build_filter(self.height, self.width, self.m).expect("geometry was validated on construction")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LowFreqVector {
    pub geometry: LowFreqGeometry,
    pub values: Vec<f64>,
}

impl LowFreqVector {
    pub fn from_block(block: &LowBlock) -> Self {
        let f = block.filter;
        Self {
            geometry: LowFreqGeometry { height: f.height, width: f.width, m: f.m, n_disk: block.len() },
            values: block.to_interleaved(),
        }
    }

    pub fn to_block(&self) -> Result<LowBlock> {
        LowBlock::from_interleaved(self.geometry.filter(), &self.values)
    }
}

/// The trainable state of the frequency reconstruction module.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorContextBank {
    geometry: LowFreqGeometry,
    k: usize,
    contexts: Vec<f64>,
    pub seed: u64,
}

impl PriorContextBank {
    pub fn new(geometry: LowFreqGeometry, contexts: DataMatrix, seed: u64) -> Result<Self> {
        if contexts.rows() == 0 {
            return Err(FdpError::InvalidParameter("bank needs at least one context".into()));
        }
        if contexts.cols() != geometry.dim() {
            return Err(FdpError::GeometryMismatch(format!(
                "contexts of length {} for d = {}",
                contexts.cols(),
                geometry.dim()
            )));
        }
        if contexts.as_slice().iter().any(|x| !x.is_finite()) {
            return Err(FdpError::InvalidParameter("non-finite context value".into()));
        }
        Ok(Self { geometry, k: contexts.rows(), contexts: contexts.as_slice().to_vec(), seed })
    }

    pub fn geometry(&self) -> LowFreqGeometry {
        self.geometry
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.geometry.dim()
    }

    pub fn temperature(&self) -> f64 {
        (self.dim() as f64).sqrt()
    }

    pub fn context(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.contexts[i * d..(i + 1) * d]
    }

    pub fn contexts(&self) -> &[f64] {
        &self.contexts
    }

    pub(crate) fn contexts_mut(&mut self) -> &mut [f64] {
        &mut self.contexts
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(FdpError::GeometryMismatch(format!(
                "query of length {len}, bank expects {}",
                self.dim()
            )));
        }
        Ok(())
    }
}

/// Softmax of `logits` with max subtraction.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Returns `(recon, weights)` for a raw query vector.
pub fn attend_values(query: &[f64], bank: &PriorContextBank) -> Result<(Vec<f64>, Vec<f64>)> {
    bank.check_len(query.len())?;
    let tau = bank.temperature();
    let logits: Vec<f64> = (0..bank.k).map(|i| dot(query, bank.context(i)) / tau).collect();
    let weights = softmax(&logits);
    let mut recon = vec![0.0; bank.dim()];
    for (i, &w) in weights.iter().enumerate() {
        for (r, p) in recon.iter_mut().zip(bank.context(i)) {
            *r += w * p;
        }
    }
    Ok((recon, weights))
}

pub fn attend(query: &LowFreqVector, bank: &PriorContextBank) -> Result<(LowFreqVector, Vec<f64>)> {
    if query.geometry != bank.geometry {
        return Err(FdpError::GeometryMismatch(format!(
            "query {:?} vs bank {:?}",
            query.geometry, bank.geometry
        )));
    }
    let (values, weights) = attend_values(&query.values, bank)?;
    Ok((LowFreqVector { geometry: bank.geometry, values }, weights))
}

/// Per-sample L1 loss and its gradient with respect to every context.
fn sample_loss_grad(query: &[f64], bank: &PriorContextBank, want_grad: bool) -> (f64, Option<Vec<f64>>) {
    let (recon, weights) = attend_values(query, bank).expect("batch rows match the bank");
    let d = bank.dim();
    let inv_d = 1.0 / d as f64;
    let loss = recon.iter().zip(query).map(|(r, q)| (r - q).abs()).sum::<f64>() * inv_d;
    if !want_grad {
        return (loss, None);
    }
    // dL/drecon, with sign(0) = 0.
    let g: Vec<f64> = recon
        .iter()
        .zip(query)
        .map(|(r, q)| {
            let e = r - q;
            if e > 0.0 {
                inv_d
            } else if e < 0.0 {
                -inv_d
            } else {
                0.0
            }
        })
        .collect();
    let g_recon = dot(&g, &recon);
    let tau = bank.temperature();
    let mut grad = vec![0.0; bank.k * d];
    for (i, &w) in weights.iter().enumerate() {
        let p = bank.context(i);
        // Value path w_i·g plus logit path (dL/ds_i)·q/tau.
        let dlogit = w * (dot(&g, p) - g_recon) / tau;
        for ((dst, gc), qc) in grad[i * d..(i + 1) * d].iter_mut().zip(&g).zip(query) {
            *dst = w * gc + dlogit * qc;
        }
    }
    (loss, Some(grad))
}

fn check_batch(batch: &DataMatrix, bank: &PriorContextBank) -> Result<()> {
    if batch.rows() == 0 {
        return Err(FdpError::EmptyInput);
    }
    bank.check_len(batch.cols())
}

/// Mean over batch and coordinates of `|recon - query|`.
pub fn frm_loss(batch: &DataMatrix, bank: &PriorContextBank) -> Result<f64> {
    check_batch(batch, bank)?;
    let losses: Vec<f64> = (0..batch.rows())
        .into_par_iter()
        .map(|i| sample_loss_grad(batch.row(i), bank, false).0)
        .collect();
    Ok(losses.iter().sum::<f64>() / batch.rows() as f64)
}

/// Batch loss and exact (sub)gradient, reduced in sample order.
pub fn frm_loss_grad(batch: &DataMatrix, bank: &PriorContextBank) -> Result<(f64, Vec<f64>)> {
    check_batch(batch, bank)?;
    let parts: Vec<(f64, Vec<f64>)> = (0..batch.rows())
        .into_par_iter()
        .map(|i| {
            let (l, g) = sample_loss_grad(batch.row(i), bank, true);
            (l, g.unwrap())
        })
        .collect();
    let n = batch.rows() as f64;
    let mut grad = vec![0.0; bank.k * bank.dim()];
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        for (dst, x) in grad.iter_mut().zip(g) {
            *dst += x;
        }
    }
    grad.iter_mut().for_each(|x| *x /= n);
    Ok((loss / n, grad))
}

pub fn frm_grad(batch: &DataMatrix, bank: &PriorContextBank) -> Result<Vec<f64>> {
    Ok(frm_loss_grad(batch, bank)?.1)
}

/// k-means++ and Lloyd over `data`; the centers become the bank contexts.
pub fn kmeanspp_init(data: &DataMatrix, geometry: LowFreqGeometry, k: usize, seed: u64) -> Result<PriorContextBank> {
    if data.cols() != geometry.dim() {
        return Err(FdpError::GeometryMismatch(format!(
            "data rows of length {} for d = {}",
            data.cols(),
            geometry.dim()
        )));
    }
    let res = kmeans::kmeans(data, k, seed)?;
    PriorContextBank::new(geometry, res.centers, seed)
}

/// Replaces a slice's low-frequency disk by its attention reconstruction.
pub fn reconstruct_lowfreq(s: &SliceImage, bank: &PriorContextBank, m: f64) -> Result<LowBlock> {
    let geometry = bank.geometry();
    if geometry.height != s.height() || geometry.width != s.width() || geometry.m != m {
        return Err(FdpError::GeometryMismatch(format!(
            "slice {}x{} at m = {m} vs bank {}x{} at m = {}",
            s.height(),
            s.width(),
            geometry.height,
            geometry.width,
            geometry.m
        )));
    }
    let dec = decompose(s, m)?;
    let (recon, _) = attend(&LowFreqVector::from_block(&dec.low), bank)?;
    recon.to_block()
}
