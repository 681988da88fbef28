use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{adam_step, frm_loss, frm_loss_grad, kmeanspp_init, AdamState, LowFreqGeometry, PriorContextBank};
use crate::error::{FdpError, Result};
use crate::matrix::DataMatrix;
use crate::par::*;
use crate::spectral::decompose;
use crate::volume::Volume;

/// Stream offset separating the shuffle RNG from the k-means seeding RNG.
const SHUFFLE_STREAM: u64 = 0x5348_5546;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrmTrainConfig {
    pub contexts: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for FrmTrainConfig {
    fn default() -> Self {
        Self {
            contexts: 128,
            learning_rate: 2e-5,
            batch_size: 32,
            epochs: 10,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
        }
    }
}

impl FrmTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(FdpError::InvalidParameter("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(FdpError::InvalidParameter("batch_size must be at least 1".into()));
        }
        if self.contexts == 0 {
            return Err(FdpError::InvalidParameter("contexts must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Full-dataset loss of the k-means++ initialized bank.
    pub initial_loss: f64,
    /// Mean minibatch loss of each epoch, measured before each step.
    pub loss_history: Vec<f64>,
    /// Number of contexts actually used (capped by the sample count).
    pub contexts: usize,
}

/// One interleaved low-frequency row per slice, volume-major.
pub fn collect_lowfreq_vectors(volumes: &[Volume], m: f64) -> Result<(DataMatrix, LowFreqGeometry)> {
    let first = volumes.first().ok_or(FdpError::EmptyInput)?;
    let (h, w) = (first.dims().height, first.dims().width);
    if let Some(v) = volumes.iter().find(|v| v.dims().height != h || v.dims().width != w) {
        return Err(FdpError::DimMismatch(format!("slice size {} vs {h}x{w}", v.dims())));
    }
    let geometry = LowFreqGeometry::new(h, w, m)?;
    let jobs: Vec<(usize, usize)> = volumes
        .iter()
        .enumerate()
        .flat_map(|(vi, v)| (0..v.dims().depth).map(move |z| (vi, z)))
        .collect();
    let rows: Vec<Vec<f64>> = jobs
        .par_iter()
        .map(|&(vi, z)| -> Result<Vec<f64>> {
            let s = volumes[vi].slice(z)?;
            Ok(decompose(&s, m)?.low.to_interleaved())
        })
        .collect::<Result<_>>()?;
    Ok((DataMatrix::from_rows(&rows)?, geometry))
}

/// Minibatch Adam on the L1 self-reconstruction loss, starting from a
/// k-means++ initialization over `data`.
pub fn train_on_vectors(
    data: &DataMatrix,
    geometry: LowFreqGeometry,
    cfg: &FrmTrainConfig,
) -> Result<(PriorContextBank, TrainReport)> {
    cfg.validate()?;
    if data.rows() == 0 {
        return Err(FdpError::EmptyInput);
    }
    let k = cfg.contexts.min(data.rows());
    let mut bank = kmeanspp_init(data, geometry, k, cfg.seed)?;
    let initial_loss = frm_loss(data, &bank)?;
    let mut state = AdamState::for_bank(&bank);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..data.rows()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let dim = data.cols();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut values = Vec::with_capacity(chunk.len() * dim);
            for &i in chunk {
                values.extend_from_slice(data.row(i));
            }
            let batch = DataMatrix::new(chunk.len(), dim, values)?;
            let (loss, grad) = frm_loss_grad(&batch, &bank)?;
            total += loss * chunk.len() as f64;
            adam_step(&mut bank, &grad, &mut state, cfg);
        }
        history.push(total / data.rows() as f64);
    }
    Ok((bank, TrainReport { initial_loss, loss_history: history, contexts: k }))
}

pub fn train_frm(volumes: &[Volume], m: f64, cfg: &FrmTrainConfig) -> Result<(PriorContextBank, TrainReport)> {
    let (data, geometry) = collect_lowfreq_vectors(volumes, m)?;
    train_on_vectors(&data, geometry, cfg)
}
