//! Train / score / assess workflow shared by `train`, `evaluate` and
//! `ablate`.

use std::path::Path;

use anyhow::{Context, Result};
use fdp_core::evaluation::{evaluate, greedy_threshold, postprocess, MetricsReport, SlicePolicy, ThresholdSearchResult};
use fdp_core::frm::{train_frm, PriorContextBank, TrainReport};
use fdp_core::matrix::DataMatrix;
use fdp_core::phantom::{Dataset, Role};
use fdp_core::pipeline::{infer_volume, train_pipeline, AnomalyMap, FdpConfig, Inference};
use fdp_core::reconstructor::{PcaModel, Reconstructor};
use fdp_core::volume::{BrainMask, Volume};

use crate::config::{EvaluationConfig, RunConfig};

/// One lesioned evaluation volume.
#[derive(Debug, Clone)]
pub struct Case {
    /// Entry path stem with `/` flattened, e.g. `test_003`.
    pub name: String,
    pub volume: Volume,
    pub brain: BrainMask,
    pub lesion: BrainMask,
}

#[derive(Debug, Clone)]
pub struct Data {
    pub train: Vec<Volume>,
    pub val: Vec<Case>,
    pub test: Vec<Case>,
}

impl Data {
    pub fn load(dir: &Path) -> Result<Self> {
        let ds = Dataset::load(dir).with_context(|| format!("loading dataset {}", dir.display()))?;
        let cases = |role| {
            ds.split(role)
                .into_iter()
                .map(|e| Case {
                    name: e.entry.path.trim_end_matches(".fvol").replace('/', "_"),
                    volume: e.volume.clone(),
                    brain: e.brain.clone(),
                    lesion: e.lesion.clone(),
                })
                .collect::<Vec<_>>()
        };
        let data = Self { train: ds.volumes(Role::Train), val: cases(Role::Val), test: cases(Role::Test) };
        if data.train.is_empty() {
            anyhow::bail!("dataset {} has no training volumes", dir.display());
        }
        Ok(data)
    }
}

pub struct Trained {
    pub bank: Option<PriorContextBank>,
    pub model: Reconstructor,
    pub frm_report: Option<TrainReport>,
}

fn to_f32(values: &[f64]) -> Vec<f64> {
    values.iter().map(|&v| v as f32 as f64).collect()
}

/// The bank as it reads back from disk.
pub fn quantize_bank(bank: &PriorContextBank) -> Result<PriorContextBank> {
    let data = DataMatrix::new(bank.k(), bank.dim(), to_f32(bank.contexts()))?;
    Ok(PriorContextBank::new(bank.geometry(), data, bank.seed)?)
}

/// The model as it reads back from disk.
pub fn quantize_model(model: Reconstructor) -> Reconstructor {
    match model {
        Reconstructor::Pca(p) => Reconstructor::Pca(PcaModel {
            input_mean: to_f32(&p.input_mean),
            input_components: p.input_components.iter().map(|c| to_f32(c)).collect(),
            target_mean: to_f32(&p.target_mean),
            target_components: p.target_components.iter().map(|c| to_f32(c)).collect(),
            ..p
        }),
        other => other,
    }
}

/// Two-stage training: the bank first, then the reconstructor on
/// FDP-processed slices with the bank frozen. Both stages see parameters
/// at storage precision so in-memory and reloaded runs agree.
pub fn fit(train: &[Volume], cfg: &RunConfig) -> Result<Trained> {
    let (bank, frm_report) = if cfg.fdp.use_frm {
        let (bank, report) = train_frm(train, cfg.fdp.m_frm, &cfg.frm).context("training the prior context bank")?;
        (Some(quantize_bank(&bank)?), Some(report))
    } else {
        (None, None)
    };
    let model = train_pipeline(train, &cfg.fdp, bank.as_ref(), cfg.reconstructor.rank).context("training the reconstructor")?;
    Ok(Trained { bank, model: quantize_model(model), frm_report })
}

pub fn score(cases: &[Case], bank: Option<&PriorContextBank>, model: &Reconstructor, fdp: &FdpConfig) -> Result<Vec<Inference>> {
    cases
        .iter()
        .map(|c| infer_volume(&c.volume, bank, model, fdp).with_context(|| format!("scoring {}", c.name)))
        .collect()
}

pub struct Assessment {
    pub search: ThresholdSearchResult,
    pub report: MetricsReport,
    /// Bank size actually trained (capped at the sample count).
    pub contexts: Option<usize>,
}

/// Filter, erode, pick the threshold on validation, report on test.
pub fn assess(
    val_maps: &[AnomalyMap],
    val: &[Case],
    test_maps: &[AnomalyMap],
    test: &[Case],
    cfg: &EvaluationConfig,
) -> Result<Assessment> {
    let prep = |maps: &[AnomalyMap], cases: &[Case]| {
        let brains: Vec<BrainMask> = cases.iter().map(|c| c.brain.clone()).collect();
        postprocess(maps, &brains, cfg.filter_kernel, cfg.erosion_iters)
    };
    let val_lesions: Vec<BrainMask> = val.iter().map(|c| c.lesion.clone()).collect();
    let test_lesions: Vec<BrainMask> = test.iter().map(|c| c.lesion.clone()).collect();
    let pv = prep(val_maps, val)?;
    let search = greedy_threshold(&pv.cases(&val_lesions), cfg.grid_size, SlicePolicy::AllSlices)
        .context("threshold search on the validation split")?;
    let pt = prep(test_maps, test)?;
    let report = evaluate(&pt.cases(&test_lesions), search.threshold).context("evaluating the test split")?;
    Ok(Assessment { search, report, contexts: None })
}

/// Full run from training volumes to test metrics.
pub fn run(data: &Data, cfg: &RunConfig) -> Result<Assessment> {
    let trained = fit(&data.train, cfg)?;
    let maps = |cases: &[Case]| -> Result<Vec<AnomalyMap>> {
        Ok(score(cases, trained.bank.as_ref(), &trained.model, &cfg.fdp)?.into_iter().map(|i| i.amap).collect())
    };
    let mut out = assess(&maps(&data.val)?, &data.val, &maps(&data.test)?, &data.test, &cfg.evaluation)?;
    out.contexts = trained.bank.as_ref().map(PriorContextBank::k);
    Ok(out)
}
