//! Subcommand implementations.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use fdp_core::analysis::{
    freq_sweep_dice, intrinsic_dim_mle, lowfreq_dispersion, paired_slices, pca_variance, CohortBandStats, SweepSample,
};
use fdp_core::evaluation::erode_mask;
use fdp_core::frm::{collect_lowfreq_vectors, load_bank, render_context, save_bank, PriorContextBank};
use fdp_core::phantom::{gen_dataset, MANIFEST_FILE};
use fdp_core::reconstructor::{load_model, save_model, Reconstructor};
use fdp_core::volume::{export_slice_pgm, write_volume, BrainMask};
use serde::Serialize;

use crate::config::RunConfig;
use crate::experiment::{self, assess, score, Case, Data};
use crate::output::{cell, opt_cell, panel, write_json, write_text, Table};
use crate::{
    AblateArgs, Analysis, Cli, Command, DetectArgs, EvalArgs, EvaluateArgs, InspectArgs, ModelArgs, PhantomArgs, SplitArg,
    Sweep, TrainArgs, UsageError,
};

pub const BANK_FILE: &str = "bank.json";
pub const MODEL_FILE: &str = "model.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const LOSS_FILE: &str = "loss.csv";

pub const M_GRID: [f64; 7] = [0.01, 0.05, 0.10, 0.15, 0.20, 0.25, 0.30];
pub const CONTEXT_GRID: [usize; 5] = [16, 32, 64, 128, 256];

pub fn dispatch(cli: Cli) -> Result<()> {
    configure_threads(cli.threads)?;
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(|e| UsageError(format!("{e:#}")))?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::Phantom(a) => cmd_phantom(cfg, a),
        Command::Train(a) => cmd_train(cfg, a),
        Command::Detect(a) => cmd_detect(cfg, a),
        Command::Evaluate(a) => cmd_evaluate(cfg, a),
        Command::Ablate(a) => cmd_ablate(cfg, a),
        Command::Analyze(a) => cmd_analyze(cfg, a.analysis),
        Command::FrmInspect(a) => cmd_frm_inspect(cfg, a),
    }
}

#[cfg(feature = "parallel")]
fn configure_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(UsageError("--threads must be at least 1".into()).into());
        }
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

#[cfg(not(feature = "parallel"))]
fn configure_threads(threads: Option<usize>) -> Result<()> {
    if threads == Some(0) {
        return Err(UsageError("--threads must be at least 1".into()).into());
    }
    Ok(())
}

fn require(flag: Option<PathBuf>, fallback: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or_else(|| fallback.clone())
        .ok_or_else(|| UsageError(format!("missing --{name} (or paths.{name} in the config)")).into())
}

fn apply_model_args(cfg: &mut RunConfig, a: &ModelArgs) {
    if let Some(v) = a.contexts {
        cfg.frm.contexts = v;
    }
    if let Some(v) = a.epochs {
        cfg.frm.epochs = v;
    }
    if let Some(v) = a.lr {
        cfg.frm.learning_rate = v;
    }
    if let Some(v) = a.batch_size {
        cfg.frm.batch_size = v;
    }
    if let Some(v) = a.frm_seed {
        cfg.frm.seed = v;
    }
    if let Some(v) = a.rank {
        cfg.reconstructor.rank = v;
    }
    if let Some(v) = a.m_frm {
        cfg.fdp.m_frm = v;
    }
    if let Some(v) = a.m_hfsup {
        cfg.fdp.m_hfsup = v;
    }
    if a.no_frm {
        cfg.fdp.use_frm = false;
    }
    if a.no_hfsup {
        cfg.fdp.use_hfsup = false;
    }
}

fn apply_eval_args(cfg: &mut RunConfig, a: &EvalArgs) {
    if let Some(v) = a.filter_kernel {
        cfg.evaluation.filter_kernel = v;
    }
    if let Some(v) = a.erosion_iters {
        cfg.evaluation.erosion_iters = v;
    }
    if let Some(v) = a.grid_size {
        cfg.evaluation.grid_size = v;
    }
}

fn validate(cfg: &RunConfig) -> Result<()> {
    cfg.fdp.validate().map_err(|e| UsageError(e.to_string()))?;
    cfg.frm.validate().map_err(|e| UsageError(e.to_string()))?;
    Ok(())
}

pub fn cmd_phantom(mut cfg: RunConfig, a: PhantomArgs) -> Result<()> {
    if let Some(s) = a.seed {
        cfg.phantom.seed = s;
    }
    let sizes = &mut cfg.splits;
    sizes.train = a.train.unwrap_or(sizes.train);
    sizes.val = a.val.unwrap_or(sizes.val);
    sizes.test = a.test.unwrap_or(sizes.test);
    if sizes.train == 0 || sizes.val == 0 || sizes.test == 0 {
        return Err(UsageError("every split needs at least one sample".into()).into());
    }
    cfg.phantom.validate().map_err(|e| UsageError(e.to_string()))?;
    eprintln!("generating {} / {} / {} phantoms", sizes.train, sizes.val, sizes.test);
    gen_dataset(&cfg.phantom, cfg.phantom.seed, sizes.train, sizes.val, sizes.test, &a.out)
        .with_context(|| format!("writing dataset to {}", a.out.display()))?;
    println!("{}", a.out.join(MANIFEST_FILE).display());
    Ok(())
}

/// The effective configuration stored next to trained artifacts; paths are
/// dropped so the file depends only on the experiment.
fn artifact_config(cfg: &RunConfig) -> RunConfig {
    RunConfig { paths: Default::default(), ..cfg.clone() }
}

pub fn cmd_train(mut cfg: RunConfig, a: TrainArgs) -> Result<()> {
    let data_dir = require(a.data, &cfg.paths.data, "data")?;
    let out = require(a.out, &cfg.paths.out, "out")?;
    apply_model_args(&mut cfg, &a.model);
    validate(&cfg)?;
    let data = Data::load(&data_dir)?;
    eprintln!("training on {} volumes", data.train.len());
    let trained = experiment::fit(&data.train, &cfg)?;
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    if let Some(bank) = &trained.bank {
        save_bank(bank, out.join(BANK_FILE))?;
    }
    save_model(&trained.model, out.join(MODEL_FILE))?;
    let mut loss = Table::new(&["epoch", "loss"]);
    if let Some(r) = &trained.frm_report {
        loss.push(vec![cell(0), cell(r.initial_loss)]);
        for (i, l) in r.loss_history.iter().enumerate() {
            loss.push(vec![cell(i + 1), cell(l)]);
        }
    }
    loss.write(&out.join(LOSS_FILE))?;
    artifact_config(&cfg).save(&out.join(CONFIG_FILE))?;
    println!("{}", out.display());
    Ok(())
}

struct Artifacts {
    cfg: RunConfig,
    bank: Option<PriorContextBank>,
    model: Reconstructor,
}

fn load_artifacts(dir: &Path) -> Result<Artifacts> {
    let cfg = RunConfig::load(&dir.join(CONFIG_FILE))?;
    let bank = if cfg.fdp.use_frm {
        Some(load_bank(dir.join(BANK_FILE)).with_context(|| format!("loading {}", dir.join(BANK_FILE).display()))?)
    } else {
        None
    };
    let model = load_model(dir.join(MODEL_FILE)).with_context(|| format!("loading {}", dir.join(MODEL_FILE).display()))?;
    Ok(Artifacts { cfg, bank, model })
}

fn panel_slice(c: &Case) -> usize {
    let d = c.lesion.dims();
    let area = |z: usize| c.lesion.slice_bits(z).iter().filter(|&&b| b).count();
    let best = (0..d.depth).max_by_key(|&z| (area(z), std::cmp::Reverse(z))).unwrap_or(0);
    if area(best) == 0 {
        d.depth / 2
    } else {
        best
    }
}

pub fn cmd_detect(cfg: RunConfig, a: DetectArgs) -> Result<()> {
    let data_dir = require(a.data, &cfg.paths.data, "data")?;
    let model_dir = require(a.model, &cfg.paths.model, "model")?;
    let out = require(a.out, &cfg.paths.out, "out")?;
    let art = load_artifacts(&model_dir)?;
    let data = Data::load(&data_dir)?;
    let cases = match a.split {
        SplitArg::Val => &data.val,
        SplitArg::Test => &data.test,
    };
    let results = score(cases, art.bank.as_ref(), &art.model, &art.cfg.fdp)?;
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    for (c, r) in cases.iter().zip(&results) {
        write_volume(out.join(format!("{}_amap.fvol", c.name)), &r.amap.to_volume(), Some(&c.brain))?;
        write_volume(out.join(format!("{}_recon.fvol", c.name)), &r.recon, None)?;
        let z = panel_slice(c);
        let residual = r.amap.to_volume().slice(z)?;
        let pgm = panel(&c.volume.slice(z)?, &r.preprocessed.slice(z)?, &r.recon.slice(z)?, &residual)?;
        let path = out.join(format!("{}_panel.pgm", c.name));
        std::fs::write(&path, pgm).with_context(|| format!("writing {}", path.display()))?;
        eprintln!("{}: slice {z}, dropped imaginary energy {:e}", c.name, r.dropped_imag_energy);
    }
    println!("{}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct EvaluationDocument<'a> {
    threshold: f64,
    val_dice: f64,
    dice: f64,
    auprc: f64,
    auroc: f64,
    volumes: Vec<VolumeRow<'a>>,
}

#[derive(Serialize)]
struct VolumeRow<'a> {
    volume: &'a str,
    dice: f64,
    auprc: Option<f64>,
    auroc: Option<f64>,
    slices_counted: usize,
    slices_empty_area: usize,
    slices_without_auc: usize,
}

pub fn cmd_evaluate(cfg: RunConfig, a: EvaluateArgs) -> Result<()> {
    let data_dir = require(a.data, &cfg.paths.data, "data")?;
    let model_dir = require(a.model, &cfg.paths.model, "model")?;
    let out = require(a.out, &cfg.paths.out, "out")?;
    let art = load_artifacts(&model_dir)?;
    let mut run_cfg = art.cfg.clone();
    run_cfg.evaluation = cfg.evaluation.clone();
    apply_eval_args(&mut run_cfg, &a.eval);
    let data = Data::load(&data_dir)?;
    let maps = |cases: &[Case]| -> Result<Vec<_>> {
        Ok(score(cases, art.bank.as_ref(), &art.model, &run_cfg.fdp)?.into_iter().map(|r| r.amap).collect())
    };
    let result = assess(&maps(&data.val)?, &data.val, &maps(&data.test)?, &data.test, &run_cfg.evaluation)?;
    let mut table = Table::new(&["volume", "dice", "auprc", "auroc", "threshold", "slices_counted"]);
    let rows: Vec<VolumeRow<'_>> = data
        .test
        .iter()
        .zip(&result.report.volumes)
        .map(|(c, v)| VolumeRow {
            volume: &c.name,
            dice: v.dice,
            auprc: v.auprc,
            auroc: v.auroc,
            slices_counted: v.slices_counted,
            slices_empty_area: v.slices_empty_area,
            slices_without_auc: v.slices_without_auc,
        })
        .collect();
    for r in &rows {
        table.push(vec![
            r.volume.to_string(),
            cell(r.dice),
            opt_cell(r.auprc),
            opt_cell(r.auroc),
            cell(result.report.threshold),
            cell(r.slices_counted),
        ]);
    }
    table.write(&out.join("metrics.csv"))?;
    let doc = EvaluationDocument {
        threshold: result.report.threshold,
        val_dice: result.search.best_dice,
        dice: result.report.dice,
        auprc: result.report.auprc,
        auroc: result.report.auroc,
        volumes: rows,
    };
    write_json(&out.join("metrics.json"), &doc)?;
    println!(
        "dice {:.4} auprc {:.4} auroc {:.4} threshold {}",
        doc.dice, doc.auprc, doc.auroc, doc.threshold
    );
    Ok(())
}

/// Every ablation cell, keyed by sweep.
pub fn ablation_cells(base: &RunConfig, sweep: Sweep) -> Vec<(Vec<String>, RunConfig)> {
    let with = |f: &dyn Fn(&mut RunConfig)| {
        let mut c = base.clone();
        f(&mut c);
        c
    };
    match sweep {
        Sweep::FrmHfsup => [(false, false), (true, false), (false, true), (true, true)]
            .iter()
            .map(|&(frm, hf)| {
                let c = with(&|c| {
                    c.fdp.use_frm = frm;
                    c.fdp.use_hfsup = hf;
                });
                (vec![cell(frm), cell(hf)], c)
            })
            .collect(),
        Sweep::MFrm => M_GRID
            .iter()
            .map(|&m| {
                let c = with(&|c| {
                    c.fdp.use_frm = true;
                    c.fdp.use_hfsup = true;
                    c.fdp.m_frm = m;
                });
                (vec![cell(m)], c)
            })
            .collect(),
        Sweep::MHfsup => M_GRID
            .iter()
            .map(|&m| {
                let c = with(&|c| {
                    c.fdp.use_frm = true;
                    c.fdp.use_hfsup = true;
                    c.fdp.m_hfsup = m;
                });
                (vec![cell(m)], c)
            })
            .collect(),
        Sweep::Contexts => CONTEXT_GRID
            .iter()
            .map(|&k| {
                let c = with(&|c| {
                    c.fdp.use_frm = true;
                    c.fdp.use_hfsup = true;
                    c.frm.contexts = k;
                });
                (vec![cell(k)], c)
            })
            .collect(),
    }
}

fn sweep_file(s: Sweep) -> (&'static str, &'static [&'static str]) {
    match s {
        Sweep::FrmHfsup => ("frm_hfsup.csv", &["frm", "hfsup"]),
        Sweep::MFrm => ("m_frm.csv", &["m_frm"]),
        Sweep::MHfsup => ("m_hfsup.csv", &["m_hfsup"]),
        Sweep::Contexts => ("contexts.csv", &["contexts", "contexts_used"]),
    }
}

pub fn cmd_ablate(mut cfg: RunConfig, a: AblateArgs) -> Result<()> {
    let data_dir = require(a.data, &cfg.paths.data, "data")?;
    let out = require(a.out, &cfg.paths.out, "out")?;
    apply_model_args(&mut cfg, &a.model);
    apply_eval_args(&mut cfg, &a.eval);
    validate(&cfg)?;
    let data = Data::load(&data_dir)?;
    let sweeps = if a.only.is_empty() {
        vec![Sweep::FrmHfsup, Sweep::MFrm, Sweep::MHfsup, Sweep::Contexts]
    } else {
        a.only.clone()
    };
    // Cells shared between sweeps (e.g. the default setting) run once.
    let mut cache: BTreeMap<String, experiment::Assessment> = BTreeMap::new();
    for sweep in sweeps {
        let (file, keys) = sweep_file(sweep);
        let mut header: Vec<&str> = keys.to_vec();
        header.extend(["dice", "auprc", "auroc", "threshold", "val_dice"]);
        let mut table = Table::new(&header);
        for (mut key, cell_cfg) in ablation_cells(&cfg, sweep) {
            if sweep != Sweep::Contexts {
                key.truncate(keys.len());
            }
            let id = cell_cfg.to_toml();
            if !cache.contains_key(&id) {
                eprintln!("{file}: {}", key.join(" "));
                cache.insert(id.clone(), experiment::run(&data, &cell_cfg)?);
            }
            let r = &cache[&id];
            if sweep == Sweep::Contexts {
                key.push(r.contexts.map(cell).unwrap_or_default());
            }
            key.extend([
                cell(r.report.dice),
                cell(r.report.auprc),
                cell(r.report.auroc),
                cell(r.report.threshold),
                cell(r.search.best_dice),
            ]);
            table.push(key);
        }
        table.write(&out.join(file))?;
    }
    println!("{}", out.display());
    Ok(())
}

fn lesioned(data: &Data) -> Vec<&Case> {
    data.val.iter().chain(&data.test).collect()
}

pub fn cmd_analyze(cfg: RunConfig, analysis: Analysis) -> Result<()> {
    let data_path = |io: &crate::AnalysisIo| require(io.data.clone(), &cfg.paths.data, "data");
    match analysis {
        Analysis::FreqSweep { io, grid } => {
            let data = Data::load(&data_path(&io)?)?;
            let grid = grid.unwrap_or_else(|| cfg.analysis.sweep_grid.clone());
            let cases = lesioned(&data);
            let areas: Vec<BrainMask> = cases.iter().map(|c| erode_mask(&c.brain, cfg.evaluation.erosion_iters)).collect();
            let samples: Vec<SweepSample<'_>> = cases
                .iter()
                .zip(&areas)
                .map(|(c, area)| SweepSample { volume: &c.volume, lesion: &c.lesion, area })
                .collect();
            let curve = freq_sweep_dice(&samples, &grid)?;
            let mut t = Table::new(&["m", "dice", "threshold"]);
            for ((m, d), th) in curve.grid.iter().zip(&curve.values).zip(&curve.thresholds) {
                t.push(vec![cell(m), cell(d), cell(th)]);
            }
            t.write(&io.out)?;
        }
        Analysis::Dispersion { io, bands } => {
            let data = Data::load(&data_path(&io)?)?;
            let bands = bands.unwrap_or_else(|| cfg.analysis.dispersion_bands.clone());
            let pairs: Vec<_> = lesioned(&data).into_iter().map(|c| (&c.volume, &c.lesion)).collect();
            let (hs, ls) = paired_slices(&data.train, &pairs)?;
            let stats = lowfreq_dispersion(&hs, &ls, &bands)?;
            let mut t = Table::new(&["m_lo", "m_hi", "cohort", "mean_real", "std_real", "mean_imag", "std_imag"]);
            for b in &stats.bands {
                for (name, s) in [("healthy", &b.healthy), ("lesioned", &b.lesioned)] {
                    let CohortBandStats { mean_real, std_real, mean_imag, std_imag } = *s;
                    t.push(vec![
                        cell(b.m_lo),
                        cell(b.m_hi),
                        name.to_string(),
                        cell(mean_real),
                        cell(std_real),
                        cell(mean_imag),
                        cell(std_imag),
                    ]);
                }
            }
            t.write(&io.out)?;
        }
        Analysis::Pca { io, m } => {
            let data = Data::load(&data_path(&io)?)?;
            let (x, _) = collect_lowfreq_vectors(&data.train, m.unwrap_or(cfg.analysis.m))?;
            let ratios = pca_variance(&x)?;
            let mut t = Table::new(&["component", "ratio", "cumulative"]);
            let mut acc = 0.0;
            for (i, r) in ratios.iter().enumerate() {
                acc += r;
                t.push(vec![cell(i + 1), cell(r), cell(acc)]);
            }
            t.write(&io.out)?;
        }
        Analysis::IntrinsicDim { io, m, k } => {
            let data = Data::load(&data_path(&io)?)?;
            let (x, _) = collect_lowfreq_vectors(&data.train, m.unwrap_or(cfg.analysis.m))?;
            let est = intrinsic_dim_mle(&x, k.unwrap_or(cfg.analysis.neighbors))?;
            eprintln!("intrinsic dimension {:.3} over {} vectors", est.mean, est.estimates.len());
            write_json(&io.out, &est)?;
        }
    }
    Ok(())
}

pub fn cmd_frm_inspect(cfg: RunConfig, a: InspectArgs) -> Result<()> {
    let model_dir = require(a.model, &cfg.paths.model, "model")?;
    let path = model_dir.join(BANK_FILE);
    let bank = load_bank(&path).with_context(|| format!("loading {}", path.display()))?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let width = bank.k().saturating_sub(1).to_string().len().max(3);
    for i in 0..bank.k() {
        export_slice_pgm(a.out.join(format!("context_{i:0width$}.pgm")), &render_context(&bank, i)?)?;
    }
    let g = bank.geometry();
    let summary = format!("k {} d {} H {} W {} m {}\n", bank.k(), bank.dim(), g.height, g.width, g.m);
    write_text(&a.out.join("bank.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}
