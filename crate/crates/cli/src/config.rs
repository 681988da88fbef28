//! The declarative run configuration (TOML).

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use fdp_core::analysis::{DEFAULT_DISPERSION_BANDS, DEFAULT_SWEEP_GRID};
use fdp_core::evaluation::{DEFAULT_EROSION_ITERS, DEFAULT_FILTER_KERNEL, DEFAULT_GRID_SIZE};
use fdp_core::frm::FrmTrainConfig;
use fdp_core::phantom::PhantomConfig;
use fdp_core::pipeline::FdpConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        Self { train: 40, val: 8, test: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructorConfig {
    pub rank: usize,
}

impl Default for ReconstructorConfig {
    fn default() -> Self {
        Self { rank: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub filter_kernel: usize,
    pub erosion_iters: usize,
    pub grid_size: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            filter_kernel: DEFAULT_FILTER_KERNEL,
            erosion_iters: DEFAULT_EROSION_ITERS,
            grid_size: DEFAULT_GRID_SIZE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub sweep_grid: Vec<f64>,
    pub dispersion_bands: Vec<f64>,
    /// Low-frequency cutoff for the PCA and intrinsic-dimension vectors.
    pub m: f64,
    pub neighbors: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            sweep_grid: DEFAULT_SWEEP_GRID.to_vec(),
            dispersion_bands: DEFAULT_DISPERSION_BANDS.to_vec(),
            m: 0.10,
            neighbors: 10,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub splits: SplitSizes,
    pub phantom: PhantomConfig,
    pub fdp: FdpConfig,
    pub frm: FrmTrainConfig,
    pub reconstructor: ReconstructorConfig,
    pub evaluation: EvaluationConfig,
    pub analysis: AnalysisConfig,
    pub paths: Paths,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml()).with_context(|| format!("writing {}", path.display()))
    }
}
