//! Healthy-image reconstructors standing in for a generative model.
//!
//! The principal variant is a rank-`r` linear model fit through the
//! `N × N` Gram matrix of the centered training inputs:
//!
//! ```text
//! recon(x) = mean_t + B_t · B_inᵀ · (x − mean_in)
//! ```
//!
//! `B_in` holds the top-`r` orthonormal input principal directions and
//! `B_t` is the least-squares map from input codes to centered targets.
//! When inputs and targets coincide, `B_t = B_in`.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{FdpError, Result};
use crate::frm::bank::{payload_path, read_f32_payload, write_f32_payload};
use crate::matrix::dot;
use crate::volume::SliceImage;

/// Eigenvalues below this fraction of the largest are treated as zero.
const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub height: usize,
    pub width: usize,
    pub input_mean: Vec<f64>,
    /// `rank` rows of length `H·W`, orthonormal.
    pub input_components: Vec<Vec<f64>>,
    pub target_mean: Vec<f64>,
    pub target_components: Vec<Vec<f64>>,
    /// Eigenvalues of the centered input Gram matrix, descending.
    pub eigenvalues: Vec<f64>,
}

impl PcaModel {
    pub fn rank(&self) -> usize {
        self.input_components.len()
    }

    fn codes(&self, x: &[f64]) -> Vec<f64> {
        let centered: Vec<f64> = x.iter().zip(&self.input_mean).map(|(a, b)| a - b).collect();
        self.input_components.iter().map(|c| dot(c, &centered)).collect()
    }

    fn synthesize(mean: &[f64], components: &[Vec<f64>], codes: &[f64]) -> Vec<f64> {
        let mut out = mean.to_vec();
        for (c, &z) in components.iter().zip(codes) {
            for (o, b) in out.iter_mut().zip(c) {
                *o += z * b;
            }
        }
        out
    }

    /// Orthogonal projection of `x` onto the input principal subspace.
    pub fn project_input(&self, x: &SliceImage) -> Result<SliceImage> {
        self.check_dims(x)?;
        let z = self.codes(x.pixels());
        SliceImage::new(self.height, self.width, Self::synthesize(&self.input_mean, &self.input_components, &z))
    }

    pub fn reconstruct(&self, x: &SliceImage) -> Result<SliceImage> {
        self.check_dims(x)?;
        let z = self.codes(x.pixels());
        SliceImage::new(self.height, self.width, Self::synthesize(&self.target_mean, &self.target_components, &z))
    }

    fn check_dims(&self, x: &SliceImage) -> Result<()> {
        if x.height() != self.height || x.width() != self.width {
            return Err(FdpError::DimMismatch(format!(
                "slice {}x{} vs model {}x{}",
                x.height(),
                x.width(),
                self.height,
                self.width
            )));
        }
        Ok(())
    }
}

fn stack(images: &[SliceImage]) -> (DMatrix<f64>, Vec<f64>) {
    let n = images.len();
    let len = images[0].pixels().len();
    let mut mean = vec![0.0; len];
    for img in images {
        for (m, p) in mean.iter_mut().zip(img.pixels()) {
            *m += p;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, len, |i, j| images[i].pixels()[j] - mean[j]);
    (centered, mean)
}

/// Fits the rank-`r` map from `inputs` to `targets`.
///
/// Directions whose Gram eigenvalue falls below `1e-10 · λ_max` are dropped,
/// so the fitted rank may be lower than `r` on rank-deficient data.
pub fn train_pca(inputs: &[SliceImage], targets: &[SliceImage], r: usize) -> Result<PcaModel> {
    let n = inputs.len();
    if n == 0 {
        return Err(FdpError::EmptyInput);
    }
    if targets.len() != n {
        return Err(FdpError::DimMismatch(format!("{n} inputs vs {} targets", targets.len())));
    }
    if r > n {
        return Err(FdpError::InvalidParameter(format!("rank {r} exceeds {n} training samples")));
    }
    let (h, w) = (inputs[0].height(), inputs[0].width());
    if let Some(bad) = inputs.iter().chain(targets).find(|s| s.height() != h || s.width() != w) {
        return Err(FdpError::DimMismatch(format!("slice {}x{} vs {h}x{w}", bad.height(), bad.width())));
    }
    let (xc, input_mean) = stack(inputs);
    let (yc, target_mean) = stack(targets);
    let gram = &xc * xc.transpose();
    let eig = gram.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let top = eigenvalues[0];
    if r > 0 && !(top > 0.0) {
        return Err(FdpError::ZeroVariance);
    }
    let kept: Vec<usize> = order
        .iter()
        .take(r)
        .copied()
        .filter(|&i| eig.eigenvalues[i] > RANK_TOLERANCE * top)
        .collect();
    let mut input_components = Vec::with_capacity(kept.len());
    let mut target_components = Vec::with_capacity(kept.len());
    for &i in &kept {
        let u = eig.eigenvectors.column(i);
        let scale = 1.0 / eig.eigenvalues[i].sqrt();
        let b_in = xc.tr_mul(&u) * scale;
        let b_t = yc.tr_mul(&u) * scale;
        input_components.push(b_in.iter().copied().collect());
        target_components.push(b_t.iter().copied().collect());
    }
    Ok(PcaModel { height: h, width: w, input_mean, input_components, target_mean, target_components, eigenvalues })
}

/// Separable box blur with replicated borders.
pub fn box_blur(s: &SliceImage, radius: usize) -> SliceImage {
    let (h, w) = (s.height(), s.width());
    let norm = 1.0 / (2 * radius + 1) as f64;
    let r = radius as isize;
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let acc: f64 = (-r..=r).map(|dx| s.get(y, clamp(x as isize + dx, w))).sum();
            tmp[y * w + x] = acc * norm;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let acc: f64 = (-r..=r).map(|dy| tmp[clamp(y as isize + dy, h) * w + x]).sum();
            out[y * w + x] = acc * norm;
        }
    }
    SliceImage::new(h, w, out).expect("same dims as input")
}

/// Pluggable healthy-image model.
#[derive(Debug, Clone, PartialEq)]
pub enum Reconstructor {
    Identity,
    Smoother { radius: usize },
    Pca(PcaModel),
}

impl Reconstructor {
    pub fn reconstruct(&self, s: &SliceImage) -> Result<SliceImage> {
        match self {
            Reconstructor::Identity => Ok(s.clone()),
            Reconstructor::Smoother { radius } => Ok(box_blur(s, *radius)),
            Reconstructor::Pca(model) => model.reconstruct(s),
        }
    }

    pub fn variant(&self) -> &'static str {
        match self {
            Reconstructor::Identity => "identity",
            Reconstructor::Smoother { .. } => "smoother",
            Reconstructor::Pca(_) => "pca",
        }
    }
}

pub fn reconstruct(model: &Reconstructor, s: &SliceImage) -> Result<SliceImage> {
    model.reconstruct(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelHeader {
    pub variant: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<usize>,
    #[serde(rename = "H", default, skip_serializing_if = "Option::is_none")]
    pub height: Option<usize>,
    #[serde(rename = "W", default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
}

/// Writes a JSON header at `path`; PCA models also write a sibling `.bin`
/// with f32 `input_mean, input_components, target_mean, target_components`.
pub fn save_model(model: &Reconstructor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut header = ModelHeader { variant: model.variant().to_string(), radius: None, height: None, width: None, rank: None };
    match model {
        Reconstructor::Identity => {}
        Reconstructor::Smoother { radius } => header.radius = Some(*radius),
        Reconstructor::Pca(p) => {
            header.height = Some(p.height);
            header.width = Some(p.width);
            header.rank = Some(p.rank());
            let mut payload = p.input_mean.clone();
            p.input_components.iter().for_each(|c| payload.extend_from_slice(c));
            payload.extend_from_slice(&p.target_mean);
            p.target_components.iter().for_each(|c| payload.extend_from_slice(c));
            write_f32_payload(&payload_path(path), &payload)?;
        }
    }
    fs::write(path, serde_json::to_string_pretty(&header)? + "\n")?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Reconstructor> {
    let path = path.as_ref();
    let header: ModelHeader = serde_json::from_str(&fs::read_to_string(path)?)?;
    let missing = |f: &str| FdpError::MalformedHeader(format!("pca header lacks {f}"));
    match header.variant.as_str() {
        "identity" => Ok(Reconstructor::Identity),
        "smoother" => Ok(Reconstructor::Smoother { radius: header.radius.ok_or_else(|| missing("radius"))? }),
        "pca" => {
            let h = header.height.ok_or_else(|| missing("H"))?;
            let w = header.width.ok_or_else(|| missing("W"))?;
            let rank = header.rank.ok_or_else(|| missing("rank"))?;
            let len = h * w;
            let values = read_f32_payload(&payload_path(path), 2 * len * (rank + 1))?;
            let mut chunks = values.chunks_exact(len).map(<[f64]>::to_vec);
            let input_mean = chunks.next().unwrap();
            let input_components: Vec<Vec<f64>> = chunks.by_ref().take(rank).collect();
            let target_mean = chunks.next().unwrap();
            let target_components: Vec<Vec<f64>> = chunks.take(rank).collect();
            Ok(Reconstructor::Pca(PcaModel {
                height: h,
                width: w,
                input_mean,
                input_components,
                target_mean,
                target_components,
                eigenvalues: Vec::new(),
            }))
        }
        other => Err(FdpError::MalformedHeader(format!("unknown variant {other}"))),
    }
}
