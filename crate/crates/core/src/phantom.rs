//! Seeded brain-like phantoms with Gaussian-bump lesions.
//!
//! Intensity inside the soft ellipsoidal brain profile is
//!
//! ```text
//! cohort base (tissue level, smooth cohort field, ventricles)
//!   + per-sample smooth field, in-plane band limit b cycles
//!   + per-sample band-pass texture
//! ```
//!
//! clamped to `[0, 1]`. The base depends only on the cohort seed, which
//! makes healthy low-frequency content consistent across subjects.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{FdpError, Result};
use crate::par::*;
use crate::volume::{read_volume, write_volume, BrainMask, Dims, Volume};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
const MAX_PLACEMENT_TRIES: usize = 100;
/// RNG stream ids; the same seed drives anatomy and lesions independently.
const STREAM_COHORT: u64 = 1;
const STREAM_FIELD: u64 = 2;
const STREAM_TEXTURE: u64 = 3;
const STREAM_LESION: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomConfig {
    /// `[D, H, W]`.
    pub dims: [usize; 3],
    /// Cohort seed: fixes the shared base pattern.
    pub seed: u64,
    /// In-plane band limit of the per-sample smooth field, in cycles.
    pub band_limit: usize,
    /// Peak magnitude of the per-sample smooth field.
    pub field_amplitude: f64,
    /// Peak magnitude of the texture.
    pub texture_amplitude: f64,
    /// Lowest and highest in-plane texture frequency, in cycles.
    pub texture_band: [usize; 2],
    pub lesion_count: [usize; 2],
    pub lesion_radius: [f64; 2],
    pub lesion_contrast: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            dims: [32, 64, 64],
            seed: 0,
            band_limit: 4,
            field_amplitude: 0.02,
            texture_amplitude: 0.05,
            texture_band: [10, 20],
            lesion_count: [1, 3],
            lesion_radius: [4.0, 10.0],
            lesion_contrast: 0.3,
        }
    }
}

impl PhantomConfig {
    pub fn dims(&self) -> Dims {
        Dims::new(self.dims[0], self.dims[1], self.dims[2])
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dims();
        if d.depth == 0 {
            return Err(FdpError::InvalidDims("phantom depth must be positive".into()));
        }
        crate::volume::check_slice_dims(d.height, d.width)?;
        let [rmin, rmax] = self.lesion_radius;
        if !(rmin > 0.0 && rmin <= rmax && rmax < d.height.min(d.width) as f64 / 3.0) {
            return Err(FdpError::InvalidParameter(format!("lesion radius range [{rmin}, {rmax}]")));
        }
        let [cmin, cmax] = self.lesion_count;
        if cmin == 0 || cmin > cmax {
            return Err(FdpError::InvalidParameter(format!("lesion count range [{cmin}, {cmax}]")));
        }
        if !(self.lesion_contrast.abs() <= 1.0) {
            return Err(FdpError::InvalidParameter(format!("lesion contrast {}", self.lesion_contrast)));
        }
        if self.texture_band[0] > self.texture_band[1] {
            return Err(FdpError::InvalidParameter("texture band is reversed".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSample {
    pub volume: Volume,
    pub brain: BrainMask,
    pub lesion: BrainMask,
    pub seed: u64,
    pub config: PhantomConfig,
}

impl PhantomSample {
    pub fn is_lesioned(&self) -> bool {
        self.lesion.count() > 0
    }
}

/// Ellipsoid geometry in voxel units around the volume center.
#[derive(Debug, Clone, Copy)]
struct Ellipsoid {
    center: [f64; 3],
    semi: [f64; 3],
}

impl Ellipsoid {
    fn brain(d: Dims) -> Self {
        Self {
            center: [d.depth as f64 / 2.0, d.height as f64 / 2.0, d.width as f64 / 2.0],
            semi: [0.42 * d.depth as f64, 0.40 * d.height as f64, 0.34 * d.width as f64],
        }
    }

    /// Ellipsoidal radius of the voxel center `(z, y, x)`.
    fn rho(&self, z: usize, y: usize, x: usize) -> f64 {
        let p = [z as f64 + 0.5, y as f64 + 0.5, x as f64 + 0.5];
        (0..3)
            .map(|i| ((p[i] - self.center[i]) / self.semi[i]).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// The analytic brain mask: voxel centers with ellipsoidal radius ≤ 1.
pub fn brain_mask(dims: Dims) -> BrainMask {
    let e = Ellipsoid::brain(dims);
    BrainMask::from_fn(dims, |z, y, x| e.rho(z, y, x) <= 1.0)
}

/// Tissue level, ventricle depth and the widths (in ellipsoidal radius) of
/// the brain and ventricle edges.
const TISSUE_LEVEL: f64 = 0.3;
const VENTRICLE_DEPTH: f64 = 0.15;
const BRAIN_EDGE: f64 = 0.25;
const VENTRICLE_EDGE: f64 = 0.35;

/// Soft brain support, 1/2 on the mask boundary.
fn profile(rho: f64) -> f64 {
    smooth_step(rho, BRAIN_EDGE)
}

fn smooth_step(rho: f64, edge: f64) -> f64 {
    0.5 * (1.0 - ((rho - 1.0) / edge).tanh())
}

/// Sum of random plane waves with integer frequencies, rescaled so its
/// peak magnitude over the volume equals `amplitude`.
struct WaveField {
    waves: Vec<([i64; 3], Complex64)>,
    amplitude: f64,
}

impl WaveField {
    /// `in_plane` bounds the in-plane frequency radius (cycles) and `depth`
    /// the absolute axial frequency.
    fn random(rng: &mut ChaCha8Rng, count: usize, in_plane: (f64, f64), depth: i64, amplitude: f64) -> Self {
        let hi = in_plane.1.floor() as i64;
        let mut candidates = Vec::new();
        for ky in -hi..=hi {
            for kx in -hi..=hi {
                let r = ((ky * ky + kx * kx) as f64).sqrt();
                if r >= in_plane.0 && r <= in_plane.1 && (ky, kx) != (0, 0) {
                    candidates.push((ky, kx));
                }
            }
        }
        let waves = (0..count)
            .map(|_| {
                let (ky, kx) = candidates[rng.random_range(0..candidates.len())];
                let kz = rng.random_range(-depth..=depth);
                let a: f64 = StandardNormal.sample(rng);
                let phase = rng.random_range(0.0..2.0 * PI);
                ([kz, ky, kx], Complex64::from_polar(a, phase))
            })
            .collect();
        Self { waves, amplitude }
    }

    fn fill(&self, d: Dims) -> Vec<f64> {
        let table = |k: i64, n: usize| -> Vec<Complex64> {
            (0..n).map(|i| Complex64::from_polar(1.0, 2.0 * PI * (k * i as i64) as f64 / n as f64)).collect()
        };
        let tables: Vec<[Vec<Complex64>; 3]> = self
            .waves
            .iter()
            .map(|(k, _)| [table(k[0], d.depth), table(k[1], d.height), table(k[2], d.width)])
            .collect();
        let mut out = vec![0.0; d.len()];
        out.par_chunks_mut(d.slice_len()).enumerate().for_each(|(z, plane)| {
            for ((_, c), t) in self.waves.iter().zip(&tables) {
                let cz = c * t[0][z];
                for y in 0..d.height {
                    let czy = cz * t[1][y];
                    let row = &mut plane[y * d.width..(y + 1) * d.width];
                    for (p, ex) in row.iter_mut().zip(&t[2]) {
                        *p += (czy * ex).re;
                    }
                }
            }
        });
        let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if peak > 0.0 {
            let s = self.amplitude / peak;
            out.iter_mut().for_each(|v| *v *= s);
        }
        out
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Shared anatomy of a cohort, before the soft brain profile is applied.
fn cohort_base(cfg: &PhantomConfig) -> Vec<f64> {
    let d = cfg.dims();
    let mut rng = rng_for(cfg.seed, STREAM_COHORT);
    let field = WaveField::random(&mut rng, 16, (1.0, 3.0), 1, 0.05);
    let brain = Ellipsoid::brain(d);
    let jitter = |rng: &mut ChaCha8Rng| rng.random_range(-0.1..0.1);
    let (dy, dx) = (jitter(&mut rng), jitter(&mut rng));
    let ventricles: Vec<Ellipsoid> = [-1.0, 1.0]
        .iter()
        .map(|side| Ellipsoid {
            center: [
                brain.center[0],
                brain.center[1] + (dy - 0.05) * d.height as f64,
                brain.center[2] + (side * 0.09 + dx * 0.3) * d.width as f64,
            ],
            semi: [0.20 * d.depth as f64, 0.14 * d.height as f64, 0.06 * d.width as f64],
        })
        .collect();
    let mut out = field.fill(d);
    for z in 0..d.depth {
        for y in 0..d.height {
            for x in 0..d.width {
                let vent: f64 = ventricles.iter().map(|v| smooth_step(v.rho(z, y, x), VENTRICLE_EDGE)).sum();
                out[d.index(z, y, x)] += TISSUE_LEVEL - VENTRICLE_DEPTH * vent.min(1.0);
            }
        }
    }
    out
}

/// A healthy subject: cohort base plus per-sample field and texture.
pub fn gen_healthy(cfg: &PhantomConfig, seed: u64) -> Result<PhantomSample> {
    cfg.validate()?;
    let d = cfg.dims();
    let base = cohort_base(cfg);
    let field = WaveField::random(
        &mut rng_for(seed, STREAM_FIELD),
        24,
        (1.0, cfg.band_limit as f64),
        2,
        cfg.field_amplitude,
    )
    .fill(d);
    let [t_lo, t_hi] = cfg.texture_band;
    let texture = WaveField::random(
        &mut rng_for(seed, STREAM_TEXTURE),
        64,
        (t_lo as f64, t_hi as f64),
        (d.depth / 4) as i64,
        cfg.texture_amplitude,
    )
    .fill(d);
    let brain = Ellipsoid::brain(d);
    let mut voxels = vec![0f32; d.len()];
    for z in 0..d.depth {
        for y in 0..d.height {
            for x in 0..d.width {
                let i = d.index(z, y, x);
                let profile = profile(brain.rho(z, y, x));
                voxels[i] = (profile * (base[i] + field[i] + texture[i])).clamp(0.0, 1.0) as f32;
            }
        }
    }
    Ok(PhantomSample {
        volume: Volume::new(d, voxels)?,
        brain: brain_mask(d),
        lesion: BrainMask::empty(d),
        seed,
        config: cfg.clone(),
    })
}

/// Lesion placement: center in voxel coordinates and nominal radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LesionSpec {
    pub center: [f64; 3],
    pub radius: f64,
}

fn ball_inside(brain: &BrainMask, spec: &LesionSpec) -> bool {
    let d = brain.dims();
    let r = spec.radius;
    let lo = |c: f64| (c - r - 0.5).floor();
    let hi = |c: f64| (c + r - 0.5).ceil();
    let [cz, cy, cx] = spec.center;
    if lo(cz) < 0.0 || lo(cy) < 0.0 || lo(cx) < 0.0 {
        return false;
    }
    if hi(cz) >= d.depth as f64 || hi(cy) >= d.height as f64 || hi(cx) >= d.width as f64 {
        return false;
    }
    for z in lo(cz) as usize..=hi(cz) as usize {
        for y in lo(cy) as usize..=hi(cy) as usize {
            for x in lo(cx) as usize..=hi(cx) as usize {
                let d2 = (z as f64 + 0.5 - cz).powi(2) + (y as f64 + 0.5 - cy).powi(2) + (x as f64 + 0.5 - cx).powi(2);
                if d2 <= r * r && !brain.get(z, y, x) {
                    return false;
                }
            }
        }
    }
    true
}

/// Adds Gaussian bumps (`σ = radius / 2`, peak = contrast) at `specs`.
/// The lesion mask is where the added value exceeds a quarter of the
/// contrast, intersected with the brain.
pub fn inject_lesions_at(sample: &PhantomSample, specs: &[LesionSpec]) -> Result<PhantomSample> {
    let delta = sample.config.lesion_contrast;
    if delta == 0.0 || specs.is_empty() {
        return Err(FdpError::DegenerateLesion);
    }
    let d = sample.volume.dims();
    let brain_shape = Ellipsoid::brain(d);
    let mut added = vec![0.0f64; d.len()];
    for spec in specs {
        if !ball_inside(&sample.brain, spec) {
            return Err(FdpError::LesionPlacement);
        }
        let sigma = spec.radius / 2.0;
        let reach = 4.0 * sigma;
        let [cz, cy, cx] = spec.center;
        let span = |c: f64, n: usize| {
            let lo = (c - reach).floor().max(0.0) as usize;
            let hi = ((c + reach).ceil() as usize).min(n - 1);
            lo..=hi
        };
        for z in span(cz, d.depth) {
            for y in span(cy, d.height) {
                for x in span(cx, d.width) {
                    let d2 = (z as f64 + 0.5 - cz).powi(2) + (y as f64 + 0.5 - cy).powi(2) + (x as f64 + 0.5 - cx).powi(2);
                    let profile = profile(brain_shape.rho(z, y, x));
                    added[d.index(z, y, x)] += delta * (-d2 / (2.0 * sigma * sigma)).exp() * profile;
                }
            }
        }
    }
    let mut volume = sample.volume.clone();
    for (v, a) in volume.voxels_mut().iter_mut().zip(&added) {
        *v = (*v as f64 + a).clamp(0.0, 1.0) as f32;
    }
    let cut = delta.abs() / 4.0;
    let bits = added
        .iter()
        .zip(sample.brain.bits())
        .map(|(a, &b)| b && a.abs() > cut)
        .collect();
    let lesion = BrainMask::new(d, bits)?;
    if lesion.count() == 0 {
        return Err(FdpError::DegenerateLesion);
    }
    Ok(PhantomSample { volume, lesion, ..sample.clone() })
}

/// Draws 1–3 (configurable) lesion placements fully inside the brain.
pub fn sample_lesion_specs(sample: &PhantomSample, seed: u64) -> Result<Vec<LesionSpec>> {
    let cfg = &sample.config;
    let d = sample.volume.dims();
    let e = Ellipsoid::brain(d);
    let mut rng = rng_for(seed, STREAM_LESION);
    let count = rng.random_range(cfg.lesion_count[0]..=cfg.lesion_count[1]);
    let mut specs = Vec::with_capacity(count);
    for _ in 0..count {
        let radius = rng.random_range(cfg.lesion_radius[0]..=cfg.lesion_radius[1]);
        let mut placed = None;
        for _ in 0..MAX_PLACEMENT_TRIES {
            let mut center = [0.0; 3];
            for (axis, c) in center.iter_mut().enumerate() {
                let half = (e.semi[axis] - radius).max(0.0);
                *c = e.center[axis] + rng.random_range(-1.0..=1.0) * half;
            }
            let spec = LesionSpec { center, radius };
            if ball_inside(&sample.brain, &spec) {
                placed = Some(spec);
                break;
            }
        }
        specs.push(placed.ok_or(FdpError::LesionPlacement)?);
    }
    Ok(specs)
}

pub fn inject_lesion(sample: &PhantomSample, seed: u64) -> Result<PhantomSample> {
    if sample.config.lesion_contrast == 0.0 {
        return Err(FdpError::DegenerateLesion);
    }
    let specs = sample_lesion_specs(sample, seed)?;
    inject_lesions_at(sample, &specs)
}

/// A lesioned subject: healthy anatomy and lesions from the same seed.
pub fn gen_lesioned(cfg: &PhantomConfig, seed: u64) -> Result<PhantomSample> {
    inject_lesion(&gen_healthy(cfg, seed)?, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Val,
    Test,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Train => "train",
            Role::Val => "val",
            Role::Test => "test",
        }
    }

    pub fn lesioned(self) -> bool {
        self != Role::Train
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub role: Role,
    pub seed: u64,
    /// Volume with the brain mask embedded, relative to the dataset root.
    pub path: String,
    /// Lesion ground truth (voxels 0/1), present for lesioned entries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lesion_path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub cohort_seed: u64,
    pub config: PhantomConfig,
    pub entries: Vec<ManifestEntry>,
}

/// Per-sample seeds derived from the cohort seed, in manifest order.
pub fn derive_seeds(cohort_seed: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(cohort_seed);
    (0..n).map(|_| rng.random()).collect()
}

pub fn generate_entry(cfg: &PhantomConfig, role: Role, seed: u64) -> Result<PhantomSample> {
    if role.lesioned() {
        gen_lesioned(cfg, seed)
    } else {
        gen_healthy(cfg, seed)
    }
}

fn lesion_volume(mask: &BrainMask) -> Volume {
    Volume::new(mask.dims(), mask.bits().iter().map(|&b| b as u8 as f32).collect()).expect("mask dims are valid")
}

/// Writes `n_train` healthy and `n_val`/`n_test` lesioned FVOL files plus
/// `manifest.json` under `out`.
pub fn gen_dataset(
    cfg: &PhantomConfig,
    cohort_seed: u64,
    n_train: usize,
    n_val: usize,
    n_test: usize,
    out: impl AsRef<Path>,
) -> Result<Manifest> {
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(FdpError::InvalidParameter("every split needs at least one sample".into()));
    }
    let cfg = PhantomConfig { seed: cohort_seed, ..cfg.clone() };
    cfg.validate()?;
    let out = out.as_ref();
    let roles: Vec<(Role, usize)> = [(Role::Train, n_train), (Role::Val, n_val), (Role::Test, n_test)]
        .iter()
        .flat_map(|&(r, n)| (0..n).map(move |i| (r, i)))
        .collect();
    let seeds = derive_seeds(cohort_seed, roles.len());
    for r in [Role::Train, Role::Val, Role::Test] {
        fs::create_dir_all(out.join(r.name()))?;
    }
    let entries: Vec<ManifestEntry> = roles
        .par_iter()
        .zip(seeds.par_iter())
        .map(|(&(role, i), &seed)| -> Result<ManifestEntry> {
            let sample = generate_entry(&cfg, role, seed)?;
            let path = format!("{}/{:03}.fvol", role.name(), i);
            write_volume(out.join(&path), &sample.volume, Some(&sample.brain))?;
            let lesion_path = if role.lesioned() {
                let p = format!("{}/{:03}_lesion.fvol", role.name(), i);
                write_volume(out.join(&p), &lesion_volume(&sample.lesion), None)?;
                Some(p)
            } else {
                None
            };
            Ok(ManifestEntry { role, seed, path, lesion_path })
        })
        .collect::<Result<_>>()?;
    let manifest = Manifest { version: MANIFEST_VERSION, cohort_seed, config: cfg, entries };
    fs::write(out.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

/// One loaded dataset entry.
#[derive(Debug, Clone)]
pub struct LoadedEntry {
    pub entry: ManifestEntry,
    pub volume: Volume,
    pub brain: BrainMask,
    pub lesion: BrainMask,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
    pub entries: Vec<LoadedEntry>,
}

impl Dataset {
    pub fn load(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let manifest = read_manifest(&root)?;
        let entries = manifest
            .entries
            .par_iter()
            .map(|e| -> Result<LoadedEntry> {
                let (volume, brain) = read_volume(root.join(&e.path))?;
                let brain = brain.ok_or_else(|| FdpError::MalformedHeader(format!("{} lacks a brain mask", e.path)))?;
                let lesion = match &e.lesion_path {
                    Some(p) => {
                        let (lv, _) = read_volume(root.join(p))?;
                        BrainMask::new(lv.dims(), lv.voxels().iter().map(|&x| x > 0.5).collect())?
                    }
                    None => BrainMask::empty(volume.dims()),
                };
                Ok(LoadedEntry { entry: e.clone(), volume, brain, lesion })
            })
            .collect::<Result<_>>()?;
        Ok(Self { root, manifest, entries })
    }

    pub fn split(&self, role: Role) -> Vec<&LoadedEntry> {
        self.entries.iter().filter(|e| e.entry.role == role).collect()
    }

    pub fn volumes(&self, role: Role) -> Vec<Volume> {
        self.split(role).into_iter().map(|e| e.volume.clone()).collect()
    }
}

pub fn read_manifest(root: impl AsRef<Path>) -> Result<Manifest> {
    let text = fs::read_to_string(root.as_ref().join(MANIFEST_FILE))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.version != MANIFEST_VERSION {
        return Err(FdpError::UnsupportedVersion(manifest.version));
    }
    Ok(manifest)
}
