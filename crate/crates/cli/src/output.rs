//! Deterministic data outputs: CSV tables, JSON documents, PGM panels.

use std::fmt::Display;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use fdp_core::volume::{encode_pgm, SliceImage};
use serde::Serialize;

/// A CSV table with a fixed header; cells are formatted with `Display`,
/// which prints the shortest string that round-trips for floats.
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.header.len(), "row width must match the header");
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn render(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_text(path, &self.render())
    }
}

pub fn cell(v: impl Display) -> String {
    v.to_string()
}

/// Optional metrics are left empty.
pub fn opt_cell(v: Option<f64>) -> String {
    v.map(cell).unwrap_or_default()
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn clamp01(s: &SliceImage) -> Vec<f64> {
    s.pixels().iter().map(|p| p.clamp(0.0, 1.0)).collect()
}

fn scale_to_peak(s: &SliceImage) -> Vec<f64> {
    let peak = s.pixels().iter().fold(0.0f64, |m, p| m.max(p.abs()));
    s.pixels().iter().map(|p| if peak > 0.0 { p.abs() / peak } else { 0.0 }).collect()
}

/// Side-by-side `original | Î | reconstruction | residual` grey panel.
/// Images are clamped to `[0, 1]`; the residual is scaled by its peak.
pub fn panel(original: &SliceImage, preprocessed: &SliceImage, recon: &SliceImage, residual: &SliceImage) -> Result<Vec<u8>> {
    let (h, w) = (original.height(), original.width());
    let tiles = [clamp01(original), clamp01(preprocessed), clamp01(recon), scale_to_peak(residual)];
    let mut pixels = Vec::with_capacity(4 * h * w);
    for y in 0..h {
        for t in &tiles {
            pixels.extend_from_slice(&t[y * w..(y + 1) * w]);
        }
    }
    Ok(encode_pgm(h, 4 * w, &pixels)?)
}
