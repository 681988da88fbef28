//! Brute-force reference implementations shared by the integration tests
//! and the acceptance suite. Nothing here calls into the library's own
//! numerics.

#![allow(dead_code)]

use std::f64::consts::PI;

use fdp_core::frm::{frm_loss, PriorContextBank};
use fdp_core::matrix::DataMatrix;
use fdp_core::volume::{BrainMask, Dims, SliceImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_slice(h: usize, w: usize, rng: &mut ChaCha8Rng) -> SliceImage {
    SliceImage::new(h, w, (0..h * w).map(|_| rng.random::<f64>()).collect()).unwrap()
}

pub fn random_matrix(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> DataMatrix {
    DataMatrix::new(rows, cols, (0..rows * cols).map(|_| scale * (2.0 * rng.random::<f64>() - 1.0)).collect()).unwrap()
}

/// Direct double-sum DFT as `(re, im)` pairs, with DC moved to `(H/2, W/2)`.
pub fn naive_dft_centered(s: &SliceImage) -> Vec<(f64, f64)> {
    let (h, w) = (s.height(), s.width());
    let mut out = vec![(0.0, 0.0); h * w];
    for u in 0..h {
        for v in 0..w {
            let (mut re, mut im) = (0.0, 0.0);
            for x in 0..h {
                for y in 0..w {
                    let phase = -2.0 * PI * ((u * x) as f64 / h as f64 + (v * y) as f64 / w as f64);
                    re += s.get(x, y) * phase.cos();
                    im += s.get(x, y) * phase.sin();
                }
            }
            out[((u + h / 2) % h) * w + (v + w / 2) % w] = (re, im);
        }
    }
    out
}

/// Fraction of (positive, negative) pairs ranked correctly, ties half.
pub fn pairwise_auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut good = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                good += 1.0;
            } else if si == sj {
                good += 0.5;
            }
        }
    }
    good / pairs
}

/// Average precision by enumerating every distinct score as a threshold.
pub fn enumerated_auprc(scores: &[f64], labels: &[bool]) -> f64 {
    let positives = labels.iter().filter(|&&l| l).count() as f64;
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut ap = 0.0;
    let mut last_recall = 0.0;
    for t in thresholds {
        let mut tp = 0.0;
        let mut predicted = 0.0;
        for (&s, &l) in scores.iter().zip(labels) {
            if s >= t {
                predicted += 1.0;
                if l {
                    tp += 1.0;
                }
            }
        }
        let recall = tp / positives;
        ap += (recall - last_recall) * (tp / predicted);
        last_recall = recall;
    }
    ap
}

/// `k³` mean with every neighbor index clamped into the grid.
pub fn clamped_mean_filter(dims: Dims, values: &[f32], k: usize) -> Vec<f32> {
    let r = (k / 2) as i64;
    let clamp = |i: i64, n: usize| i.clamp(0, n as i64 - 1) as usize;
    let norm = 1.0 / (k * k * k) as f64;
    let mut out = vec![0.0f32; values.len()];
    for z in 0..dims.depth {
        for y in 0..dims.height {
            for x in 0..dims.width {
                let mut acc = 0.0f64;
                for dz in -r..=r {
                    for dy in -r..=r {
                        for dx in -r..=r {
                            let (zz, yy, xx) = (
                                clamp(z as i64 + dz, dims.depth),
                                clamp(y as i64 + dy, dims.height),
                                clamp(x as i64 + dx, dims.width),
                            );
                            acc += values[dims.index(zz, yy, xx)] as f64;
                        }
                    }
                }
                out[dims.index(z, y, x)] = (acc * norm) as f32;
            }
        }
    }
    out
}

/// City-block distance from each voxel to the nearest background voxel,
/// where everything outside the grid counts as background.
pub fn l1_distance_to_background(mask: &BrainMask) -> Vec<usize> {
    let dims = mask.dims();
    let background: Vec<(usize, usize, usize)> = (0..dims.depth)
        .flat_map(|z| (0..dims.height).flat_map(move |y| (0..dims.width).map(move |x| (z, y, x))))
        .filter(|&(z, y, x)| !mask.get(z, y, x))
        .collect();
    let mut out = vec![0; dims.len()];
    for z in 0..dims.depth {
        for y in 0..dims.height {
            for x in 0..dims.width {
                if !mask.get(z, y, x) {
                    continue;
                }
                let edge = [z + 1, dims.depth - z, y + 1, dims.height - y, x + 1, dims.width - x];
                let mut best = *edge.iter().min().unwrap();
                for &(bz, by, bx) in &background {
                    best = best.min(z.abs_diff(bz) + y.abs_diff(by) + x.abs_diff(bx));
                }
                out[dims.index(z, y, x)] = best;
            }
        }
    }
    out
}

/// Erosion by the city-block ball of radius `iters`.
pub fn distance_erosion(mask: &BrainMask, iters: usize) -> BrainMask {
    let dist = l1_distance_to_background(mask);
    BrainMask::new(mask.dims(), dist.iter().map(|&d| d > iters).collect()).unwrap()
}

/// Random union of a few boxes and balls.
pub fn random_blob(dims: Dims, rng: &mut ChaCha8Rng) -> BrainMask {
    let shapes: Vec<([f64; 3], f64, bool)> = (0..rng.random_range(1..5))
        .map(|_| {
            let c = [
                rng.random::<f64>() * dims.depth as f64,
                rng.random::<f64>() * dims.height as f64,
                rng.random::<f64>() * dims.width as f64,
            ];
            (c, rng.random_range(1.0..4.0), rng.random::<bool>())
        })
        .collect();
    BrainMask::from_fn(dims, |z, y, x| {
        let p = [z as f64, y as f64, x as f64];
        shapes.iter().any(|(c, r, ball)| {
            if *ball {
                p.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum::<f64>() <= r * r
            } else {
                p.iter().zip(c).all(|(a, b)| (a - b).abs() <= *r)
            }
        })
    })
}

/// Central differences of the batch loss with respect to every context
/// coordinate.
pub fn finite_difference_grad(batch: &DataMatrix, bank: &PriorContextBank, step: f64) -> Vec<f64> {
    let base = bank.contexts().to_vec();
    let (k, d) = (bank.k(), bank.dim());
    let shifted = |j: usize, delta: f64| {
        let mut p = base.clone();
        p[j] += delta;
        let b = PriorContextBank::new(bank.geometry(), DataMatrix::new(k, d, p).unwrap(), bank.seed).unwrap();
        frm_loss(batch, &b).unwrap()
    };
    (0..k * d).map(|j| (shifted(j, step) - shifted(j, -step)) / (2.0 * step)).collect()
}

pub fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng)
}

/// `count` orthonormal directions in `dim` dimensions by Gram–Schmidt.
pub fn orthonormal_basis(dim: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
        for b in &basis {
            let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            basis.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    basis
}

/// `n` points whose coordinates along `basis` come from `coords`.
pub fn embed(basis: &[Vec<f64>], n: usize, mut coords: impl FnMut() -> Vec<f64>) -> DataMatrix {
    let dim = basis[0].len();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let c = coords();
            (0..dim).map(|j| basis.iter().zip(&c).map(|(b, a)| a * b[j]).sum()).collect()
        })
        .collect();
    DataMatrix::from_rows(&rows).unwrap()
}

/// Uniform samples on a unit segment in `dim` dimensions.
pub fn segment_cloud(dim: usize, n: usize, seed: u64) -> DataMatrix {
    let mut r = rng(seed);
    let basis = orthonormal_basis(dim, 1, &mut r);
    let mut coord = rng(seed ^ 0xface);
    embed(&basis, n, || vec![coord.random::<f64>()])
}

/// Standard Gaussian on a random `sub`-dimensional subspace.
pub fn subspace_gaussian(dim: usize, sub: usize, n: usize, seed: u64) -> DataMatrix {
    let mut r = rng(seed);
    let basis = orthonormal_basis(dim, sub, &mut r);
    let mut coord = rng(seed ^ 0xface);
    embed(&basis, n, || (0..sub).map(|_| gaussian(&mut coord)).collect())
}
