//! k-means++ seeding followed by Lloyd iterations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{FdpError, Result};
use crate::matrix::{squared_distance, DataMatrix};
use crate::par::*;

pub const MAX_LLOYD_ITERS: usize = 100;

#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub centers: DataMatrix,
    pub assignment: Vec<usize>,
    pub iterations: usize,
}

/// Picks `k` seeds: the first uniformly, each next one with probability
/// proportional to squared distance from the nearest seed already chosen.
pub fn kmeanspp_seeds(data: &DataMatrix, k: usize, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    let n = data.rows();
    if k == 0 {
        return Err(FdpError::InvalidParameter("k must be at least 1".into()));
    }
    if n < k {
        return Err(FdpError::InvalidParameter(format!("{n} samples for {k} clusters")));
    }
    let mut seeds = vec![rng.random_range(0..n)];
    let mut nearest: Vec<f64> =
        (0..n).map(|i| squared_distance(data.row(i), data.row(seeds[0]))).collect();
    while seeds.len() < k {
        let total: f64 = nearest.iter().sum();
        if !(total > 0.0) {
            return Err(FdpError::DegenerateData);
        }
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = None;
        for (i, &d) in nearest.iter().enumerate() {
            acc += d;
            if d > 0.0 && acc > target {
                pick = Some(i);
                break;
            }
        }
        // Rounding can leave `acc` a hair below `target`; take the last
        // candidate with nonzero weight.
        let pick = pick.unwrap_or_else(|| nearest.iter().rposition(|&d| d > 0.0).unwrap());
        seeds.push(pick);
        let c = data.row(pick);
        nearest
            .par_iter_mut()
            .enumerate()
            .for_each(|(i, d)| *d = d.min(squared_distance(data.row(i), c)));
    }
    Ok(seeds)
}

fn assign(data: &DataMatrix, centers: &DataMatrix) -> Vec<usize> {
    (0..data.rows())
        .into_par_iter()
        .map(|i| {
            let row = data.row(i);
            let mut best = (0, f64::INFINITY);
            for c in 0..centers.rows() {
                let d = squared_distance(row, centers.row(c));
                if d < best.1 {
                    best = (c, d);
                }
            }
            best.0
        })
        .collect()
}

fn update(data: &DataMatrix, assignment: &[usize], centers: &mut DataMatrix) {
    let k = centers.rows();
    let dim = data.cols();
    let mut sums = vec![0.0; k * dim];
    let mut counts = vec![0usize; k];
    for (i, &a) in assignment.iter().enumerate() {
        counts[a] += 1;
        for (s, x) in sums[a * dim..(a + 1) * dim].iter_mut().zip(data.row(i)) {
            *s += x;
        }
    }
    for c in 0..k {
        // Empty clusters keep their previous center.
        if counts[c] > 0 {
            let inv = 1.0 / counts[c] as f64;
            for (dst, s) in centers.row_mut(c).iter_mut().zip(&sums[c * dim..(c + 1) * dim]) {
                *dst = s * inv;
            }
        }
    }
}

/// k-means++ seeding, then Lloyd until the assignment stops changing or
/// [`MAX_LLOYD_ITERS`] iterations.
pub fn kmeans(data: &DataMatrix, k: usize, seed: u64) -> Result<KMeansResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seeds = kmeanspp_seeds(data, k, &mut rng)?;
    let rows: Vec<Vec<f64>> = seeds.iter().map(|&i| data.row(i).to_vec()).collect();
    let mut centers = DataMatrix::from_rows(&rows)?;
    let mut assignment = assign(data, &centers);
    let mut iterations = 0;
    while iterations < MAX_LLOYD_ITERS {
        update(data, &assignment, &mut centers);
        iterations += 1;
        let next = assign(data, &centers);
        if next == assignment {
            break;
        }
        assignment = next;
    }
    Ok(KMeansResult { centers, assignment, iterations })
}
