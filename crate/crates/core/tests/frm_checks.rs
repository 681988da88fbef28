mod common;

use common::{finite_difference_grad, random_matrix, rng};
use fdp_core::frm::kmeans::kmeans;
use fdp_core::frm::{attend_values, frm_grad, frm_loss, kmeanspp_init, train_frm, FrmTrainConfig, LowFreqGeometry, PriorContextBank};
use fdp_core::matrix::DataMatrix;
use fdp_core::phantom::{gen_healthy, PhantomConfig};
use fdp_core::volume::Volume;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, Normal};

fn small_geometry() -> LowFreqGeometry {
    LowFreqGeometry::new(8, 8, 0.2).unwrap()
}

fn min_residual(batch: &DataMatrix, bank: &PriorContextBank) -> f64 {
    batch
        .iter_rows()
        .flat_map(|q| {
            let (recon, _) = attend_values(q, bank).unwrap();
            recon.into_iter().zip(q.to_vec()).map(|(r, q)| (r - q).abs()).collect::<Vec<_>>()
        })
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn gradient_matches_central_differences() {
    let geo = small_geometry();
    let d = geo.dim();
    let mut r = rng(3);
    let mut checked = 0;
    while checked < 20 {
        let k = r.random_range(1..6);
        let n = r.random_range(1..5);
        let bank = PriorContextBank::new(geo, random_matrix(k, d, 1.0, &mut r), 0).unwrap();
        let batch = random_matrix(n, d, 1.0, &mut r);
        if min_residual(&batch, &bank) < 1e-3 {
            continue;
        }
        let g = frm_grad(&batch, &bank).unwrap();
        let fd = finite_difference_grad(&batch, &bank, 1e-6);
        let err: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = fd.iter().map(|b| b * b).sum::<f64>().sqrt();
        assert!(err <= 1e-4 * norm, "instance {checked}: relative error {}", err / norm);
        checked += 1;
    }
}

#[test]
fn zero_residual_batch_has_zero_gradient() {
    let geo = small_geometry();
    let ctx = random_matrix(1, geo.dim(), 1.0, &mut rng(8));
    let bank = PriorContextBank::new(geo, ctx.clone(), 0).unwrap();
    assert_eq!(frm_loss(&ctx, &bank).unwrap(), 0.0);
    assert!(frm_grad(&ctx, &bank).unwrap().iter().all(|&g| g == 0.0));
}

fn bank_and_query() -> impl Strategy<Value = (PriorContextBank, Vec<f64>)> {
    let d = small_geometry().dim();
    (1usize..8, any::<u64>(), 0.1f64..20.0).prop_map(move |(k, seed, scale)| {
        let mut r = rng(seed);
        let bank = PriorContextBank::new(small_geometry(), random_matrix(k, d, scale, &mut r), 0).unwrap();
        let q = random_matrix(1, d, scale, &mut r).row(0).to_vec();
        (bank, q)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn attention_output_is_a_convex_combination((bank, q) in bank_and_query()) {
        let (recon, w) = attend_values(&q, &bank).unwrap();
        prop_assert!(w.iter().all(|&x| x >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        for (j, &r) in recon.iter().enumerate() {
            let col = (0..bank.k()).map(|i| bank.context(i)[j]);
            let lo = col.clone().fold(f64::INFINITY, f64::min);
            let hi = col.fold(f64::NEG_INFINITY, f64::max);
            let slack = 1e-12 * lo.abs().max(hi.abs()).max(1.0);
            prop_assert!(r >= lo - slack && r <= hi + slack);
        }
    }

    #[test]
    fn attention_commutes_with_context_permutation((bank, q) in bank_and_query(), shift in 0usize..8) {
        let k = bank.k();
        let perm: Vec<usize> = (0..k).map(|i| (i + shift) % k).collect();
        let rows: Vec<Vec<f64>> = perm.iter().map(|&i| bank.context(i).to_vec()).collect();
        let permuted = PriorContextBank::new(bank.geometry(), DataMatrix::from_rows(&rows).unwrap(), 0).unwrap();
        let (r1, w1) = attend_values(&q, &bank).unwrap();
        let (r2, w2) = attend_values(&q, &permuted).unwrap();
        for (slot, &i) in perm.iter().enumerate() {
            prop_assert!((w2[slot] - w1[i]).abs() <= 1e-12);
        }
        for (a, b) in r1.iter().zip(&r2) {
            prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        }
    }
}

#[test]
fn kmeans_recovers_two_blobs_on_every_seed() {
    let sigma = 0.5;
    for seed in 0..10 {
        let mut r = rng(100 + seed);
        let noise = Normal::new(0.0, sigma).unwrap();
        let centers = [[0.0, 0.0], [10.0, 0.0]];
        let rows: Vec<Vec<f64>> = (0..400)
            .map(|i| centers[i % 2].iter().map(|c| c + noise.sample(&mut r)).collect())
            .collect();
        let means: Vec<Vec<f64>> = (0..2)
            .map(|b| {
                let pts: Vec<&Vec<f64>> = rows.iter().skip(b).step_by(2).collect();
                (0..2).map(|j| pts.iter().map(|p| p[j]).sum::<f64>() / pts.len() as f64).collect()
            })
            .collect();
        let data = DataMatrix::from_rows(&rows).unwrap();
        let res = kmeans(&data, 2, seed).unwrap();
        for m in &means {
            let best = (0..2)
                .map(|c| res.centers.row(c).iter().zip(m).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
                .fold(f64::INFINITY, f64::min);
            assert!(best <= 0.1 * sigma, "seed {seed}: center off by {best}");
        }
    }
}

fn phantom_volumes(n: u64) -> Vec<Volume> {
    let cfg = PhantomConfig { dims: [20, 64, 64], ..PhantomConfig::default() };
    (0..n).map(|s| gen_healthy(&cfg, 50 + s).unwrap().volume).collect()
}

#[test]
fn training_descends_and_is_deterministic() {
    // 10 volumes of 20 slices: 200 slices.
    let vols = phantom_volumes(10);
    let cfg = FrmTrainConfig { contexts: 16, epochs: 50, ..FrmTrainConfig::default() };
    let (bank, report) = train_frm(&vols, 0.1, &cfg).unwrap();
    assert_eq!(report.loss_history.len(), 50);
    assert!(report.loss_history.last().unwrap() < report.loss_history.first().unwrap());
    let (again, _) = train_frm(&vols, 0.1, &cfg).unwrap();
    assert!(bank.contexts().iter().zip(again.contexts()).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn bank_covering_the_data_starts_near_zero_loss() {
    let geo = small_geometry();
    let data = random_matrix(6, geo.dim(), 20.0, &mut rng(21));
    let bank = kmeanspp_init(&data, geo, 6, 0).unwrap();
    assert!(frm_loss(&data, &bank).unwrap() < 1e-6);
}
