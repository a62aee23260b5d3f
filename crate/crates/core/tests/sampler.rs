//! Long-run behaviour of the teaching sampler on one-dimensional targets,
//! checked against densities normalized on a dense grid.

use nalgebra::{DMatrix, DVector};
use pedagogue::bayes::log_sum_exp;
use pedagogue::exact::{teaching_log_score, TeachingTarget};
use pedagogue::phoneme::{CategoryModel, PhonemeSpec};
use pedagogue::teacher::{run_chains, ChainSchedule};

fn toy_model(means: &[f64]) -> CategoryModel {
    let phonemes = means
        .iter()
        .enumerate()
        .map(|(i, &m)| PhonemeSpec::new(format!("c{i}"), DVector::from_element(1, m), DMatrix::from_element(1, 1, 1.0), 1).unwrap())
        .collect();
    CategoryModel::new(phonemes).unwrap()
}

fn schedule(seed: u64) -> ChainSchedule {
    ChainSchedule {
        chains: 5,
        burn_in: 1000,
        thin: 10,
        samples_per_chain: 10_000,
        proposal_sd: 1.0,
        autotune: true,
        seed,
        ..ChainSchedule::default()
    }
}

#[test]
fn single_point_histogram_matches_grid() {
    let model = toy_model(&[0.0]);
    let target = TeachingTarget::from_model(&model);
    let (lo, width, bins, sub) = (-10.0, 0.25, 80usize, 8usize);
    let h = width / sub as f64;
    let logs: Vec<f64> = (0..bins * sub)
        .map(|i| {
            let x = DMatrix::from_element(1, 1, lo + (i as f64 + 0.5) * h);
            teaching_log_score(&x, &target, model.prior(), model.alpha()).unwrap()
        })
        .collect();
    let z = log_sum_exp(&logs);
    let mut grid = vec![0.0; bins];
    for (i, l) in logs.iter().enumerate() {
        grid[i / sub] += (l - z).exp();
    }

    let (samples, _) = run_chains(&model, &schedule(11)).unwrap();
    let mut hist = vec![0.0; bins];
    let mut outside = 0.0;
    let w = 1.0 / samples.len() as f64;
    for s in &samples {
        let b = ((s.points[(0, 0)] - lo) / width).floor();
        if (0.0..bins as f64).contains(&b) {
            hist[b as usize] += w;
        } else {
            outside += w;
        }
    }
    let tv = 0.5 * (hist.iter().zip(&grid).map(|(a, b)| (a - b).abs()).sum::<f64>() + outside);
    assert!(tv < 0.05, "tv = {tv}");
}

#[test]
fn two_point_means_match_grid() {
    let model = toy_model(&[-5.0, 5.0]);
    let target = TeachingTarget::from_model(&model);
    let (lo, hi, n) = (-15.0, 15.0, 600usize);
    let h = (hi - lo) / n as f64;
    let mut logs = Vec::with_capacity(n * n);
    let mut coords = Vec::with_capacity(n * n);
    for a in 0..n {
        for b in 0..n {
            let (x1, x2) = (lo + (a as f64 + 0.5) * h, lo + (b as f64 + 0.5) * h);
            let x = DMatrix::from_row_slice(2, 1, &[x1, x2]);
            logs.push(teaching_log_score(&x, &target, model.prior(), model.alpha()).unwrap());
            coords.push((x1, x2));
        }
    }
    let z = log_sum_exp(&logs);
    let (mut m1, mut m2) = (0.0, 0.0);
    for (l, (x1, x2)) in logs.iter().zip(&coords) {
        let p = (l - z).exp();
        m1 += p * x1;
        m2 += p * x2;
    }

    let (samples, diagnostics) = run_chains(&model, &schedule(12)).unwrap();
    let n = samples.len() as f64;
    let s1 = samples.iter().map(|s| s.points[(0, 0)]).sum::<f64>() / n;
    let s2 = samples.iter().map(|s| s.points[(1, 0)]).sum::<f64>() / n;
    assert!((s1 - m1).abs() < 0.5 && (s2 - m2).abs() < 0.5, "sampled ({s1}, {s2}) vs grid ({m1}, {m2})");

    // a sampler, not an optimizer: the kept score trace goes down often
    for d in &diagnostics {
        let down = d.score_trace.windows(2).filter(|w| w[1] < w[0]).count();
        assert!(down as f64 >= 0.1 * (d.score_trace.len() - 1) as f64);
    }
}
