//! Gaussian policy sampling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cvahedge_trvo::*;

fn policy(init_std: f64) -> GaussianMlp {
    let mut p = GaussianMlp::new(3, &[10, 10], vec![0.2, 4.0], init_std, 3).unwrap();
    let w: Vec<f64> = p.params().iter().enumerate().map(|(i, x)| x + 0.05 * ((i as f64) * 0.7).sin()).collect();
    p.set_params(&w).unwrap();
    p
}

fn mean_action(p: &GaussianMlp, s: &[f64]) -> [f64; 2] {
    let mut eta = [0.0; 4];
    p.eta(s, &mut eta);
    [0.2 * eta[0], 4.0 * eta[1]]
}

#[test]
fn sample_mean_matches_policy_mean() {
    let p = policy(0.3);
    let s = [0.5, -1.0, 2.0];
    let mean = mean_action(&p, &s);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 100_000;
    let mut sum = [0.0; 2];
    let mut sq = [0.0; 2];
    for _ in 0..n {
        let (a, _) = policy_sample(&p, &s, &mut rng);
        for k in 0..2 {
            sum[k] += a[k];
            sq[k] += a[k] * a[k];
        }
    }
    for k in 0..2 {
        let m = sum[k] / n as f64;
        let sd = (sq[k] / n as f64 - m * m).sqrt();
        assert!((m - mean[k]).abs() < 3.0 * sd / (n as f64).sqrt(), "dim {k}: {m} vs {}", mean[k]);
    }
}

#[test]
fn small_std_collapses_to_the_mean() {
    let p = policy(1e-9);
    let s = [0.1, 0.2, 0.3];
    let mean = mean_action(&p, &s);
    let (a, _) = policy_sample(&p, &s, &mut ChaCha8Rng::seed_from_u64(2));
    for k in 0..2 {
        assert!((a[k] - mean[k]).abs() < 1e-7 * mean[k].abs().max(1.0));
    }
}

#[test]
fn returned_log_prob_is_the_density_of_the_draw() {
    let p = policy(0.2);
    let s = [1.0, 0.0, -1.0];
    let (a, lp) = policy_sample(&p, &s, &mut ChaCha8Rng::seed_from_u64(4));
    assert!((lp - p.log_prob(&s, &a)).abs() < 1e-12);
    let mean = mean_action(&p, &s);
    let log_std = p.params.log_std();
    let at_mean: f64 = (0..2)
        .map(|k| -log_std[k] - 0.5 * (2.0 * std::f64::consts::PI).ln() - [0.2f64, 4.0][k].ln())
        .sum();
    assert!((p.log_prob(&s, &mean) - at_mean).abs() < 1e-12);
}

#[test]
fn rejects_invalid_layouts() {
    assert!(GaussianMlp::new(3, &[100], vec![1.0], 0.1, 0).is_err());
    assert!(GaussianMlp::new(3, &[10], vec![0.0], 0.1, 0).is_err());
    assert!(GaussianMlp::new(3, &[10], vec![1.0], -0.1, 0).is_err());
    let mut p = GaussianMlp::new(3, &[10], vec![1.0], 0.1, 0).unwrap();
    assert!(p.set_params(&[0.0; 3]).is_err());
}
