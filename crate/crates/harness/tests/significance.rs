use cvahedge_harness::{paired_t_test, stars, HarnessError};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn normals(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

#[test]
fn identical_samples_give_p_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = normals(100, &mut rng);
    let t = paired_t_test(&a, &a).unwrap();
    assert_eq!(t.p_value, 1.0);
    assert_eq!(t.stars(), "");
}

#[test]
fn five_sd_shift_is_highly_significant() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let b = normals(50, &mut rng);
    let a: Vec<f64> = b.iter().map(|x| x + 5.0).collect();
    let t = paired_t_test(&a, &b).unwrap();
    assert!(t.p_value < 0.001);
    assert_eq!(t.stars(), "***");
    let noise = normals(50, &mut rng);
    let a: Vec<f64> = b.iter().zip(&noise).map(|(x, e)| x + 5.0 + e).collect();
    assert!(paired_t_test(&a, &b).unwrap().p_value < 0.001);
}

#[test]
fn matches_student_t_reference_value() {
    // Differences (1, 2, 3, 4, 5): mean 3, sd √2.5, t = 3/√0.5, 4 dof.
    let a = [1.0, 2.0, 3.0, 4.0, 5.0];
    let t = paired_t_test(&a, &[0.0; 5]).unwrap();
    assert!((t.t - 3.0 / 0.5f64.sqrt()).abs() < 1e-12);
    assert!((t.p_value - 0.013_235_6).abs() < 1e-6, "{}", t.p_value);
    assert_eq!(t.stars(), "*");
}

#[test]
fn null_false_positive_rate_is_nominal() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let hits = (0..1000)
        .filter(|_| {
            let (a, b) = (normals(30, &mut rng), normals(30, &mut rng));
            paired_t_test(&a, &b).unwrap().p_value < 0.05
        })
        .count();
    assert!((30..=70).contains(&hits), "{hits} rejections of 1000");
}

#[test]
fn rejects_mismatched_or_tiny_samples() {
    assert!(matches!(paired_t_test(&[1.0, 2.0], &[1.0]), Err(HarnessError::LengthMismatch(2, 1))));
    assert!(paired_t_test(&[1.0], &[0.0]).is_err());
}

#[test]
fn star_thresholds() {
    assert_eq!(stars(0.0009), "***");
    assert_eq!(stars(0.001), "**");
    assert_eq!(stars(0.009), "**");
    assert_eq!(stars(0.049), "*");
    assert_eq!(stars(0.05), "");
}

proptest! {
    #[test]
    fn p_value_is_a_symmetric_probability(xs in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 2..40)) {
        let (a, b): (Vec<f64>, Vec<f64>) = xs.into_iter().unzip();
        let ab = paired_t_test(&a, &b).unwrap();
        let ba = paired_t_test(&b, &a).unwrap();
        prop_assert!((0.0..=1.0).contains(&ab.p_value));
        prop_assert!((ab.p_value - ba.p_value).abs() < 1e-12);
        prop_assert!((ab.mean_difference + ba.mean_difference).abs() < 1e-9);
    }
}
