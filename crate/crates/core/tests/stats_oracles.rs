mod common;

use common::grad::random;
use common::stats_oracles::*;
use dwi_denoise::analysis::*;

#[test]
fn wilcoxon_exact_equals_enumeration_for_every_sign_pattern() {
    for n in 1..=10usize {
        for tie_step in [1usize, 2] {
            for mask in 0u32..(1 << n) {
                let d: Vec<f64> = (0..n)
                    .map(|i| {
                        let mag = (i / tie_step + 1) as f64;
                        if mask >> i & 1 == 1 { mag } else { -mag }
                    })
                    .collect();
                let r = wilcoxon_signed_rank(&d, &vec![0.0; n]).unwrap();
                let oracle = brute_force_wilcoxon_p(&d);
                assert!((r.p_value - oracle).abs() < 1e-12, "n {n} mask {mask:b}: {} vs {oracle}", r.p_value);
            }
        }
    }
}

#[test]
fn wilcoxon_twelve_random_pairs() {
    let a = random(&[12], 3);
    let b = random(&[12], 4);
    let r = wilcoxon_signed_rank(a.data(), b.data()).unwrap();
    let d: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
    assert!((r.p_value - brute_force_wilcoxon_p(&d)).abs() < 1e-12);
}

#[test]
fn kappa_three_category_table() {
    let (a, b) = scores_from_table(&[&[2, 1, 0], &[1, 2, 1], &[0, 1, 2]]);
    // observed proportions /10; both marginals (0.3, 0.4, 0.3)
    // linear: sum w*O = 4 * 0.5 * 0.1 = 0.2
    //         sum w*E = 0.5 * 4 * 0.12 + 1.0 * 2 * 0.09 = 0.42
    let linear = 1.0 - 0.2 / 0.42;
    // quadratic: sum w*O = 4 * 0.25 * 0.1 = 0.1
    //            sum w*E = 0.25 * 4 * 0.12 + 1.0 * 2 * 0.09 = 0.30
    let quadratic = 1.0 - 0.1 / 0.30;
    let kl = weighted_cohens_kappa(&a, &b, 3, KappaWeighting::Linear).unwrap();
    let kq = weighted_cohens_kappa(&a, &b, 3, KappaWeighting::Quadratic).unwrap();
    assert!((kl - linear).abs() < 1e-12, "{kl} vs {linear}");
    assert!((kq - quadratic).abs() < 1e-12, "{kq} vs {quadratic}");
}

#[test]
fn kappa_of_shuffled_scores_is_near_zero() {
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    let a: Vec<usize> = (0..20_000).map(|_| rng.random_range(1..=5)).collect();
    let mut b = a.clone();
    b.shuffle(&mut rng);
    for w in [KappaWeighting::Linear, KappaWeighting::Quadratic] {
        assert!(weighted_cohens_kappa(&a, &b, 5, w).unwrap().abs() < 0.05);
    }
}

#[test]
fn bland_altman_hand_computation() {
    let r = bland_altman(&[1.0, 2.0, 4.0], &[0.5, 2.5, 3.0]).unwrap();
    // d = (0.5, -0.5, 1.0); bias 1/3; squared deviations 1/36 + 25/36 + 16/36
    let sd = (42.0f64 / 36.0 / 2.0).sqrt();
    assert!((r.bias - 1.0 / 3.0).abs() < 1e-12);
    assert!((r.sd - sd).abs() < 1e-12);
    assert!((r.loa_low - (1.0 / 3.0 - 1.96 * sd)).abs() < 1e-12);
    assert!((r.loa_high - (1.0 / 3.0 + 1.96 * sd)).abs() < 1e-12);
}

#[test]
fn ssim_matches_definition() {
    let x = random(&[20, 23], 1).map(|v| v.abs());
    let y = Tensor::from_fn(&[20, 23], |i| 0.7 * x.data()[i] + 0.2 * random(&[20, 23], 2).data()[i].abs());
    let l = y.max() - y.min();
    let fast = ssim(&x, &y).unwrap();
    let slow = ssim_oracle(&x, &y, 11, 1.5, 0.01, 0.03, l);
    assert!((fast - slow).abs() < 1e-6, "{fast} vs {slow}");
    assert!(fast < 1.0);
}

use dwi_denoise::Tensor;
