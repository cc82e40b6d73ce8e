use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vcbench_core::nets::layers::logistic;
use vcbench_core::nets::{apply_output_mode, argmax, softmax, OutputMode, Released};
use vcbench_core::outputguard::{perturb_batch, perturb_outputs, DefenseScheme, NoiseSpace};

#[test]
fn softmax_is_shift_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..1000 {
        let n = rng.random_range(2..12);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-20.0..20.0)).collect();
        let a = rng.random_range(-100.0..100.0);
        let shifted: Vec<f64> = x.iter().map(|v| v + a).collect();
        let worst = softmax(&x).iter().zip(softmax(&shifted)).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(worst <= 1e-7, "shift {a}: {worst:e}");
    }
}

#[test]
fn sigmoid_round_trips_away_from_saturation() {
    for i in -400..=400 {
        let x = i as f64 / 40.0;
        let p = logistic(x);
        let back = (p / (1.0 - p)).ln();
        assert!((back - x).abs() < 1e-6, "{x} -> {back}");
    }
}

#[test]
fn argmax_release_reports_an_index() {
    assert_eq!(apply_output_mode(&[0.1, 3.0, -1.0], OutputMode::Argmax), Released::Index(1));
    // ties go to the smallest index
    assert_eq!(argmax(&[2.0, 2.0, 1.0]), 0);
}

#[test]
fn noisy_defenses_are_reproducible() {
    let z = [0.3, -1.2, 2.0, 0.0];
    for scheme in [
        DefenseScheme::Gaussian { sigma: 0.7, on: NoiseSpace::Logits },
        DefenseScheme::Laplace { b: 0.4, on: NoiseSpace::Logits },
        DefenseScheme::Gaussian { sigma: 0.05, on: NoiseSpace::Softmax },
    ] {
        let a = perturb_outputs(&z, &scheme, 11).unwrap();
        assert_eq!(a, perturb_outputs(&z, &scheme, 11).unwrap());
        assert_ne!(a, perturb_outputs(&z, &scheme, 12).unwrap());
    }
}

#[test]
fn batch_perturbation_matches_its_seed() {
    let logits = ndarray::Array2::from_shape_fn((20, 5), |(i, j)| ((i * 3 + j) % 7) as f64 - 3.0);
    let s = DefenseScheme::Laplace { b: 1.0, on: NoiseSpace::Logits };
    assert_eq!(perturb_batch(logits.view(), &s, 3).unwrap(), perturb_batch(logits.view(), &s, 3).unwrap());
    let hot = perturb_batch(logits.view(), &DefenseScheme::Argmax, 0).unwrap();
    for (row, z) in hot.rows().into_iter().zip(logits.rows()) {
        assert_eq!(row.sum(), 1.0);
        assert_eq!(row[argmax(z.as_slice().unwrap())], 1.0);
    }
}

#[test]
fn laplace_noise_has_the_right_spread() {
    // E|X| = b for a zero-mean Laplace variable
    let z = vec![0.0; 20_000];
    let b = 0.8;
    let noisy = perturb_outputs(&z, &DefenseScheme::Laplace { b, on: NoiseSpace::Logits }, 5).unwrap().into_vector().unwrap();
    let mean_abs = noisy.iter().map(|v| v.abs()).sum::<f64>() / z.len() as f64;
    assert!((mean_abs - b).abs() < 0.03, "{mean_abs}");
    let mean = noisy.iter().sum::<f64>() / z.len() as f64;
    assert!(mean.abs() < 0.03);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn softmax_keeps_the_argmax(x in prop::collection::vec(-30.0f64..30.0, 2..16)) {
        prop_assert_eq!(argmax(&softmax(&x)), argmax(&x));
    }

    #[test]
    fn softmax_is_a_distribution(x in prop::collection::vec(-50.0f64..50.0, 1..16)) {
        let p = softmax(&x);
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rounding_defense_keeps_the_argmax_unless_tied(x in prop::collection::vec(-5.0f64..5.0, 2..8), q in 1u32..5) {
        let p = softmax(&x);
        let r = perturb_outputs(&x, &DefenseScheme::Round { decimals: q }, 0).unwrap().into_vector().unwrap();
        let k = argmax(&x);
        // the top entry can only lose its lead by a rounding tie
        prop_assert!(r[k] >= r.iter().copied().fold(f64::NEG_INFINITY, f64::max) - 10f64.powi(-(q as i32)) - 1e-12);
        prop_assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(p.len() == r.len());
    }

    #[test]
    fn perturbation_is_reproducible(seed in any::<u64>(), sigma in 0.0f64..3.0) {
        let z = [1.0, -0.5, 0.25];
        let s = DefenseScheme::Gaussian { sigma, on: NoiseSpace::Logits };
        prop_assert_eq!(perturb_outputs(&z, &s, seed).unwrap(), perturb_outputs(&z, &s, seed).unwrap());
    }
}
