use ndarray::{array, Array1, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vcbench_core::objectives::ssim;
use vcbench_core::datahub::ImageShape;
use vcbench_core::riskmeter::{fit_gaussian_stats, reconstruction_risk, risk_terms, spearman, GaussianStats};

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

fn correlated_stats(d: usize, seed: u64) -> GaussianStats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = random_matrix(&mut rng, d, d);
    let sigma = m.dot(&m.t()) + Array2::<f64>::eye(d) * 0.1;
    let mu = Array1::from_shape_fn(d, |_| rng.random_range(-1.0..1.0));
    GaussianStats::from_moments(mu, sigma, 0.0, 0).unwrap()
}

#[test]
fn identity_statistics_give_euclidean_distance() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let stats = GaussianStats::identity(7);
    for _ in 0..20 {
        let a = Array1::from_shape_fn(7, |_| rng.random_range(-2.0..2.0));
        let b = Array1::from_shape_fn(7, |_| rng.random_range(-2.0..2.0));
        let euclid: f64 = (&a - &b).mapv(|v: f64| v * v).sum().sqrt();
        assert!((stats.mahalanobis(a.view(), b.view()) - euclid).abs() < 1e-10);
    }
}

#[test]
fn diagonal_covariance_closed_form() {
    let var = [4.0, 0.25, 9.0];
    let sigma = Array2::from_diag(&Array1::from(var.to_vec()));
    let stats = GaussianStats::from_moments(Array1::zeros(3), sigma, 0.0, 0).unwrap();
    let a = array![1.0, 2.0, 3.0];
    let b = array![-1.0, 1.5, 0.0];
    // (2/2)^2 + (0.5/0.5)^2 + (3/3)^2 = 3
    assert_eq!(stats.mahalanobis(a.view(), b.view()), 3f64.sqrt());
    let c = array![2.0, 0.0, 0.0];
    let o = array![0.0, 0.0, 0.0];
    assert_eq!(stats.mahalanobis(c.view(), o.view()), 1.0);
}

#[test]
fn ridge_is_added_to_the_diagonal() {
    let sigma = Array2::from_diag(&array![1.0, 3.0]);
    let stats = GaussianStats::from_moments(Array1::zeros(2), sigma, 1.0, 0).unwrap();
    let a = array![2.0, 4.0];
    let o = array![0.0, 0.0];
    // (2^2)/2 + (4^2)/4 = 6
    assert!((stats.mahalanobis(a.view(), o.view()) - 6f64.sqrt()).abs() < 1e-14);
}

#[test]
fn reconstructing_the_mean_gives_risk_one_exactly() {
    let stats = correlated_stats(6, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random_matrix(&mut rng, 10, 6);
    let mu = stats.mu().clone();
    let recon = Array2::from_shape_fn((10, 6), |(_, j)| mu[j]);
    assert_eq!(reconstruction_risk(x.view(), recon.view(), &stats, None).unwrap(), 1.0);
}

#[test]
fn risk_matches_a_scalar_hand_computation() {
    // 2-D covariance with a hand-written inverse
    let (s11, s12, s22) = (2.0, 0.6, 1.0);
    let det = s11 * s22 - s12 * s12;
    let inv = [[s22 / det, -s12 / det], [-s12 / det, s11 / det]];
    let mu = [0.3, -0.2];
    let stats = GaussianStats::from_moments(array![mu[0], mu[1]], array![[s11, s12], [s12, s22]], 0.0, 0).unwrap();
    let md = |a: [f64; 2], b: [f64; 2]| -> f64 {
        let d = [a[0] - b[0], a[1] - b[1]];
        (d[0] * (inv[0][0] * d[0] + inv[0][1] * d[1]) + d[1] * (inv[1][0] * d[0] + inv[1][1] * d[1])).sqrt()
    };
    let xs = [[1.0, 0.5], [-0.7, 0.9], [0.2, -1.4]];
    let rs = [[0.8, 0.4], [-0.1, 0.3], [0.25, -1.0]];
    let hand = xs.iter().zip(&rs).map(|(&x, &r)| md(x, mu) / md(x, r)).sum::<f64>() / 3.0;
    let x = Array2::from_shape_fn((3, 2), |(i, j)| xs[i][j]);
    let r = Array2::from_shape_fn((3, 2), |(i, j)| rs[i][j]);
    let got = reconstruction_risk(x.view(), r.view(), &stats, None).unwrap();
    assert!((got - hand).abs() < 1e-12, "{got} vs {hand}");
}

#[test]
fn perfect_reconstruction_hits_the_floor() {
    let stats = GaussianStats::identity(3);
    let x = array![[1.0, 0.0, 0.0]];
    let t = risk_terms(x.view(), x.view(), &stats, Some(0.5)).unwrap();
    assert_eq!(t, vec![2.0]);
}

#[test]
fn fitted_statistics_recover_mean_and_covariance() {
    let x = array![[1.0, 2.0], [3.0, 2.0], [2.0, 5.0]];
    let stats = fit_gaussian_stats(x.view(), Some(0.0)).unwrap();
    assert_eq!(stats.mu(), &array![2.0, 3.0]);
    let s = stats.sigma();
    assert!((s[[0, 0]] - 1.0).abs() < 1e-12);
    assert!((s[[1, 1]] - 3.0).abs() < 1e-12);
    assert!(s[[0, 1]].abs() < 1e-12);
    assert!(fit_gaussian_stats(array![[1.0, 2.0]].view(), None).is_err());
}

#[test]
fn singular_covariance_without_ridge_is_refused() {
    let sigma = array![[1.0, 1.0], [1.0, 1.0]];
    assert!(GaussianStats::from_moments(Array1::zeros(2), sigma.clone(), 0.0, 0).is_err());
    assert!(GaussianStats::from_moments(Array1::zeros(2), sigma, 1e-3, 0).is_ok());
}

#[test]
fn statistics_survive_a_round_trip() {
    let stats = correlated_stats(5, 3);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("stats.vctn");
    stats.save(&path).unwrap();
    let back = GaussianStats::load(&path).unwrap();
    assert_eq!(back.mu(), stats.mu());
    assert_eq!(back.sigma(), stats.sigma());
    assert_eq!(back.ridge(), stats.ridge());
}

/// Risk and SSIM must rank a series of progressively better
/// reconstructions the same way.
#[test]
fn risk_orders_reconstructions_like_ssim() {
    let shape = ImageShape::new(8, 8, 1);
    let d = shape.len();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let base = Array2::from_shape_fn((400, d), |(i, j)| {
        let t = (i % 7) as f64 / 7.0;
        0.5 + 0.3 * ((j as f64 * 0.3 + t * 6.0).sin()) + rng.random_range(-0.05..0.05)
    });
    let stats = fit_gaussian_stats(base.view(), None).unwrap();
    let x = base.slice(ndarray::s![..40, ..]).to_owned();
    let mu = stats.mu().clone();
    let noise = Array2::from_shape_fn(x.dim(), |_| rng.random_range(-0.05..0.05));
    let (mut risks, mut ssims) = (Vec::new(), Vec::new());
    for step in 0..8 {
        // checkpoint-like series: further from the mean, less noise
        let t = step as f64 / 7.0;
        let recon = Array2::from_shape_fn(x.dim(), |(i, j)| mu[j] + t * (x[[i, j]] - mu[j]) + (1.0 - t) * noise[[i, j]]);
        risks.push(reconstruction_risk(x.view(), recon.view(), &stats, None).unwrap());
        let s = (0..x.nrows())
            .map(|i| ssim(x.row(i).as_slice().unwrap(), recon.row(i).as_slice().unwrap(), shape).unwrap())
            .sum::<f64>()
            / x.nrows() as f64;
        ssims.push(s);
    }
    let rho = spearman(&risks, &ssims);
    assert!(rho > 0.7, "spearman {rho}: R {risks:?} SSIM {ssims:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn mahalanobis_is_a_metric(seed in any::<u64>()) {
        let stats = correlated_stats(4, seed % 5);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_matrix(&mut rng, 3, 4);
        let (a, b, c) = (p.row(0), p.row(1), p.row(2));
        let ab = stats.mahalanobis(a, b);
        prop_assert!(stats.mahalanobis(a, a).abs() < 1e-12);
        prop_assert!((ab - stats.mahalanobis(b, a)).abs() < 1e-12);
        prop_assert!(ab >= 0.0);
        prop_assert!(ab <= stats.mahalanobis(a, c) + stats.mahalanobis(c, b) + 1e-12);
    }

    #[test]
    fn mahalanobis_is_translation_invariant(seed in any::<u64>(), shift in -3.0f64..3.0) {
        let stats = correlated_stats(3, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_matrix(&mut rng, 2, 3);
        let q = p.mapv(|v| v + shift);
        let d1 = stats.mahalanobis(p.row(0), p.row(1));
        let d2 = stats.mahalanobis(q.row(0), q.row(1));
        prop_assert!((d1 - d2).abs() < 1e-9 * d1.max(1.0));
    }
}
